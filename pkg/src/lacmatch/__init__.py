"""Label projection from panorama templates into video frames."""

__version__ = "0.1.0"
