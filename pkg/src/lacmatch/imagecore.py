"""Grayscale rasters with their summed-area tables, plus 2-D point helpers.

Pixel centers sit on integer coordinates. A box of side ``s`` around pixel
``p`` covers ``[p - s // 2, p - s // 2 + s)`` on both axes, which is
symmetric for odd ``s``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


class BoxOutOfBounds(ValueError):
    """Raised when a box query leaves the image."""


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")

    def __iter__(self):
        yield self.x
        yield self.y


class GrayImage:
    """8-bit single channel image, row-major ``data[y, x]``."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.asarray(data)
        if arr.ndim != 2:
            raise ValueError(f"expected 2-D array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if arr.dtype != np.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise ValueError("intensities must lie in [0, 255]")
            arr = np.rint(arr).astype(np.uint8)
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    def __setattr__(self, name, value):
        raise AttributeError("GrayImage is immutable")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def crop(self, x: int, y: int, w: int, h: int) -> "GrayImage":
        if x < 0 or y < 0 or x + w > self.width or y + h > self.height:
            raise BoxOutOfBounds(f"crop ({x},{y},{w},{h}) outside {self.width}x{self.height}")
        return GrayImage(self.data[y:y + h, x:x + w].copy())

    def __eq__(self, other):
        return isinstance(other, GrayImage) and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"GrayImage({self.width}x{self.height})"


class IntegralImage:
    """Summed-area table with a zero first row and column.

    ``table[y, x]`` is the sum of all source pixels with row < y and col < x.
    """

    __slots__ = ("table",)

    def __init__(self, table: np.ndarray):
        self.table = table

    @property
    def width(self) -> int:
        return self.table.shape[1] - 1

    @property
    def height(self) -> int:
        return self.table.shape[0] - 1

    def box_sum(self, x0: int, y0: int, x1: int, y1: int) -> int:
        """Sum over the half-open box ``[x0, x1) x [y0, y1)``."""
        if x0 < 0 or y0 < 0 or x1 > self.width or y1 > self.height or x1 < x0 or y1 < y0:
            raise BoxOutOfBounds(f"box ({x0},{y0})-({x1},{y1}) outside {self.width}x{self.height}")
        t = self.table
        return int(t[y1, x1] - t[y0, x1] - t[y1, x0] + t[y0, x0])


def compute_integral(img: GrayImage) -> IntegralImage:
    h, w = img.shape
    table = np.zeros((h + 1, w + 1), dtype=np.int64)
    np.cumsum(np.cumsum(img.data, axis=0, dtype=np.int64), axis=1, out=table[1:, 1:])
    table.setflags(write=False)
    return IntegralImage(table)


def box_origin(c: int, s: int) -> int:
    return c - s // 2


def box_mean(ii: IntegralImage, center, s: int) -> float:
    """Mean intensity of the ``s x s`` box around ``center``."""
    if s < 1:
        raise ValueError("box side must be >= 1")
    cx, cy = (int(round(v)) for v in center)
    x0, y0 = box_origin(cx, s), box_origin(cy, s)
    return ii.box_sum(x0, y0, x0 + s, y0 + s) / (s * s)


def box_means(ii: IntegralImage, cx: np.ndarray, cy: np.ndarray, s) -> np.ndarray:
    """Vectorised :func:`box_mean` over integer centre arrays (broadcastable)."""
    s = np.asarray(s, dtype=np.int64)
    cx = np.asarray(cx, dtype=np.int64)
    cy = np.asarray(cy, dtype=np.int64)
    x0 = cx - s // 2
    y0 = cy - s // 2
    x1 = x0 + s
    y1 = y0 + s
    if (x0.min() < 0 or y0.min() < 0 or x1.max() > ii.width or y1.max() > ii.height):
        raise BoxOutOfBounds("box query leaves the image")
    t = ii.table
    total = t[y1, x1] - t[y0, x1] - t[y1, x0] + t[y0, x0]
    return total / (s * s)


def luma(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luma, rounded to nearest."""
    rgb = rgb.astype(np.float64)
    y = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return np.clip(np.floor(y + 0.5), 0, 255).astype(np.uint8)


def load_image(path) -> GrayImage:
    """Read a PGM (P5) or PNG file as grayscale."""
    path = Path(path)
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I", "1"):
            arr = np.asarray(im.convert("L"))
        else:
            arr = luma(np.asarray(im.convert("RGB")))
    return GrayImage(arr)


def save_image(img: GrayImage, path) -> None:
    Image.fromarray(img.data).save(path)
