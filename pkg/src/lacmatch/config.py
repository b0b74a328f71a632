"""Run configuration: INI-style ``key = value`` file with one section per module.

Example::

    [features]
    fast_threshold = 20
    max_keypoints = 2500
    descriptor = beblid
    beblid_model = default

    [lac]
    k = 4
    template_size = 800x600

Command-line flags are applied on top of whatever the file sets.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from lacmatch.homography import HomographyConfig
from lacmatch.lac import FeatureConfig, LacConfig, PipelineConfig
from lacmatch.matching import GmsConfig


class ConfigError(ValueError):
    pass


@dataclass
class Paths:
    panorama: str | None = None
    labels: str | None = None
    frames: str | None = None
    cache: str | None = None
    out: str = "out"


@dataclass
class FeatureSection:
    fast_threshold: int = 20
    max_keypoints: int = 2500
    descriptor: str = "auto"          # brief, beblid, or beblid when a model is given
    beblid_model: str | None = None   # path, or "default" for the bundled model


@dataclass
class RunConfig:
    paths: Paths = field(default_factory=Paths)
    features: FeatureSection = field(default_factory=FeatureSection)
    gms: GmsConfig = field(default_factory=GmsConfig)
    homography: HomographyConfig = field(default_factory=HomographyConfig)
    lac: LacConfig = field(default_factory=LacConfig)
    seed: int = 0
    reps: int = 10

    def validate(self) -> None:
        f = self.features
        if f.max_keypoints < 100:
            raise ConfigError("features.max_keypoints must be >= 100")
        if not 0 <= f.fast_threshold <= 255:
            raise ConfigError("features.fast_threshold must lie in [0, 255]")
        if f.descriptor not in ("auto", "brief", "beblid"):
            raise ConfigError(f"features.descriptor: unknown value {f.descriptor!r}")
        if self.homography.estimator not in ("ransac", "degensac"):
            raise ConfigError(f"homography.estimator: unknown value {self.homography.estimator!r}")
        if self.homography.reproj_tol <= 0 or not 0 < self.homography.confidence < 1:
            raise ConfigError("homography.reproj_tol must be > 0 and confidence in (0, 1)")
        if self.lac.history < 1 or not 0 <= self.lac.lam <= 1 or self.lac.beta < 0:
            raise ConfigError("lac.history >= 1, lac.lam in [0, 1] and lac.beta >= 0 are required")
        if self.lac.k is not None and self.lac.k < 1:
            raise ConfigError("lac.k must be >= 1")
        if self.gms.grid_rows < 1 or self.gms.grid_cols < 1:
            raise ConfigError("gms grid must have at least one cell")
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")

    @property
    def descriptor(self) -> str:
        if self.features.descriptor == "auto":
            return "beblid" if self.features.beblid_model else "brief"
        return self.features.descriptor

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def pipeline(self, beblid_model=None) -> PipelineConfig:
        feats = FeatureConfig(self.features.fast_threshold, self.features.max_keypoints, self.descriptor,
                              beblid_model)
        return PipelineConfig(feats, self.gms, dataclasses.replace(self.homography, seed=self.seed), self.lac)


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise ConfigError(f"expected WIDTHxHEIGHT, got {text!r}") from None


def _coerce(section: str, key: str, raw, current):
    """Convert ``raw`` to the type of the field's current/default value."""
    if raw is None:
        return None
    if isinstance(raw, str):
        raw = raw.strip()
        if raw.lower() in ("", "none", "null"):
            return None
    try:
        if key == "template_size":
            if isinstance(raw, (list, tuple)):
                return int(raw[0]), int(raw[1])
            return _parse_size(raw)
        if isinstance(current, bool):
            if isinstance(raw, bool):
                return raw
            lowered = str(raw).lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(current, int) or key in ("k",):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r}") from None
    return raw


_SECTIONS = ("paths", "features", "gms", "homography", "lac")


def apply(cfg: RunConfig, section: str, values: dict) -> RunConfig:
    """Return ``cfg`` with ``values`` written into ``section`` (``run`` for seed/reps)."""
    if section == "run":
        out = cfg
        for k, v in values.items():
            if k not in ("seed", "reps"):
                raise ConfigError(f"run.{k}: unknown key")
            out = dataclasses.replace(out, **{k: _coerce("run", k, v, getattr(out, k))})
        return out
    if section not in _SECTIONS:
        raise ConfigError(f"unknown section [{section}]")
    obj = getattr(cfg, section)
    known = {f.name for f in dataclasses.fields(obj)}
    updates = {}
    for k, v in values.items():
        if k not in known:
            raise ConfigError(f"{section}.{k}: unknown key")
        updates[k] = _coerce(section, k, v, getattr(obj, k))
    return dataclasses.replace(cfg, **{section: dataclasses.replace(obj, **updates)})


def load_config(path) -> RunConfig:
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with path.open() as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = RunConfig()
    for section in parser.sections():
        cfg = apply(cfg, section, dict(parser.items(section)))
    return cfg


def from_dict(doc: dict) -> RunConfig:
    """Inverse of :meth:`RunConfig.to_dict`, used when replaying a run manifest."""
    cfg = RunConfig()
    for section in _SECTIONS:
        if section in doc:
            cfg = apply(cfg, section, doc[section])
    return apply(cfg, "run", {k: doc[k] for k in ("seed", "reps") if k in doc})
