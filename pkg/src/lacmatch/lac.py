"""Local adaptive clustering: label clustering, template segmentation,
the recent-template cache, soft voting and the per-frame pipeline."""

from __future__ import annotations

import json
import logging
import math
import struct
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from lacmatch.features import DescriptorSet, Keypoints, detect_keypoints, describe_brief, describe_beblid
from lacmatch.features.beblid import BeblidModel
from lacmatch.homography import HomographyConfig, RobustEstimate, estimate, project_points
from lacmatch.imagecore import GrayImage, Point2, compute_integral
from lacmatch.matching import GmsConfig, Matches, brute_force_match, gms_filter
from lacmatch.topology import LabelTopology, label_support, refine_labels_polar

log = logging.getLogger(__name__)


class InfeasibleCluster(ValueError):
    def __init__(self, cluster_id: int, message: str):
        super().__init__(f"cluster {cluster_id}: {message}")
        self.cluster_id = cluster_id


class ClusterCountError(ValueError):
    """More clusters requested than there are distinct points."""


# -- configuration ----------------------------------------------------------

@dataclass(frozen=True)
class FeatureConfig:
    fast_threshold: int = 20
    max_keypoints: int = 2500
    descriptor: str = "brief"
    beblid_model: BeblidModel | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class LacConfig:
    k: int | None = None
    template_size: tuple[int, int] | None = None
    history: int = 3
    beta: float = 0.2
    lam: float = 0.5
    use_local_area: bool = True
    min_inliers: int = 10
    support_radius: float = 50.0
    cross_check: bool = True


@dataclass(frozen=True)
class PipelineConfig:
    features: FeatureConfig = FeatureConfig()
    gms: GmsConfig = GmsConfig()
    homography: HomographyConfig = HomographyConfig()
    lac: LacConfig = LacConfig()


# -- domain types -----------------------------------------------------------

@dataclass(frozen=True)
class Label:
    id: int
    name: str
    position: Point2


@dataclass
class Template:
    index: int
    rect: tuple[int, int, int, int]
    center: Point2
    labels: tuple[int, ...]
    keypoints: Keypoints
    descriptors: DescriptorSet

    @property
    def dims(self) -> tuple[int, int]:
        return self.rect[2], self.rect[3]

    def contains(self, p) -> bool:
        x, y, w, h = self.rect
        px, py = (p.x, p.y) if isinstance(p, Point2) else p
        return x <= px < x + w and y <= py < y + h


class LocalArea:
    """Template indices chosen for the most recent frames, oldest first."""

    def __init__(self, capacity: int = 3, history=()):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.history = deque(history, maxlen=capacity)

    def push(self, index: int) -> None:
        self.history.append(index)

    def frequency(self, index: int) -> int:
        return sum(1 for h in self.history if h == index)

    def recency(self, index: int) -> int:
        """Position of the latest use (higher is more recent), -1 if unused."""
        for pos in range(len(self.history) - 1, -1, -1):
            if self.history[pos] == index:
                return pos
        return -1

    def __len__(self):
        return len(self.history)

    def __repr__(self):
        return f"LocalArea({list(self.history)}, capacity={self.capacity})"


@dataclass
class FrameFeatures:
    keypoints: Keypoints
    descriptors: DescriptorSet
    dims: tuple[int, int]


@dataclass
class FrameResult:
    frame_idx: int
    status: str
    chosen_template: int | None = None
    homography: np.ndarray | None = None
    label_positions: dict = field(default_factory=dict)
    raw_positions: dict = field(default_factory=dict)
    match_count: int = 0
    inlier_count: int = 0
    candidates_scored: int = 0
    stale: bool = False

    @property
    def ok(self) -> bool:
        return self.status == "ok"


# -- k-means ----------------------------------------------------------------

class KMeansResult(NamedTuple):
    centers: np.ndarray
    assignment: np.ndarray
    objective: list


def _objective(pts, centers, assignment) -> float:
    return float(((pts - centers[assignment]) ** 2).sum())


def _sq_dists(pts, centers):
    return ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def kmeans_pp_init(pts: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [pts[rng.integers(len(pts))]]
    d2 = ((pts - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            break
        centers.append(pts[rng.choice(len(pts), p=d2 / total)])
        d2 = np.minimum(d2, ((pts - centers[-1]) ** 2).sum(axis=1))
    return np.array(centers, dtype=np.float64)


def kmeans(points, k: int, max_iter: int = 100, seed: int = 0) -> KMeansResult:
    """Lloyd iterations from k-means++ seeds.

    ``objective`` holds the within-cluster sum of squares after seeding and
    after every iteration; it never increases.
    """
    pts = np.asarray([tuple(p) for p in points], dtype=np.float64).reshape(-1, 2)
    if k < 1:
        raise ValueError("k must be >= 1")
    distinct = len(np.unique(pts, axis=0))
    if k > distinct:
        raise ClusterCountError(f"k={k} exceeds the {distinct} distinct points")
    rng = np.random.default_rng(seed)
    centers = kmeans_pp_init(pts, k, rng)
    assignment = np.argmin(_sq_dists(pts, centers), axis=1)
    history = [_objective(pts, centers, assignment)]
    for _ in range(max_iter):
        for c in range(k):
            if not (assignment == c).any():
                # re-seed an empty cluster on the point worst served by its centre
                far = int(np.argmax(((pts - centers[assignment]) ** 2).sum(axis=1)))
                centers[c] = pts[far]
                assignment = np.argmin(_sq_dists(pts, centers), axis=1)
        new_centers = np.array([pts[assignment == c].mean(axis=0) if (assignment == c).any() else centers[c]
                                for c in range(k)])
        new_assignment = np.argmin(_sq_dists(pts, new_centers), axis=1)
        centers = new_centers
        history.append(_objective(pts, centers, new_assignment))
        if np.array_equal(new_assignment, assignment):
            assignment = new_assignment
            break
        assignment = new_assignment
    return KMeansResult(centers, assignment, history)


def elbow_scan(points, k_max: int = 8, seed: int = 0) -> list[tuple[int, float]]:
    pts = np.asarray([tuple(p) for p in points], dtype=np.float64).reshape(-1, 2)
    k_max = min(k_max, len(np.unique(pts, axis=0)))
    return [(k, kmeans(pts, k, seed=seed).objective[-1]) for k in range(1, k_max + 1)]


def default_k(n_labels: int) -> int:
    return max(1, math.ceil(n_labels / 4))


def default_template_size(panorama_dims, k: int) -> tuple[int, int]:
    w, h = panorama_dims
    per = math.ceil(math.sqrt(k))
    return min(w, max(256, math.ceil(w / per))), min(h, max(256, math.ceil(h / per)))


# -- templates --------------------------------------------------------------

def compute_features(img: GrayImage, cfg: FeatureConfig) -> FrameFeatures:
    kps = detect_keypoints(img, cfg.fast_threshold, cfg.max_keypoints)
    if cfg.descriptor == "beblid":
        if cfg.beblid_model is None:
            raise ValueError("beblid descriptor requested without a model")
        desc = describe_beblid(compute_integral(img), kps, cfg.beblid_model)
    elif cfg.descriptor == "brief":
        desc = describe_brief(img, kps)
    else:
        raise ValueError(f"unknown descriptor {cfg.descriptor!r}")
    return FrameFeatures(kps, desc, (img.width, img.height))


def _place(center: float, size: int, lo_label: float, hi_label: float, limit: int, cid: int) -> int:
    if hi_label - lo_label >= size:
        raise InfeasibleCluster(cid, f"labels span {hi_label - lo_label:.1f}px, template side is {size}px")
    start = int(round(center - size / 2))
    start = min(max(start, 0), limit - size)
    start = min(start, int(math.floor(lo_label)))
    start = max(start, int(math.floor(hi_label)) - size + 1)
    return min(max(start, 0), limit - size)


def segment_templates(panorama: GrayImage, labels, k: int | None = None, template_size=None,
                      feature_cfg: FeatureConfig = FeatureConfig(), seed: int = 0) -> list[Template]:
    """One template per k-means cluster of label positions.

    Each rect is centred on its cluster mean, clamped to the panorama, then
    shifted (never resized) just enough to contain all member labels.
    """
    labels = list(labels)
    if not labels:
        raise ValueError("no labels")
    k = default_k(len(labels)) if k is None else k
    tw, th = template_size or default_template_size((panorama.width, panorama.height), k)
    if tw > panorama.width or th > panorama.height:
        raise ValueError(f"template {tw}x{th} larger than panorama {panorama.width}x{panorama.height}")
    pts = np.array([(lab.position.x, lab.position.y) for lab in labels])
    if (pts[:, 0] < 0).any() or (pts[:, 1] < 0).any() or (pts[:, 0] >= panorama.width).any() \
            or (pts[:, 1] >= panorama.height).any():
        raise ValueError("label outside panorama")
    km = kmeans(pts, k, seed=seed)
    templates = []
    for cid in range(k):
        members = np.nonzero(km.assignment == cid)[0]
        mx, my = km.centers[cid]
        x = _place(mx, tw, pts[members, 0].min(), pts[members, 0].max(), panorama.width, cid)
        y = _place(my, th, pts[members, 1].min(), pts[members, 1].max(), panorama.height, cid)
        crop = panorama.crop(x, y, tw, th)
        feats = compute_features(crop, feature_cfg)
        templates.append(Template(cid, (x, y, tw, th), Point2(float(mx), float(my)),
                                  tuple(labels[i].id for i in members), feats.keypoints, feats.descriptors))
    return templates


def whole_panorama_template(panorama: GrayImage, labels, feature_cfg: FeatureConfig = FeatureConfig()) -> Template:
    feats = compute_features(panorama, feature_cfg)
    c = Point2((panorama.width - 1) / 2, (panorama.height - 1) / 2)
    return Template(0, (0, 0, panorama.width, panorama.height), c,
                    tuple(lab.id for lab in labels), feats.keypoints, feats.descriptors)


def _overlaps(a, b) -> bool:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    return ax < bx + bw and bx < ax + aw and ay < by + bh and by < ay + ah


def template_neighbours(templates, index: int) -> list[int]:
    """Templates overlapping ``index`` plus its nearest centre, nearest first."""
    by_idx = {t.index: t for t in templates}
    me = by_idx[index]
    others = [t for t in templates if t.index != index]
    if not others:
        return []

    def dist(t):
        return math.hypot(t.center.x - me.center.x, t.center.y - me.center.y)

    nearest = min(others, key=lambda t: (dist(t), t.index))
    picked = [t for t in others if t is nearest or _overlaps(t.rect, me.rect)]
    return [t.index for t in sorted(picked, key=lambda t: (dist(t), t.index))]


def candidate_set(local_area: LocalArea, all_templates) -> list[int]:
    """Templates worth scoring for the next frame.

    Cold start scores everything; otherwise the recently chosen templates,
    most frequent then most recent first, followed by their neighbours.
    """
    templates = list(all_templates)
    if len(local_area) == 0:
        return [t.index for t in templates]
    freq = Counter(local_area.history)
    recent = sorted(freq, key=lambda i: (-freq[i], -local_area.recency(i), i))
    out = list(recent)
    for h in recent:
        for nb in template_neighbours(templates, h):
            if nb not in out:
                out.append(nb)
    return out


# -- voting -----------------------------------------------------------------

def score_candidates(frame: FrameFeatures, candidates, gms_cfg: GmsConfig = GmsConfig(),
                     cross_check: bool = True) -> dict:
    """GMS-filtered matches of the frame against every candidate template."""
    kept = {}
    for t in candidates:
        if len(t.descriptors) == 0 or len(frame.descriptors) == 0:
            kept[t.index] = Matches()
            continue
        raw = brute_force_match(frame.descriptors, t.descriptors, cross_check)
        kept[t.index], _ = gms_filter(raw, frame.keypoints, t.keypoints, frame.dims, t.dims, gms_cfg)
    return kept


def vote(counts: dict, local_area: LocalArea, beta: float = 0.2):
    """History-weighted argmax of match counts; ``None`` when every count is 0."""
    if not counts or max(counts.values()) == 0:
        return None
    cap = local_area.capacity

    def key(idx):
        score = counts[idx] * (1.0 + beta * local_area.frequency(idx) / cap)
        return (round(score, 9), local_area.recency(idx), -idx)

    return max(counts, key=key)


def soft_vote(frame_features: FrameFeatures, candidates, local_area: LocalArea,
              match_cfg: GmsConfig = GmsConfig(), beta: float = 0.2, cross_check: bool = True):
    """Returns ``(winner, counts)``; winner is ``None`` if nothing matched."""
    if not candidates:
        raise ValueError("no candidate templates")
    kept = score_candidates(frame_features, candidates, match_cfg, cross_check)
    counts = {i: len(m) for i, m in kept.items()}
    return vote(counts, local_area, beta), counts


# -- pipeline ---------------------------------------------------------------

class LabelProjector:
    """Sequential per-frame matcher holding the recent-template state."""

    def __init__(self, templates, labels, cfg: PipelineConfig = PipelineConfig(),
                 topology: LabelTopology | None = None, refine: bool = True):
        self.templates = list(templates)
        self.by_index = {t.index: t for t in self.templates}
        self.labels = {lab.id: lab for lab in labels}
        self.cfg = cfg
        self.topology = topology
        self.refine = refine and topology is not None and cfg.lac.lam > 0
        self.local_area = LocalArea(cfg.lac.history)
        self.previous: FrameResult | None = None
        self.frame_idx = 0

    def _no_match(self, idx: int, scored: int) -> FrameResult:
        prev = self.previous
        res = FrameResult(idx, "no_match", candidates_scored=scored, stale=True)
        if prev is not None:
            res.label_positions = dict(prev.label_positions)
            res.raw_positions = dict(prev.raw_positions)
        return res

    def process(self, frame: GrayImage) -> FrameResult:
        idx = self.frame_idx
        self.frame_idx += 1
        res = match_frame(frame, self.local_area, self.templates, self.cfg, self.labels,
                          self.topology if self.refine else None, idx)
        if res.ok:
            self.previous = res
            return res
        stale = self._no_match(idx, res.candidates_scored)
        return stale


def match_frame(frame: GrayImage, state: LocalArea, templates, cfg: PipelineConfig = PipelineConfig(),
                labels: dict | None = None, topology: LabelTopology | None = None,
                frame_idx: int = 0) -> FrameResult:
    """Match one frame: vote a template, fit its homography, project its labels.

    ``state`` is only updated on success.
    """
    templates = list(templates)
    by_index = {t.index: t for t in templates}
    feats = compute_features(frame, cfg.features)
    cand_idx = candidate_set(state, templates) if cfg.lac.use_local_area else [t.index for t in templates]
    candidates = [by_index[i] for i in cand_idx]
    fail = FrameResult(frame_idx, "no_match", candidates_scored=len(candidates))
    if len(feats.keypoints) < 4:
        return fail
    kept = score_candidates(feats, candidates, cfg.gms, cfg.lac.cross_check)
    counts = {i: len(m) for i, m in kept.items()}
    winner = vote(counts, state, cfg.lac.beta)
    if winner is None or counts[winner] < max(4, cfg.lac.min_inliers):
        return fail
    tpl = by_index[winner]
    matches = kept[winner]
    est: RobustEstimate = estimate(matches, feats.keypoints, tpl.keypoints, cfg.homography)
    if not est.ok or est.inlier_count < cfg.lac.min_inliers:
        return fail
    h = est.homography

    members = tpl.labels if labels is None else [i for i in tpl.labels if i in labels]
    ox, oy = tpl.rect[0], tpl.rect[1]
    if labels is not None and members:
        local = np.array([(labels[i].position.x - ox, labels[i].position.y - oy) for i in members])
        proj = project_points(h, local)
        if not np.isfinite(proj).all():
            return fail
        raw = {lid: Point2(float(x), float(y)) for lid, (x, y) in zip(members, proj)}
    else:
        raw = {}
    positions = raw
    if topology is not None and len(raw) >= 2:
        inlier_xy = feats.keypoints.xy[matches.query_idx[est.inlier_mask]]
        support = label_support(raw, inlier_xy, cfg.lac.support_radius)
        positions = refine_labels_polar(raw, topology, support, cfg.lac.lam)
    state.push(winner)
    return FrameResult(frame_idx, "ok", winner, h, positions, raw, len(matches), est.inlier_count,
                       len(candidates))


# -- persistence ------------------------------------------------------------

CACHE_MAGIC = b"LACT"
CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sHHI")
_KP_RECORD = struct.Struct("<ffff")


def write_feature_blob(path, keypoints: Keypoints, descriptors: DescriptorSet) -> None:
    buf = bytearray(_CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, descriptors.length, len(keypoints)))
    for i in range(len(keypoints)):
        x, y = keypoints.xy[i]
        buf += _KP_RECORD.pack(x, y, keypoints.response[i], keypoints.angle[i])
        buf += descriptors.packed[i].tobytes()
    Path(path).write_bytes(bytes(buf))


def read_feature_blob(path):
    raw = Path(path).read_bytes()
    magic, version, length, count = _CACHE_HEADER.unpack_from(raw, 0)
    if magic != CACHE_MAGIC or version != CACHE_VERSION:
        raise ValueError(f"{path}: not a template feature blob")
    nbytes = math.ceil(length / 8)
    rec = _KP_RECORD.size + nbytes
    if len(raw) != _CACHE_HEADER.size + count * rec:
        raise ValueError(f"{path}: truncated")
    body = np.frombuffer(raw, np.uint8, offset=_CACHE_HEADER.size).reshape(count, rec)
    kp = body[:, :_KP_RECORD.size].copy().view("<f4").astype(np.float64)
    desc = body[:, _KP_RECORD.size:].copy()
    return Keypoints(kp[:, 0:2], kp[:, 2], kp[:, 3]), DescriptorSet(desc.reshape(count, nbytes), length)


def save_templates(directory, templates, labels, *, k: int, seed: int, panorama: str | None = None,
                   descriptor: str = "brief", extra: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for t in templates:
        blob = f"template_{t.index:03d}.lact"
        write_feature_blob(directory / blob, t.keypoints, t.descriptors)
        entries.append({"index": t.index, "rect": list(t.rect), "center": [t.center.x, t.center.y],
                        "labels": list(t.labels), "blob": blob, "keypoints": len(t.keypoints)})
    manifest = {
        "format": "lacmatch-templates", "version": CACHE_VERSION, "k": k, "seed": seed,
        "panorama": panorama, "descriptor": descriptor,
        "labels": [{"id": lab.id, "name": lab.name, "x": lab.position.x, "y": lab.position.y} for lab in labels],
        "templates": entries,
    }
    if extra:
        manifest.update(extra)
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_templates(directory):
    """Returns ``(templates, labels, manifest)``."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    labels = [Label(int(d["id"]), str(d["name"]), Point2(float(d["x"]), float(d["y"]))) for d in manifest["labels"]]
    templates = []
    for e in manifest["templates"]:
        kps, desc = read_feature_blob(directory / e["blob"])
        templates.append(Template(int(e["index"]), tuple(int(v) for v in e["rect"]), Point2(*e["center"]),
                                  tuple(int(v) for v in e["labels"]), kps, desc))
    return templates, labels, manifest


def load_labels(path):
    """Labels file -> (panorama path or None, labels)."""
    path = Path(path)
    doc = json.loads(path.read_text())
    labels = [Label(int(d["id"]), str(d.get("name", d["id"])), Point2(float(d["x"]), float(d["y"])))
              for d in doc["labels"]]
    if len({lab.id for lab in labels}) != len(labels):
        raise ValueError(f"{path}: duplicate label ids")
    pano = doc.get("panorama")
    if pano is not None:
        pano = Path(pano)
        if not pano.is_absolute():
            pano = path.parent / pano
    return pano, labels
