"""Boosted box-difference binary descriptor (BEBLID-style).

Each weak learner compares the mean intensity of two equal boxes placed
around the keypoint (offsets steered by the keypoint angle) against a
threshold. Learners are picked greedily with AdaBoost on patch pairs and
share one weight after training, so the descriptor is a plain bitstring.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp

from lacmatch.features.brief import _rotate
from lacmatch.features.descriptors import BinaryDescriptor, DescriptorSet, Keypoint, Keypoints
from lacmatch.imagecore import GrayImage, IntegralImage, box_means, compute_integral

log = logging.getLogger(__name__)

MAGIC = b"LACB"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHHI")
_RECORD = struct.Struct("<hhhhHff")

ALPHA_CAP = 10.0


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class BeblidWeakLearner:
    p1: tuple[int, int]
    p2: tuple[int, int]
    s: int
    threshold: float
    alpha: float = 1.0

    def __post_init__(self):
        if self.s < 1:
            raise ValueError("box side must be >= 1")
        if not np.isfinite(self.alpha):
            raise ValueError("alpha must be finite")

    def fits(self, patch_side: int) -> bool:
        c = patch_side // 2
        for px, py in (self.p1, self.p2):
            for v in (px, py):
                lo = c + v - self.s // 2
                if lo < 0 or lo + self.s > patch_side:
                    return False
        return True


@dataclass(frozen=True)
class BeblidModel:
    learners: tuple[BeblidWeakLearner, ...]
    patch_side: int = 32
    gamma: float = 1.0
    loss_history: tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if len(self.learners) < 1:
            raise ValueError("a model needs at least one weak learner")
        for wl in self.learners:
            if not wl.fits(self.patch_side):
                raise ValueError(f"learner {wl} does not fit a {self.patch_side}px patch")

    @property
    def K(self) -> int:
        return len(self.learners)

    def arrays(self):
        p1 = np.array([wl.p1 for wl in self.learners], dtype=np.int64)
        p2 = np.array([wl.p2 for wl in self.learners], dtype=np.int64)
        s = np.array([wl.s for wl in self.learners], dtype=np.int64)
        t = np.array([wl.threshold for wl in self.learners], dtype=np.float64)
        return p1, p2, s, t


@dataclass(frozen=True)
class PatchPairSample:
    x: GrayImage
    y: GrayImage
    label: int

    def __post_init__(self):
        if self.label not in (-1, 1):
            raise ValueError("label must be -1 or +1")
        if self.x.shape != self.y.shape or self.x.width != self.x.height:
            raise ValueError("patches must be equal squares")


def beblid_response(f_value: float, threshold: float) -> int:
    return 1 if f_value <= threshold else -1


def beblid_feature(ii: IntegralImage, kp: Keypoint, wl: BeblidWeakLearner) -> float:
    """Mean of the steered p1 box minus mean of the steered p2 box."""
    kps = Keypoints.from_list([kp])
    offs = np.array([wl.p1, wl.p2], dtype=np.int64)
    rx, ry = _rotate(offs, kps.angle)
    cx = int(np.rint(kp.position.x))
    cy = int(np.rint(kp.position.y))
    means = box_means(ii, cx + rx[0], cy + ry[0], wl.s)
    return float(means[0] - means[1])


def beblid_features(ii: IntegralImage, keypoints: Keypoints, model: BeblidModel) -> np.ndarray:
    """(N, K) box-difference responses for every keypoint and learner."""
    p1, p2, s, _ = model.arrays()
    if len(keypoints) == 0:
        return np.zeros((0, model.K))
    cx = np.rint(keypoints.xy[:, 0]).astype(np.int64)[:, None]
    cy = np.rint(keypoints.xy[:, 1]).astype(np.int64)[:, None]
    x1, y1 = _rotate(p1, keypoints.angle)
    x2, y2 = _rotate(p2, keypoints.angle)
    m1 = box_means(ii, cx + x1, cy + y1, s[None, :])
    m2 = box_means(ii, cx + x2, cy + y2, s[None, :])
    return m1 - m2


def describe_beblid(ii: IntegralImage, keypoints: Keypoints, model: BeblidModel) -> DescriptorSet:
    _, _, _, t = model.arrays()
    if len(keypoints) == 0:
        return DescriptorSet.empty(model.K)
    return DescriptorSet.from_bits(beblid_features(ii, keypoints, model) <= t[None, :])


def compute_beblid(ii: IntegralImage, kp: Keypoint, model: BeblidModel) -> BinaryDescriptor:
    return describe_beblid(ii, Keypoints.from_list([kp]), model)[0]


# -- training ---------------------------------------------------------------

def build_candidate_pool(patch_side: int = 32, stride: int = 2, sizes=(2, 4, 6, 8)) -> np.ndarray:
    """Every unordered pair of stride-aligned box centres, per box size.

    Rows are ``(p1x, p1y, p2x, p2y, s)`` with offsets relative to the patch centre.
    """
    c = patch_side // 2
    rows = []
    for s in sizes:
        coords = [v for v in range(0, patch_side, stride) if v - s // 2 >= 0 and v - s // 2 + s <= patch_side]
        pts = [(x - c, y - c) for y in coords for x in coords]
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                rows.append((*pts[i], *pts[j], s))
    return np.array(rows, dtype=np.int64)


def sample_pool(pool: np.ndarray, n: int, seed: int = 0) -> np.ndarray:
    if n >= len(pool):
        return pool
    idx = np.random.default_rng(seed).choice(len(pool), size=n, replace=False)
    return pool[np.sort(idx)]


def _patch_stack(patches) -> np.ndarray:
    return np.stack([p.data if isinstance(p, GrayImage) else np.asarray(p) for p in patches]).astype(np.int64)


def _pool_features(stack: np.ndarray, pool: np.ndarray, patch_side: int) -> np.ndarray:
    """(C, N) box differences of every candidate on every patch of ``stack``."""
    n = len(stack)
    ii = np.zeros((n, patch_side + 1, patch_side + 1), np.int64)
    ii[:, 1:, 1:] = stack.cumsum(1).cumsum(2)
    c = patch_side // 2
    s = pool[:, 4]

    def means(px, py):
        x0 = c + px - s // 2
        y0 = c + py - s // 2
        x1, y1 = x0 + s, y0 + s
        tot = ii[:, y1, x1] - ii[:, y0, x1] - ii[:, y1, x0] + ii[:, y0, x0]
        return tot / (s * s)

    return (means(pool[:, 0], pool[:, 1]) - means(pool[:, 2], pool[:, 3])).T


def boosting_loss(labels: np.ndarray, margin: np.ndarray, gamma: float) -> float:
    """Exponential similarity loss with unit normalisation."""
    return float(np.exp(-gamma * labels * margin).sum())


def train_beblid(
    samples,
    K: int = 256,
    gamma: float = 1.0,
    candidate_pool=None,
    n_thresholds: int = 7,
    patch_side: int | None = None,
) -> BeblidModel:
    """Greedy AdaBoost over (box pair, threshold) candidates.

    Thresholds per candidate are the interior quantiles of its responses on
    the training patches. A learner is never picked twice. After the
    boosting rounds a single common weight is fitted by line search.
    """
    samples = list(samples)
    if K < 1:
        raise TrainingError("K must be >= 1")
    if not samples:
        raise TrainingError("no training samples")
    labels = np.array([smp.label for smp in samples], dtype=np.float64)
    if not ((labels > 0).any() and (labels < 0).any()):
        raise TrainingError("training needs both positive and negative pairs")
    side = patch_side or samples[0].x.width
    pool = candidate_pool if candidate_pool is not None else sample_pool(build_candidate_pool(side), 3000)
    pool = np.asarray(pool, dtype=np.int64).reshape(-1, 5)
    if len(pool) == 0:
        raise TrainingError("empty candidate pool")

    n = len(samples)
    fx = _pool_features(_patch_stack(smp.x for smp in samples), pool, side)
    fy = _pool_features(_patch_stack(smp.y for smp in samples), pool, side)
    qs = np.arange(1, n_thresholds + 1) / (n_thresholds + 1)
    thresholds = np.quantile(np.concatenate([fx, fy], axis=1), qs, axis=1)  # (Q, C)
    n_cand = len(pool)

    # agreement[q*C + c, i] = +1 if learner (c, q) gives both patches of pair i the same response
    agree = np.empty((len(qs) * n_cand, n), np.float32)
    for qi in range(len(qs)):
        t = thresholds[qi][:, None]
        agree[qi * n_cand:(qi + 1) * n_cand] = np.where((fx <= t) == (fy <= t), 1.0, -1.0)
    signed = agree * labels[None, :].astype(np.float32)

    used = np.zeros(len(agree), bool)
    margin = np.zeros(n)
    picks, alphas = [], []
    history = [boosting_loss(labels, margin, gamma)]
    for _ in range(min(K, len(agree))):
        w = np.exp(-gamma * labels * margin)
        w /= w.sum()
        score = signed @ w.astype(np.float32)
        score[used] = -np.inf
        best = int(np.argmax(score))
        used[best] = True
        z = agree[best].astype(np.float64)
        r = float(np.dot(w, labels * z))
        r = min(max(r, 0.0), 1.0 - 1e-12)
        alpha = min(0.5 / gamma * np.log((1 + r) / (1 - r)), ALPHA_CAP)
        margin = margin + alpha * z
        picks.append(best)
        alphas.append(alpha)
        history.append(boosting_loss(labels, margin, gamma))
        log.debug("round %d: candidate %d alpha %.4f loss %.6f", len(picks), best, alpha, history[-1])

    votes = agree[picks].astype(np.float64).sum(axis=0)
    # log of the loss: the same minimiser, without exp overflow at large alpha
    res = minimize_scalar(lambda a: logsumexp(-gamma * labels * a * votes), bounds=(0.0, ALPHA_CAP), method="bounded")
    common = float(res.x)

    learners = []
    for idx in picks:
        qi, ci = divmod(idx, n_cand)
        p1x, p1y, p2x, p2y, s = (int(v) for v in pool[ci])
        learners.append(BeblidWeakLearner((p1x, p1y), (p2x, p2y), s, float(np.float32(thresholds[qi, ci])), common))
    return BeblidModel(tuple(learners), side, gamma, tuple(history))


# -- patches ----------------------------------------------------------------

def extract_patches(img: GrayImage, keypoints: Keypoints, side: int = 32) -> np.ndarray:
    """Steered ``side x side`` patches, bilinearly sampled; returns (N, side, side) uint8.

    Patch pixel (row i, col j) sits at offset ``(j - side//2, i - side//2)``
    rotated by the keypoint angle, matching descriptor-time steering.
    """
    c = side // 2
    u = np.arange(side) - c
    uu, vv = np.meshgrid(u, u)
    cos = np.cos(keypoints.angle)[:, None, None]
    sin = np.sin(keypoints.angle)[:, None, None]
    cx = np.rint(keypoints.xy[:, 0])[:, None, None]
    cy = np.rint(keypoints.xy[:, 1])[:, None, None]
    x = cx + cos * uu - sin * vv
    y = cy + sin * uu + cos * vv
    data = img.data.astype(np.float64)
    h, w = data.shape
    x = np.clip(x, 0, w - 1)
    y = np.clip(y, 0, h - 1)
    x0 = np.minimum(np.floor(x).astype(np.int64), w - 2)
    y0 = np.minimum(np.floor(y).astype(np.int64), h - 2)
    ax = x - x0
    ay = y - y0
    v = (data[y0, x0] * (1 - ax) * (1 - ay) + data[y0, x0 + 1] * ax * (1 - ay)
         + data[y0 + 1, x0] * (1 - ax) * ay + data[y0 + 1, x0 + 1] * ax * ay)
    return np.clip(np.rint(v), 0, 255).astype(np.uint8)


# -- serialisation ----------------------------------------------------------

def save_model(model: BeblidModel, path) -> None:
    buf = bytearray(_HEADER.pack(MAGIC, FORMAT_VERSION, model.patch_side, model.K))
    for wl in model.learners:
        buf += _RECORD.pack(wl.p1[0], wl.p1[1], wl.p2[0], wl.p2[1], wl.s, wl.threshold, wl.alpha)
    Path(path).write_bytes(bytes(buf))


def load_model(path, gamma: float = 1.0) -> BeblidModel:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated model file")
    magic, version, side, k = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported model version {version}")
    if len(raw) != _HEADER.size + k * _RECORD.size:
        raise ValueError(f"{path}: expected {k} learner records")
    learners = []
    for i in range(k):
        p1x, p1y, p2x, p2y, s, t, a = _RECORD.unpack_from(raw, _HEADER.size + i * _RECORD.size)
        learners.append(BeblidWeakLearner((p1x, p1y), (p2x, p2y), s, t, a))
    return BeblidModel(tuple(learners), side, gamma)

