"""Homography fitting: normalised DLT inside RANSAC or its degeneracy-aware, locally optimised variant."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from lacmatch.imagecore import Point2


class DegenerateConfiguration(ValueError):
    """The correspondences do not determine a homography."""


class PointAtInfinity(ValueError):
    pass


class EstimationFailure(RuntimeError):
    """No model reached the minimum consensus."""


@dataclass(frozen=True)
class HomographyConfig:
    reproj_tol: float = 3.0
    max_iter: int = 2000
    confidence: float = 0.995
    seed: int = 0
    estimator: str = "degensac"


def normalize_h(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if abs(h[2, 2]) > 1e-12:
        return h / h[2, 2]
    return h / np.linalg.norm(h)


def project_point(h: np.ndarray, p) -> Point2:
    x, y = p
    w = h[2, 0] * x + h[2, 1] * y + h[2, 2]
    if abs(w) < 1e-12:
        raise PointAtInfinity(f"({x}, {y}) maps to infinity")
    return Point2((h[0, 0] * x + h[0, 1] * y + h[0, 2]) / w, (h[1, 0] * x + h[1, 1] * y + h[1, 2]) / w)


def project_points(h: np.ndarray, xy: np.ndarray) -> np.ndarray:
    """Project (N, 2) points; rows mapping to infinity come back as inf."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    hom = xy @ h[:, :2].T + h[:, 2]
    w = hom[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = hom[:, :2] / w[:, None]
    out[np.abs(w) < 1e-12] = np.inf
    return out


def _hartley(pts: np.ndarray):
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    if d < 1e-12:
        raise DegenerateConfiguration("all points coincide")
    s = math.sqrt(2.0) / d
    t = np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])
    return (pts - c) * s, t


def estimate_dlt(src, dst) -> np.ndarray:
    """Homography mapping ``src`` onto ``dst`` from >= 4 correspondences."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if len(src) != len(dst):
        raise ValueError("src and dst differ in length")
    if len(src) < 4:
        raise ValueError(f"need at least 4 correspondences, got {len(src)}")
    ns, ts = _hartley(src)
    nd, td = _hartley(dst)
    n = len(src)
    x, y = ns[:, 0], ns[:, 1]
    u, v = nd[:, 0], nd[:, 1]
    zero, one = np.zeros(n), np.ones(n)
    a = np.empty((2 * n, 9))
    a[0::2] = np.stack([-x, -y, -one, zero, zero, zero, u * x, u * y, u], axis=1)
    a[1::2] = np.stack([zero, zero, zero, -x, -y, -one, v * x, v * y, v], axis=1)
    if n == 4:
        a = np.vstack([a, np.zeros(9)])  # square it so the null vector shows up in vt
    _, sv, vt = np.linalg.svd(a, full_matrices=False)
    if sv[7] < 1e-10 * sv[0]:
        raise DegenerateConfiguration("design matrix rank < 8")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(td) @ hn @ ts
    h = normalize_h(h)
    if abs(np.linalg.det(h)) < 1e-12:
        raise DegenerateConfiguration("singular homography")
    return h


def reprojection_errors(h: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    proj = project_points(h, src)
    err = np.sqrt(((proj - dst) ** 2).sum(axis=1))
    err[~np.isfinite(err)] = np.inf
    return err


@dataclass
class RobustEstimate:
    homography: np.ndarray | None
    inlier_mask: np.ndarray
    iterations_used: int

    @property
    def ok(self) -> bool:
        return self.homography is not None and int(self.inlier_mask.sum()) >= 4

    @property
    def inlier_count(self) -> int:
        return int(self.inlier_mask.sum())


def inlier_rate(est) -> float:
    mask = est.inlier_mask if isinstance(est, RobustEstimate) else np.asarray(est, bool)
    if len(mask) == 0:
        return 0.0
    return float(np.count_nonzero(mask)) / len(mask)


def adaptive_iterations(inlier_ratio: float, confidence: float, sample_size: int = 4) -> float:
    if inlier_ratio <= 0:
        return math.inf
    p = inlier_ratio ** sample_size
    if p >= 1.0:
        return 0.0
    return math.log(1.0 - confidence) / math.log(1.0 - p)


def triangle_area(a, b, c) -> float:
    return 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))


def has_collinear_triple(pts: np.ndarray, min_area: float = 1.0) -> bool:
    """True if any 3 of the 4 points span a triangle smaller than ``min_area``."""
    for skip in range(4):
        a, b, c = (pts[i] for i in range(4) if i != skip)
        if triangle_area(a, b, c) < min_area:
            return True
    return False


def _gather(matches, frame_kps, template_kps):
    fxy = frame_kps.xy if hasattr(frame_kps, "xy") else np.asarray(frame_kps, np.float64)
    txy = template_kps.xy if hasattr(template_kps, "xy") else np.asarray(template_kps, np.float64)
    return txy[matches.train_idx], fxy[matches.query_idx]


def _finalise(h, src, dst, tol):
    """Refit on the consensus of ``h`` and keep the consensus members the refit still explains."""
    mask = reprojection_errors(h, src, dst) < tol
    try:
        h_fit = estimate_dlt(src[mask], dst[mask])
    except (DegenerateConfiguration, ValueError):
        return h, mask
    return h_fit, mask & (reprojection_errors(h_fit, src, dst) < tol)


def _sample_stream(n: int, seed: int):
    rng = np.random.Generator(np.random.Philox(seed))
    while True:
        yield rng.choice(n, size=4, replace=False)


def _local_optimise(h, src, dst, tol, schedule=(2.0, 1.5, 1.0)):
    best_h = h
    best_count = int((reprojection_errors(h, src, dst) < tol).sum())
    cur = h
    for factor in schedule:
        mask = reprojection_errors(cur, src, dst) < tol * factor
        if mask.sum() < 4:
            break
        try:
            cur = estimate_dlt(src[mask], dst[mask])
        except DegenerateConfiguration:
            break
        count = int((reprojection_errors(cur, src, dst) < tol).sum())
        if count > best_count:
            best_h, best_count = cur, count
    return best_h, best_count


def _robust(src, dst, reproj_tol, max_iter, confidence, seed, degenerate_check, local_opt):
    n = len(src)
    if n < 4:
        raise ValueError(f"need at least 4 matches, got {n}")
    raw_h, raw_count = None, 0      # best minimal-sample model, as plain RANSAC sees it
    lo_h, lo_count = None, 0        # best after local optimisation
    limit = max_iter
    it = 0
    samples = _sample_stream(n, seed)
    while it < limit:
        it += 1
        idx = next(samples)
        if degenerate_check and (has_collinear_triple(src[idx]) or has_collinear_triple(dst[idx])):
            continue
        try:
            h = estimate_dlt(src[idx], dst[idx])
        except DegenerateConfiguration:
            continue
        count = int((reprojection_errors(h, src, dst) < reproj_tol).sum())
        if count > raw_count:
            raw_h, raw_count = h, count
            limit = min(max_iter, adaptive_iterations(raw_count / n, confidence))
        if local_opt and count > lo_count:
            lo_h, lo_count = _local_optimise(h, src, dst, reproj_tol)
    if raw_h is None or raw_count < 4:
        return RobustEstimate(None, np.zeros(n, bool), it)
    h, mask = _finalise(raw_h, src, dst, reproj_tol)
    if local_opt and lo_h is not None:
        h_lo, mask_lo = _finalise(lo_h, src, dst, reproj_tol)
        if mask_lo.sum() > mask.sum():
            h, mask = h_lo, mask_lo
    if mask.sum() < 4:
        return RobustEstimate(None, np.zeros(n, bool), it)
    return RobustEstimate(normalize_h(h), mask, it)


def ransac_points(src, dst, reproj_tol=3.0, max_iter=2000, confidence=0.995, seed=0) -> RobustEstimate:
    src = np.asarray(src, np.float64).reshape(-1, 2)
    dst = np.asarray(dst, np.float64).reshape(-1, 2)
    return _robust(src, dst, reproj_tol, max_iter, confidence, seed, False, False)


def degensac_points(src, dst, reproj_tol=3.0, max_iter=2000, confidence=0.995, seed=0) -> RobustEstimate:
    src = np.asarray(src, np.float64).reshape(-1, 2)
    dst = np.asarray(dst, np.float64).reshape(-1, 2)
    return _robust(src, dst, reproj_tol, max_iter, confidence, seed, True, True)


def ransac(matches, frame_kps, template_kps, reproj_tol=3.0, max_iter=2000, confidence=0.995, seed=0):
    """Plain RANSAC for the template -> frame homography of ``matches``."""
    src, dst = _gather(matches, frame_kps, template_kps)
    return ransac_points(src, dst, reproj_tol, max_iter, confidence, seed)


def degensac(matches, frame_kps, template_kps, reproj_tol=3.0, max_iter=2000, confidence=0.995, seed=0):
    """RANSAC with near-collinear sample rejection and local optimisation.

    Draws the same sample sequence as :func:`ransac` for a given seed and
    returns whichever of the plain and locally optimised models has the
    larger consensus, so its inlier count is never below the plain one.
    """
    src, dst = _gather(matches, frame_kps, template_kps)
    return degensac_points(src, dst, reproj_tol, max_iter, confidence, seed)


def estimate(matches, frame_kps, template_kps, cfg: HomographyConfig = HomographyConfig()) -> RobustEstimate:
    fn = {"ransac": ransac, "degensac": degensac}.get(cfg.estimator)
    if fn is None:
        raise ValueError(f"unknown estimator {cfg.estimator!r}")
    return fn(matches, frame_kps, template_kps, cfg.reproj_tol, cfg.max_iter, cfg.confidence, cfg.seed)
