"""Pairwise label geometry and similarity-based refinement of projected labels."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from lacmatch.imagecore import Point2


@dataclass(frozen=True)
class LabelTopology:
    """Distances and bearings between every ordered pair of labels."""

    ids: tuple[int, ...]
    positions: np.ndarray          # (n, 2) panorama coordinates
    distance: np.ndarray           # (n, n)
    angle: np.ndarray              # (n, n), radians in [0, 2pi)

    def index(self, label_id: int) -> int:
        return self.ids.index(label_id)

    def relation(self, a: int, b: int) -> tuple[float, float]:
        i, j = self.index(a), self.index(b)
        return float(self.distance[i, j]), float(self.angle[i, j])

    def pairs(self):
        for i, a in enumerate(self.ids):
            for j, b in enumerate(self.ids):
                if i != j:
                    yield a, b, float(self.distance[i, j]), float(self.angle[i, j])

    def to_json(self) -> str:
        rows = [{"from": a, "to": b, "d": round(d, 6), "theta": round(t, 6)} for a, b, d, t in self.pairs()]
        return json.dumps({"labels": list(self.ids), "pairs": rows}, indent=1)


def build_topology(labels) -> LabelTopology:
    """``labels``: iterable of objects with ``id`` and ``position`` (or ``(id, (x, y))`` tuples)."""
    ids, pts = [], []
    for lab in labels:
        if hasattr(lab, "id"):
            ids.append(lab.id)
            pts.append((lab.position.x, lab.position.y))
        else:
            ids.append(lab[0])
            pts.append(tuple(lab[1]))
    if not ids:
        raise ValueError("topology needs at least one label")
    p = np.asarray(pts, dtype=np.float64)
    diff = p[None, :, :] - p[:, None, :]                # diff[i, j] = p_j - p_i
    dist = np.hypot(diff[..., 0], diff[..., 1])
    ang = np.mod(np.arctan2(diff[..., 1], diff[..., 0]), 2 * np.pi)
    np.fill_diagonal(ang, 0.0)
    ang[ang >= 2 * np.pi] = 0.0
    return LabelTopology(tuple(ids), p, dist, ang)


def _fit_similarity(proj: np.ndarray, ref: np.ndarray, pair_i, pair_j, weights=None) -> complex:
    """Complex ``z = s * exp(i*phi)`` minimising sum |v_ij - z u_ij|^2."""
    v = (proj[pair_j, 0] - proj[pair_i, 0]) + 1j * (proj[pair_j, 1] - proj[pair_i, 1])
    u = (ref[pair_j, 0] - ref[pair_i, 0]) + 1j * (ref[pair_j, 1] - ref[pair_i, 1])
    w = np.ones(len(v)) if weights is None else weights
    den = float((w * np.abs(u) ** 2).sum())
    if den <= 0:
        return 1.0 + 0j
    return complex((w * np.conj(u) * v).sum() / den)


def _robust_similarity(u: np.ndarray, v: np.ndarray) -> complex:
    """Pair candidate ``v_k / u_k`` with the smallest lower-median residual over all pairs."""
    ok = np.abs(u) > 1e-9
    if not ok.any():
        return 1.0 + 0j
    cands = v[ok] / u[ok]
    resid = np.abs(v[None, :] - cands[:, None] * u[None, :])
    m = (len(u) - 1) // 2
    cost = np.partition(resid, m, axis=1)[:, m]
    return complex(cands[int(np.argmin(cost))])


def refine_labels_polar(projected: dict, topology: LabelTopology, inlier_weight: dict | None = None,
                        lam: float = 0.5, trim: float = 3.0) -> dict:
    """Pull projected labels toward positions predicted from the stored topology.

    The anchor is the label with the most support (lowest id on ties). A
    uniform scale and rotation are first chosen by least median residual
    among the per-pair candidates. Each
    label is then scored by the smallest residual among its pairs, which
    stays small for a consistent label as long as one partner agrees with
    it. Labels scoring above ``trim`` times the median score (at least
    1 px) are left out and the fit is repeated, so a drifting label cannot
    bend the fit. Each other label is then blended toward
    ``anchor + scale * d * (cos(theta + rot), sin(theta + rot))``.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [0, 1]")
    ids = [i for i in projected if i in topology.ids]
    out = {k: Point2(*v) for k, v in projected.items()}
    if len(ids) < 2 or lam == 0.0:
        return out
    support = inlier_weight or {}
    anchor = min(ids, key=lambda i: (-support.get(i, 0), i))
    proj = np.array([tuple(projected[i]) for i in ids], dtype=np.float64)
    ref = topology.positions[[topology.index(i) for i in ids]]

    pi, pj = np.triu_indices(len(ids), k=1)
    u = (ref[pj] - ref[pi]) @ np.array([1, 1j])
    v = (proj[pj] - proj[pi]) @ np.array([1, 1j])
    z = _robust_similarity(u, v)
    resid = np.abs(v - z * u)
    score = np.full(len(ids), np.inf)
    np.minimum.at(score, pi, resid)
    np.minimum.at(score, pj, resid)
    good = score <= max(trim * float(np.median(score)), 1.0)
    keep = good[pi] & good[pj]
    if keep.any() and not keep.all():
        z = _fit_similarity(proj, ref, pi[keep], pj[keep])

    a = ids.index(anchor)
    a_pos = proj[a, 0] + 1j * proj[a, 1]
    for k, lid in enumerate(ids):
        if lid == anchor:
            continue
        rel = (ref[k, 0] - ref[a, 0]) + 1j * (ref[k, 1] - ref[a, 1])
        pred = a_pos + z * rel
        x = (1 - lam) * proj[k, 0] + lam * pred.real
        y = (1 - lam) * proj[k, 1] + lam * pred.imag
        if math.isfinite(x) and math.isfinite(y):
            out[lid] = Point2(x, y)
    return out


def label_support(label_xy: dict, inlier_frame_xy: np.ndarray, radius: float = 50.0) -> dict:
    """Number of homography inliers within ``radius`` px of each projected label."""
    pts = np.asarray(inlier_frame_xy, np.float64).reshape(-1, 2)
    out = {}
    for lid, p in label_xy.items():
        if len(pts) == 0:
            out[lid] = 0
            continue
        d2 = ((pts - np.array(tuple(p))) ** 2).sum(axis=1)
        out[lid] = int((d2 <= radius * radius).sum())
    return out
