"""Brute-force Hamming matching and grid-based motion statistics filtering."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from lacmatch.features.descriptors import BinaryDescriptor, DescriptorSet


class MatchPair(NamedTuple):
    query_idx: int
    train_idx: int
    distance: int


class Matches:
    """Struct-of-arrays match set; iterating yields :class:`MatchPair`."""

    def __init__(self, query_idx=(), train_idx=(), distance=()):
        self.query_idx = np.asarray(query_idx, dtype=np.int64).reshape(-1)
        self.train_idx = np.asarray(train_idx, dtype=np.int64).reshape(-1)
        self.distance = np.asarray(distance, dtype=np.int64).reshape(-1)
        if not (len(self.query_idx) == len(self.train_idx) == len(self.distance)):
            raise ValueError("match arrays disagree in length")

    @classmethod
    def from_pairs(cls, pairs) -> "Matches":
        pairs = list(pairs)
        if not pairs:
            return cls()
        q, t, d = zip(*pairs)
        return cls(q, t, d)

    def __len__(self):
        return len(self.query_idx)

    def __iter__(self):
        for q, t, d in zip(self.query_idx, self.train_idx, self.distance):
            yield MatchPair(int(q), int(t), int(d))

    def __getitem__(self, i):
        if isinstance(i, (slice, np.ndarray, list)):
            return Matches(self.query_idx[i], self.train_idx[i], self.distance[i])
        return MatchPair(int(self.query_idx[i]), int(self.train_idx[i]), int(self.distance[i]))

    def __eq__(self, other):
        return (isinstance(other, Matches) and np.array_equal(self.query_idx, other.query_idx)
                and np.array_equal(self.train_idx, other.train_idx)
                and np.array_equal(self.distance, other.distance))

    def pairs(self) -> list[MatchPair]:
        return list(self)


def hamming(a: BinaryDescriptor, b: BinaryDescriptor) -> int:
    if len(a) != len(b):
        raise ValueError(f"descriptor length mismatch: {len(a)} vs {len(b)}")
    return int(np.count_nonzero(a.bits != b.bits))


def distance_matrix(query: DescriptorSet, train: DescriptorSet) -> np.ndarray:
    """All-pairs Hamming distances as a (len(query), len(train)) uint16 array.

    Uses ``hamming = (L - <a, b>) / 2`` on +-1 encodings; float32 is exact
    for any length below 2**24.
    """
    if query.length != train.length:
        raise ValueError(f"descriptor length mismatch: {query.length} vs {train.length}")
    dot = query.signs() @ train.signs().T
    return np.rint((query.length - dot) * 0.5).astype(np.uint16)


def brute_force_match(query: DescriptorSet, train: DescriptorSet, cross_check: bool = True) -> Matches:
    """Nearest train descriptor for every query; ties go to the lowest index."""
    if len(query) == 0 or len(train) == 0:
        return Matches()
    d = distance_matrix(query, train)
    best_t = np.argmin(d, axis=1)
    q_idx = np.arange(len(query))
    if cross_check:
        best_q = np.argmin(d, axis=0)
        keep = best_q[best_t] == q_idx
        q_idx = q_idx[keep]
        best_t = best_t[keep]
    return Matches(q_idx, best_t, d[q_idx, best_t])


# -- GMS --------------------------------------------------------------------

@dataclass(frozen=True)
class GmsConfig:
    grid_rows: int = 20
    grid_cols: int = 20
    alpha: float = 6.0
    with_rotation: bool = False


GRID_OFFSETS = ((0.0, 0.0), (0.5, 0.0), (0.0, 0.5), (0.5, 0.5))

# 3x3 neighbourhood: centre first, then the ring clockwise from top-left.
_RING = np.array([(-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0)])
_CENTER = np.array([(0, 0)])


def _neighbourhoods(with_rotation: bool):
    """Template-side neighbour offsets, one (9, 2) table per ring rotation."""
    frame = np.concatenate([_CENTER, _RING])
    shifts = range(8) if with_rotation else range(1)
    return frame, [np.concatenate([_CENTER, np.roll(_RING, -r, axis=0)]) for r in shifts]


def _cells(xy: np.ndarray, dims, rows: int, cols: int, shift=(0.0, 0.0)):
    w, h = dims
    cx = np.floor(xy[:, 0] * cols / w + shift[0]).astype(np.int64)
    cy = np.floor(xy[:, 1] * rows / h + shift[1]).astype(np.int64)
    gx = cols + (1 if shift[0] else 0)
    gy = rows + (1 if shift[1] else 0)
    return np.clip(cx, 0, gx - 1), np.clip(cy, 0, gy - 1), gx, gy


def gms_scores(matches: Matches, frame_xy, template_xy, frame_dims, template_dims,
               cfg: GmsConfig = GmsConfig(), shift=(0.0, 0.0)):
    """Score every match under one grid offset.

    Returns ``(score, accepted, threshold)``: per match the neighbourhood
    score of its frame cell (0 when the match is not in that cell's best
    template cell), whether it passes, and the threshold used.
    """
    fxy = np.asarray(frame_xy, np.float64)[matches.query_idx]
    txy = np.asarray(template_xy, np.float64)[matches.train_idx]
    fx, fy, gx, gy = _cells(fxy, frame_dims, cfg.grid_rows, cfg.grid_cols, shift)
    tx, ty, tgx, tgy = _cells(txy, template_dims, cfg.grid_rows, cfg.grid_cols)
    fcell = fy * gx + fx
    tcell = ty * tgx + tx
    counts = np.bincount(fcell * (tgx * tgy) + tcell, minlength=gx * gy * tgx * tgy)
    counts = counts.reshape(gy, gx, tgy, tgx)
    padded = np.zeros((gy + 2, gx + 2, tgy + 2, tgx + 2), np.int64)
    padded[1:-1, 1:-1, 1:-1, 1:-1] = counts

    flat = counts.reshape(gx * gy, tgx * tgy)
    per_cell = flat.sum(axis=1)
    occupied = np.nonzero(per_cell)[0]
    mean_count = per_cell[occupied].mean()
    threshold = cfg.alpha * np.sqrt(mean_count)

    best_t = np.argmax(flat[occupied], axis=1)
    a, b = np.divmod(occupied, gx)  # frame cell row, col
    c, d = np.divmod(best_t, tgx)   # template cell row, col
    frame_nb, template_nbs = _neighbourhoods(cfg.with_rotation)
    best_score = np.zeros(len(occupied), np.int64)
    for tnb in template_nbs:
        s = np.zeros(len(occupied), np.int64)
        for (fdx, fdy), (tdx, tdy) in zip(frame_nb, tnb):
            s += padded[a + 1 + fdy, b + 1 + fdx, c + 1 + tdy, d + 1 + tdx]
        best_score = np.maximum(best_score, s)

    cell_best = np.full(gx * gy, -1, np.int64)
    cell_best[occupied] = best_t
    cell_score = np.zeros(gx * gy, np.int64)
    cell_score[occupied] = best_score
    in_best = cell_best[fcell] == tcell
    score = np.where(in_best, cell_score[fcell], 0)
    accepted = in_best & (score > threshold)
    return score, accepted, threshold


def gms_mask(matches: Matches, frame_xy, template_xy, frame_dims, template_dims,
             cfg: GmsConfig = GmsConfig()) -> np.ndarray:
    """Boolean keep-mask: a match survives if any grid offset accepts it."""
    keep = np.zeros(len(matches), bool)
    if len(matches) == 0:
        return keep
    for shift in GRID_OFFSETS:
        _, accepted, _ = gms_scores(matches, frame_xy, template_xy, frame_dims, template_dims, cfg, shift)
        keep |= accepted
    return keep


def _xy(kps):
    return kps.xy if hasattr(kps, "xy") else np.asarray(kps, np.float64).reshape(-1, 2)


def gms_filter(matches: Matches, frame_kps, template_kps, frame_dims, template_dims,
               cfg: GmsConfig = GmsConfig()):
    """Split ``matches`` into (kept, rejected), both ordered by query index."""
    if len(matches) == 0:
        return Matches(), Matches()
    keep = gms_mask(matches, _xy(frame_kps), _xy(template_kps), frame_dims, template_dims, cfg)
    order = np.argsort(matches.query_idx, kind="stable")
    keep = keep[order]
    ordered = matches[order]
    return ordered[keep], ordered[~keep]
