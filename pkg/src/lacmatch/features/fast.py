"""FAST-9 corner detection with intensity-centroid orientation."""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import maximum_filter

from lacmatch.features.descriptors import Keypoint, Keypoints
from lacmatch.imagecore import GrayImage, Point2

# Keypoints keep this distance to every border so that rotated BRIEF pairs and
# BEBLID boxes stay inside the image.
PATCH_RADIUS = 28
ORIENTATION_RADIUS = 15

# 16-pixel Bresenham circle of radius 3, clockwise from 12 o'clock.
CIRCLE = np.array([
    (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
], dtype=np.int64)
ARC = 9


def _arc_mask(flags: np.ndarray) -> np.ndarray:
    """Per row of ``flags`` (n, 16): does a cyclic run of ARC trues exist."""
    weights = np.left_shift(np.uint32(1), np.arange(16, dtype=np.uint32))
    m = (flags.astype(np.uint32) * weights).sum(axis=1, dtype=np.uint32)
    m = m | (m << np.uint32(16))
    run = m.copy()
    for i in range(1, ARC):
        run &= m >> np.uint32(i)
    return run != 0


def _arc_response(diff: np.ndarray, flags: np.ndarray) -> np.ndarray:
    """Largest sum of ``diff`` over any qualifying 9-pixel arc, 0 if none."""
    d2 = np.concatenate([diff, diff[:, :ARC - 1]], axis=1)
    f2 = np.concatenate([flags, flags[:, :ARC - 1]], axis=1).astype(np.int32)
    cd = np.concatenate([np.zeros((len(diff), 1)), np.cumsum(d2, axis=1)], axis=1)
    cf = np.concatenate([np.zeros((len(diff), 1), np.int32), np.cumsum(f2, axis=1)], axis=1)
    sums = cd[:, ARC:ARC + 16] - cd[:, :16]
    full = (cf[:, ARC:ARC + 16] - cf[:, :16]) == ARC
    return np.where(full, sums, 0.0).max(axis=1)


def segment_test(img: GrayImage, threshold: int, border: int = 3):
    """Run the FAST-9 segment test on every pixel at least ``border`` from the edge.

    Returns ``(xs, ys, response)`` for pixels that pass, before suppression.
    ``response`` is the largest difference sum over a qualifying 9-arc.
    """
    border = max(border, 3)
    data = img.data.astype(np.int16)
    h, w = data.shape
    if h <= 2 * border or w <= 2 * border:
        empty = np.zeros(0, np.int64)
        return empty, empty, np.zeros(0)
    c = data[border:h - border, border:w - border]

    def ring(k):
        dx, dy = CIRCLE[k]
        return data[border + dy:h - border + dy, border + dx:w - border + dx]

    hi = c + threshold
    lo = c - threshold
    n_bright = np.zeros(c.shape, np.int8)
    n_dark = np.zeros(c.shape, np.int8)
    for k in (0, 4, 8, 12):
        r = ring(k)
        n_bright += r > hi
        n_dark += r < lo
    # any 9-arc covers at least two compass points
    ys, xs = np.nonzero((n_bright >= 2) | (n_dark >= 2))
    ys = ys + border
    xs = xs + border
    if len(xs) == 0:
        return xs, ys, np.zeros(0)

    vals = data[ys[:, None] + CIRCLE[None, :, 1], xs[:, None] + CIRCLE[None, :, 0]].astype(np.int32)
    cv = data[ys, xs].astype(np.int32)[:, None]
    resp = np.zeros(len(xs))
    for sign in (1, -1):
        diff = sign * (vals - cv)
        flags = diff > threshold
        # a 9-arc always covers at least 4 of the 8 even ring positions
        rows = np.nonzero(flags[:, ::2].sum(axis=1) >= 4)[0]
        rows = rows[_arc_mask(flags[rows])]
        if len(rows):
            resp[rows] = np.maximum(resp[rows], _arc_response(diff[rows].astype(np.float64), flags[rows]))
    keep = resp > 0
    return xs[keep], ys[keep], resp[keep]


def compute_orientations(img: GrayImage, xy: np.ndarray, radius: int = ORIENTATION_RADIUS) -> np.ndarray:
    """Intensity-centroid angle in ``[0, 2pi)`` for each integer position in ``xy``."""
    xy = np.rint(np.asarray(xy, dtype=np.float64).reshape(-1, 2)).astype(np.int64)
    if len(xy) == 0:
        return np.zeros(0)
    u = np.arange(-radius, radius + 1)
    uu, vv = np.meshgrid(u, u)
    inside = uu * uu + vv * vv <= radius * radius
    du, dv = uu[inside], vv[inside]
    xs = xy[:, 0:1] + du[None, :]
    ys = xy[:, 1:2] + dv[None, :]
    if xs.min() < 0 or ys.min() < 0 or xs.max() >= img.width or ys.max() >= img.height:
        raise ValueError("orientation patch leaves the image")
    patch = img.data[ys, xs].astype(np.int64)
    m10 = patch @ du.astype(np.int64)
    m01 = patch @ dv.astype(np.int64)
    angle = np.arctan2(m01, m10).astype(np.float64)
    angle = np.mod(angle, 2 * np.pi)
    angle[(m10 == 0) & (m01 == 0)] = 0.0
    # mod can round up to exactly 2pi for tiny negative angles
    angle[angle >= 2 * np.pi] = 0.0
    return angle


def compute_orientation(img: GrayImage, kp: Keypoint, radius: int = ORIENTATION_RADIUS) -> float:
    """Orientation of ``kp``; also stored on ``kp.angle``."""
    angle = float(compute_orientations(img, [(kp.position.x, kp.position.y)], radius)[0])
    kp.angle = angle
    return angle


def detect_keypoints(
    img: GrayImage,
    fast_threshold: int = 20,
    max_count: int = 2500,
    border: int = PATCH_RADIUS,
    orient: bool = True,
) -> Keypoints:
    """FAST-9 corners after 3x3 non-maximum suppression, strongest first."""
    xs, ys, resp = segment_test(img, fast_threshold, border)
    if len(xs) == 0 or max_count <= 0:
        return Keypoints.empty()
    score = np.zeros(img.shape, np.float64)
    score[ys, xs] = resp
    # non-strict: every pixel of a plateau of equal responses survives
    peak = maximum_filter(score, size=3, mode="constant") == score
    keep = peak[ys, xs]
    xs, ys, resp = xs[keep], ys[keep], resp[keep]
    # strongest first, raster order breaks ties
    order = np.lexsort((xs, ys, -resp))[:max_count]
    xs, ys, resp = xs[order], ys[order], resp[order]
    xy = np.stack([xs, ys], axis=1).astype(np.float64)
    angle = compute_orientations(img, xy) if orient and border >= ORIENTATION_RADIUS else np.zeros(len(xs))
    return Keypoints(xy, resp, angle)


def keypoint_at(x: float, y: float, response: float = 1.0, angle: float = 0.0) -> Keypoint:
    return Keypoint(Point2(x, y), response, angle % (2 * math.pi))
