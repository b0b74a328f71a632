import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lacmatch.features import (
    Keypoints, compute_brief, compute_orientation, describe_brief, detect_keypoints,
)
from lacmatch.features.brief import default_pattern
from lacmatch.features.fast import CIRCLE, compute_orientations, keypoint_at, segment_test
from lacmatch.imagecore import GrayImage
from lacmatch.matching import hamming
from lacmatch.synthetic import warp_image


def fast_oracle(data, threshold, border=3):
    """Pixel-by-pixel FAST-9: (x, y) -> best 9-arc difference sum."""
    data = data.astype(int)
    h, w = data.shape
    out = {}
    for y in range(border, h - border):
        for x in range(border, w - border):
            c = data[y, x]
            ring = [data[y + dy, x + dx] for dx, dy in CIRCLE]
            best = 0
            for sign in (1, -1):
                diff = [sign * (v - c) for v in ring]
                for start in range(16):
                    arc = [diff[(start + i) % 16] for i in range(9)]
                    if all(d > threshold for d in arc):
                        best = max(best, sum(arc))
            if best:
                out[(x, y)] = best
    return out


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(5, 60))
def test_segment_test_matches_pixel_oracle(seed, threshold):
    rng = np.random.default_rng(seed)
    # blocky noise gives plenty of corners and near-misses
    data = np.kron(rng.integers(0, 256, (6, 6)), np.ones((4, 4), int)).astype(np.uint8)
    data = np.clip(data.astype(int) + rng.integers(-8, 9, data.shape), 0, 255).astype(np.uint8)
    xs, ys, resp = segment_test(GrayImage(data), threshold, 3)
    got = {(int(x), int(y)): float(r) for x, y, r in zip(xs, ys, resp)}
    assert got == fast_oracle(data, threshold)


def test_constant_image_has_no_keypoints():
    assert len(detect_keypoints(GrayImage(np.full((80, 80), 128, np.uint8)))) == 0


def test_small_square_fires_on_its_corners():
    data = np.zeros((64, 64), np.uint8)
    data[30:35, 30:35] = 255
    xy = {tuple(p) for p in detect_keypoints(GrayImage(data), 20, 500).xy.astype(int).tolist()}
    assert {(30, 30), (34, 30), (30, 34), (34, 34)} <= xy
    # the 5x5 square is narrower than the radius-3 ring, so every passing
    # pixel lies on the square itself
    assert all(30 <= x <= 34 and 30 <= y <= 34 for x, y in xy)
    assert set(fast_oracle(data, 20)) == xy


def test_large_square_keypoints_hug_the_corners():
    data = np.zeros((96, 96), np.uint8)
    data[40:55, 40:55] = 255
    kps = detect_keypoints(GrayImage(data), 20, 500)
    corners = np.array([(40, 40), (54, 40), (40, 54), (54, 54)])
    d = np.linalg.norm(kps.xy[:, None, :] - corners[None], axis=2)
    assert d.min(axis=1).max() <= 2.0
    assert (d.min(axis=0) == 0).all()


def test_checkerboard_cap():
    # 3 px squares: X-junctions of larger squares never show a 9-arc
    tile = np.kron((np.indices((43, 43)).sum(axis=0) % 2) * 255, np.ones((3, 3), int)).astype(np.uint8)
    assert len(detect_keypoints(GrayImage(tile), 20, 10**6)) > 100
    assert len(detect_keypoints(GrayImage(tile), 20, 100)) == 100


def test_keypoints_sorted_strongest_first(texture):
    kps = detect_keypoints(texture, 20, 120)
    assert len(kps) == 120
    assert (np.diff(kps.response) <= 0).all()
    # the border keeps every descriptor patch inside the image
    assert kps.xy.min() >= 28 and (kps.xy[:, 0] < texture.width - 28).all()


def test_detection_is_deterministic(texture):
    a = detect_keypoints(texture, 20, 500)
    b = detect_keypoints(texture, 20, 500)
    assert np.array_equal(a.xy, b.xy) and np.array_equal(a.angle, b.angle)


def _disc_patch(values):
    r = 20
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return GrayImage(values(xx, yy)), r


def test_radially_symmetric_patch_has_zero_angle():
    img, r = _disc_patch(lambda x, y: np.clip(200 - 3 * np.hypot(x, y), 0, 255))
    assert compute_orientation(img, keypoint_at(r, r)) == 0.0


def test_ramp_in_x_points_along_x():
    img, r = _disc_patch(lambda x, y: 100 + 3 * x)
    theta = compute_orientation(img, keypoint_at(r, r))
    assert min(theta, 2 * math.pi - theta) < 1e-9


def test_ramp_matches_direct_moments():
    img, r = _disc_patch(lambda x, y: 100 + 2 * x + y)
    m10 = m01 = 0
    for v in range(-15, 16):
        for u in range(-15, 16):
            if u * u + v * v <= 225:
                m10 += u * int(img.data[r + v, r + u])
                m01 += v * int(img.data[r + v, r + u])
    assert compute_orientation(img, keypoint_at(r, r)) == pytest.approx(math.atan2(m01, m10) % (2 * math.pi))


@pytest.mark.parametrize("seed", range(5))
def test_quarter_turn_shifts_angle_by_half_pi(seed):
    rng = np.random.default_rng(seed)
    data = rng.integers(0, 256, (41, 41)).astype(np.uint8)
    kp = keypoint_at(20, 20)
    a = compute_orientation(GrayImage(data), kp)
    # np.rot90 with k=-1 turns +x into +y (image y points down)
    b = compute_orientation(GrayImage(np.rot90(data, k=-1)), keypoint_at(20, 20))
    assert abs(((b - a - math.pi / 2) + math.pi) % (2 * math.pi) - math.pi) < 0.05


def test_orientations_vectorised_agree(texture):
    xy = np.array([(60, 70), (100, 120), (200, 150)], float)
    many = compute_orientations(texture, xy)
    for p, want in zip(xy, many):
        assert compute_orientation(texture, keypoint_at(*p)) == pytest.approx(want)


def test_pattern_shape_and_reach():
    pat = default_pattern()
    assert pat.shape == (256, 4)
    # steering by any angle stays within the detector border
    assert np.hypot(pat[:, 0::2], pat[:, 1::2]).max() <= 28


def test_brief_twice_is_identical(texture):
    kp = keypoint_at(150, 110, angle=0.7)
    assert hamming(compute_brief(texture, kp), compute_brief(texture, kp)) == 0


def test_constant_patch_gives_zero_descriptor():
    img = GrayImage(np.full((80, 80), 90, np.uint8))
    assert not compute_brief(img, keypoint_at(40, 40, angle=1.1)).bits.any()


def test_bit_is_set_when_first_point_darker():
    data = np.zeros((80, 80), np.uint8)
    pat = np.array([[0, -5, 0, 5], [0, 5, 0, -5]])
    data[45, 40] = 200     # the point 5 below the centre
    bits = compute_brief(GrayImage(data), keypoint_at(40, 40), pat).bits
    assert bits.tolist() == [True, False]


def test_steering_helps_under_rotation(texture):
    """15 degree rotation: orientation-compensated BRIEF beats the unsteered one."""
    c = np.array([texture.width / 2, texture.height / 2])
    a = math.radians(15)
    rot = np.array([[math.cos(a), -math.sin(a), 0], [math.sin(a), math.cos(a), 0], [0, 0, 1]])
    h = np.array([[1, 0, c[0]], [0, 1, c[1]], [0, 0, 1]]) @ rot @ np.array([[1, 0, -c[0]], [0, 1, -c[1]], [0, 0, 1]])
    turned = GrayImage(np.clip(np.rint(warp_image(texture, h, (texture.width, texture.height))), 0, 255))
    kps = detect_keypoints(texture, 20, 200)
    kps = kps[np.linalg.norm(kps.xy - c, axis=1) < 60]
    moved = (h[:2, :2] @ kps.xy.T).T + h[:2, 2]
    moved = np.rint(moved)
    steered = Keypoints(moved, kps.response, compute_orientations(turned, moved))
    flat_a = Keypoints(kps.xy, kps.response, np.zeros(len(kps)))
    flat_b = Keypoints(moved, kps.response, np.zeros(len(kps)))
    d_steered = (describe_brief(texture, kps).bits() != describe_brief(turned, steered).bits()).sum(axis=1)
    d_flat = (describe_brief(texture, flat_a).bits() != describe_brief(turned, flat_b).bits()).sum(axis=1)
    assert len(kps) >= 5
    assert d_steered.mean() < d_flat.mean()
