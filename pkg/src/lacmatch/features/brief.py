"""Steered (rotated) BRIEF-256."""

from __future__ import annotations

from functools import lru_cache
from importlib import resources

import numpy as np

from lacmatch.features.descriptors import BinaryDescriptor, DescriptorSet, Keypoint, Keypoints
from lacmatch.imagecore import BoxOutOfBounds, GrayImage


@lru_cache(maxsize=1)
def default_pattern() -> np.ndarray:
    """The packaged (256, 4) pattern of ``(ax, ay, bx, by)`` offsets."""
    text = resources.files("lacmatch.data").joinpath("brief_pattern_256.txt").read_text()
    rows = [line.split() for line in text.splitlines() if line and not line.startswith("#")]
    pattern = np.array(rows, dtype=np.int64)
    pattern.setflags(write=False)
    return pattern


def _rotate(offsets: np.ndarray, angle: np.ndarray):
    """Rotate (P, 2) offsets by each of (N,) angles -> rounded (N, P) x and y."""
    c = np.cos(angle)[:, None]
    s = np.sin(angle)[:, None]
    ox = offsets[None, :, 0]
    oy = offsets[None, :, 1]
    rx = np.rint(c * ox - s * oy).astype(np.int64)
    ry = np.rint(s * ox + c * oy).astype(np.int64)
    return rx, ry


def brief_bits(img: GrayImage, keypoints: Keypoints, pattern: np.ndarray | None = None) -> np.ndarray:
    """(N, 256) bool; bit k is set iff ``I(a_k) < I(b_k)`` after steering."""
    pattern = default_pattern() if pattern is None else np.asarray(pattern, dtype=np.int64)
    n = len(keypoints)
    if n == 0:
        return np.zeros((0, len(pattern)), bool)
    cx = np.rint(keypoints.xy[:, 0]).astype(np.int64)[:, None]
    cy = np.rint(keypoints.xy[:, 1]).astype(np.int64)[:, None]
    ax, ay = _rotate(pattern[:, 0:2], keypoints.angle)
    bx, by = _rotate(pattern[:, 2:4], keypoints.angle)
    ax += cx
    ay += cy
    bx += cx
    by += cy
    lo = min(ax.min(), ay.min(), bx.min(), by.min())
    if lo < 0 or max(ax.max(), bx.max()) >= img.width or max(ay.max(), by.max()) >= img.height:
        raise BoxOutOfBounds("steered BRIEF pattern leaves the image")
    data = img.data
    return data[ay, ax] < data[by, bx]


def describe_brief(img: GrayImage, keypoints: Keypoints, pattern=None) -> DescriptorSet:
    return DescriptorSet.from_bits(brief_bits(img, keypoints, pattern))


def compute_brief(img: GrayImage, kp: Keypoint, pattern=None) -> BinaryDescriptor:
    return BinaryDescriptor(brief_bits(img, Keypoints.from_list([kp]), pattern)[0])
