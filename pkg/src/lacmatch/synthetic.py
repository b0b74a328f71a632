"""Synthetic scenes rendered through known homographies, for ground-truth testing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter, zoom

from lacmatch.homography import project_points
from lacmatch.imagecore import GrayImage, Point2


class ScriptError(ValueError):
    def __init__(self, frame: int, message: str):
        super().__init__(f"frame {frame}: {message}")
        self.frame = frame


def synthetic_panorama(width: int, height: int, seed: int = 0, n_shapes: int | None = None) -> GrayImage:
    """Cluttered, non-repeating texture of shaded boxes and discs over fine grain."""
    rng = np.random.default_rng(seed)
    coarse = rng.uniform(0, 1, (max(2, height // 48), max(2, width // 48)))
    base = zoom(coarse, (height / coarse.shape[0], width / coarse.shape[1]), order=1)[:height, :width]
    img = 70 + 90 * base
    n_shapes = n_shapes if n_shapes is not None else int(width * height / 900)
    for _ in range(n_shapes):
        w = int(rng.integers(6, 60))
        h = int(rng.integers(6, 60))
        x = int(rng.integers(-w // 2, width - w // 2))
        y = int(rng.integers(-h // 2, height - h // 2))
        val = rng.uniform(0, 255)
        x0, y0 = max(x, 0), max(y, 0)
        x1, y1 = min(x + w, width), min(y + h, height)
        if x1 <= x0 or y1 <= y0:
            continue
        if rng.random() < 0.6:
            img[y0:y1, x0:x1] = val
        else:
            yy, xx = np.mgrid[y0:y1, x0:x1]
            cx, cy = x + w / 2, y + h / 2
            inside = ((xx - cx) / (w / 2)) ** 2 + ((yy - cy) / (h / 2)) ** 2 <= 1
            img[y0:y1, x0:x1][inside] = val
    img += gaussian_filter(rng.normal(0, 12, (height, width)), 1.0)
    img = gaussian_filter(img, 0.7)
    return GrayImage(np.clip(np.rint(img), 0, 255).astype(np.uint8))


def synthetic_labels(dims, n_clusters: int, per_cluster: int, seed: int = 0, spread: float = 40.0,
                     margin: float = 120.0, min_sep: float = 300.0):
    """Labels in well separated Gaussian clumps; returns ``[Label]``."""
    from lacmatch.lac import Label

    w, h = dims
    rng = np.random.default_rng(seed)
    centers = []
    tries = 0
    while len(centers) < n_clusters:
        c = rng.uniform((margin, margin), (w - margin, h - margin))
        tries += 1
        if all(math.dist(c, o) >= min_sep for o in centers) or tries > 10000:
            centers.append(c)
    labels = []
    for ci, c in enumerate(centers):
        for j in range(per_cluster):
            p = np.clip(c + rng.normal(0, spread, 2), (margin / 2, margin / 2), (w - margin / 2, h - margin / 2))
            lid = len(labels) + 1
            labels.append(Label(lid, f"equip-{ci}-{j}", Point2(float(p[0]), float(p[1]))))
    return labels


# -- camera -----------------------------------------------------------------

@dataclass(frozen=True)
class ViewPose:
    """Camera view onto the panorama: centre, in-plane rotation, zoom, tilt."""

    cx: float
    cy: float
    angle: float = 0.0
    scale: float = 1.0
    tilt: tuple[float, float] = (0.0, 0.0)


def pose_homography(pose: ViewPose, frame_dims) -> np.ndarray:
    """Panorama -> frame homography for ``pose``."""
    fw, fh = frame_dims
    c, s = math.cos(pose.angle), math.sin(pose.angle)
    to_origin = np.array([[1, 0, -pose.cx], [0, 1, -pose.cy], [0, 0, 1.0]])
    rot = np.array([[c * pose.scale, -s * pose.scale, 0], [s * pose.scale, c * pose.scale, 0], [0, 0, 1.0]])
    persp = np.array([[1, 0, 0], [0, 1, 0], [pose.tilt[0], pose.tilt[1], 1.0]])
    to_frame = np.array([[1, 0, fw / 2], [0, 1, fh / 2], [0, 0, 1.0]])
    h = to_frame @ persp @ rot @ to_origin
    return h / h[2, 2]


def translation(dx: float, dy: float) -> np.ndarray:
    return np.array([[1, 0, dx], [0, 1, dy], [0, 0, 1.0]])


def pan_script(start, end, n_frames: int, jitter: float = 0.0, seed: int = 0, **pose_kw) -> list[ViewPose]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_frames):
        t = i / max(1, n_frames - 1)
        cx = start[0] + t * (end[0] - start[0])
        cy = start[1] + t * (end[1] - start[1])
        if jitter:
            cx += rng.normal(0, jitter)
            cy += rng.normal(0, jitter)
        out.append(ViewPose(cx, cy, **pose_kw))
    return out


def dwell_script(stops, dwell: int, travel: int, jitter: float = 0.0, seed: int = 0) -> list[ViewPose]:
    """Linger ``dwell`` frames at each stop, moving ``travel`` frames between stops."""
    rng = np.random.default_rng(seed)
    poses = []
    for i, stop in enumerate(stops):
        if i > 0:
            prev = stops[i - 1]
            for j in range(1, travel + 1):
                t = j / (travel + 1)
                poses.append((prev[0] + t * (stop[0] - prev[0]), prev[1] + t * (stop[1] - prev[1])))
        poses.extend([tuple(stop)] * dwell)
    out = []
    for cx, cy in poses:
        if jitter:
            cx += rng.normal(0, jitter)
            cy += rng.normal(0, jitter)
        out.append(ViewPose(float(cx), float(cy)))
    return out


# -- rendering --------------------------------------------------------------

def sample_bilinear(src: GrayImage, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear lookup of ``src`` at float coordinates, clamped to the edges."""
    data = src.data.astype(np.float64)
    sh, sw = data.shape
    x = np.clip(x, 0, sw - 1)
    y = np.clip(y, 0, sh - 1)
    x0 = np.minimum(np.floor(x).astype(np.int64), max(sw - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.int64), max(sh - 2, 0))
    x1 = np.minimum(x0 + 1, sw - 1)
    y1 = np.minimum(y0 + 1, sh - 1)
    ax = x - x0
    ay = y - y0
    return (data[y0, x0] * (1 - ax) * (1 - ay) + data[y0, x1] * ax * (1 - ay)
            + data[y1, x0] * (1 - ax) * ay + data[y1, x1] * ax * ay)


def pixel_grid(out_dims) -> np.ndarray:
    ow, oh = out_dims
    ys, xs = np.mgrid[0:oh, 0:ow]
    return np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)


def warp_image(src: GrayImage, h: np.ndarray, out_dims) -> np.ndarray:
    """Inverse-warp ``src`` through ``h`` (src -> out) with bilinear sampling and edge clamping.

    Returns float64 intensities.
    """
    ow, oh = out_dims
    sp = project_points(np.linalg.inv(h), pixel_grid(out_dims))
    return sample_bilinear(src, sp[:, 0], sp[:, 1]).reshape(oh, ow)


@dataclass(frozen=True)
class NoiseConfig:
    sigma: float = 0.0
    gain: float = 0.0      # illumination gain drawn from [1 - gain, 1 + gain]


@dataclass
class SyntheticSequence:
    panorama: GrayImage
    frames: list
    homographies: list     # panorama -> frame, one per frame
    poses: list
    noise: NoiseConfig
    frame_dims: tuple[int, int]
    seed: int
    gains: list = field(default_factory=list)

    def __len__(self):
        return len(self.frames)

    def template_homography(self, i: int, rect) -> np.ndarray:
        """Ground truth mapping template coordinates of ``rect`` into frame ``i``."""
        return self.homographies[i] @ translation(rect[0], rect[1])


def _check_inside(h: np.ndarray, frame_dims, pano_dims, i: int) -> None:
    fw, fh = frame_dims
    corners = np.array([(0, 0), (fw - 1, 0), (fw - 1, fh - 1), (0, fh - 1)], np.float64)
    back = project_points(np.linalg.inv(h), corners)
    pw, ph = pano_dims
    if not np.isfinite(back).all() or back[:, 0].min() < -1e-6 or back[:, 1].min() < -1e-6 \
            or back[:, 0].max() > pw - 1 + 1e-6 or back[:, 1].max() > ph - 1 + 1e-6:
        raise ScriptError(i, "view leaves the panorama")


def render_frame(panorama: GrayImage, h: np.ndarray, frame_dims, noise: NoiseConfig,
                 rng: np.random.Generator):
    img = warp_image(panorama, h, frame_dims)
    gain = 1.0
    if noise.gain:
        gain = float(rng.uniform(1 - noise.gain, 1 + noise.gain))
        img = img * gain
    if noise.sigma:
        img = img + rng.normal(0, noise.sigma, img.shape)
    return GrayImage(np.clip(np.rint(img), 0, 255).astype(np.uint8)), gain


def generate_sequence(panorama: GrayImage, motion_script, frame_dims=(640, 480),
                      noise: NoiseConfig = NoiseConfig(), seed: int = 0) -> SyntheticSequence:
    """Render every pose of ``motion_script`` with exact per-frame homographies."""
    homs, frames, gains = [], [], []
    pano_dims = (panorama.width, panorama.height)
    for i, pose in enumerate(motion_script):
        h = pose if isinstance(pose, np.ndarray) else pose_homography(pose, frame_dims)
        _check_inside(h, frame_dims, pano_dims, i)
        homs.append(h)
    for i, h in enumerate(homs):
        rng = np.random.default_rng([seed, i])
        frame, gain = render_frame(panorama, h, frame_dims, noise, rng)
        frames.append(frame)
        gains.append(gain)
    return SyntheticSequence(panorama, frames, homs, list(motion_script), noise, tuple(frame_dims), seed, gains)


def retexture(img: GrayImage, xy: np.ndarray, fraction: float, rng: np.random.Generator,
              radius: int = 8) -> tuple[GrayImage, np.ndarray]:
    """Overwrite a square of random texture over ``fraction`` of the points in ``xy``.

    Returns the new image and the indices that were corrupted.
    """
    xy = np.asarray(xy, np.float64).reshape(-1, 2)
    n = int(round(fraction * len(xy)))
    if n == 0:
        return img, np.zeros(0, np.int64)
    pick = np.sort(rng.choice(len(xy), size=n, replace=False))
    data = img.data.copy()
    h, w = data.shape
    for i in pick:
        x, y = int(round(xy[i, 0])), int(round(xy[i, 1]))
        x0, y0 = max(x - radius, 0), max(y - radius, 0)
        x1, y1 = min(x + radius + 1, w), min(y + radius + 1, h)
        data[y0:y1, x0:x1] = rng.integers(0, 256, (y1 - y0, x1 - x0), dtype=np.uint8)
    return GrayImage(data), pick


def random_homography(rng: np.random.Generator, center, max_angle: float = 0.15, max_scale: float = 0.1,
                      max_tilt: float = 2e-4, max_shift: float = 20.0) -> np.ndarray:
    """Mild perspective distortion about ``center``."""
    cx, cy = center
    a = rng.uniform(-max_angle, max_angle)
    s = 1 + rng.uniform(-max_scale, max_scale)
    tx, ty = rng.uniform(-max_shift, max_shift, 2)
    px, py = rng.uniform(-max_tilt, max_tilt, 2)
    c, sn = math.cos(a), math.sin(a)
    core = np.array([[s * c, -s * sn, 0], [s * sn, s * c, 0], [px, py, 1.0]])
    h = translation(cx + tx, cy + ty) @ core @ translation(-cx, -cy)
    return h / h[2, 2]
