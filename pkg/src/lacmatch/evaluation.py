"""Benchmarks that score the matcher against synthetic ground truth.

All randomness is seeded; two runs with the same configuration write the
same CSV bytes (timing columns aside).
"""

from __future__ import annotations

import csv
import io
import logging
import statistics
import time
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources

import numpy as np

from lacmatch.features import Keypoints, PatchPairSample, describe_beblid, describe_brief, detect_keypoints
from lacmatch.features.beblid import (
    BeblidModel, _patch_stack, _pool_features, build_candidate_pool, extract_patches, load_model, sample_pool,
    train_beblid,
)
from lacmatch.features.fast import PATCH_RADIUS, compute_orientations
from lacmatch.homography import inlier_rate, project_points, ransac, degensac
from lacmatch.imagecore import GrayImage, Point2, compute_integral
from lacmatch.lac import (
    FeatureConfig, LabelProjector, LacConfig, PipelineConfig, segment_templates, whole_panorama_template,
)
from lacmatch.matching import GmsConfig, brute_force_match, gms_filter
from lacmatch.synthetic import (
    NoiseConfig, SyntheticSequence, ViewPose, dwell_script, generate_sequence, pan_script, pixel_grid, random_homography,
    render_frame, sample_bilinear, retexture, synthetic_labels, synthetic_panorama,
)
from lacmatch.topology import build_topology

log = logging.getLogger(__name__)

VARIANTS = {
    "BRIEF+RANSAC": ("brief", False, "ransac"),
    "BRIEF+GMS+RANSAC": ("brief", True, "ransac"),
    "BEBLID+GMS+RANSAC": ("beblid", True, "ransac"),
    "BEBLID+GMS+DEGENSAC": ("beblid", True, "degensac"),
}

# Reference figures from the original workshop footage; not reproducible here.
REFERENCE_TABLE = {
    "BRIEF+RANSAC": (0.1618, 0.16),
    "BRIEF+GMS+RANSAC": (0.6686, 0.22),
    "BEBLID+GMS+RANSAC": (0.6977, 0.33),
    "BEBLID+GMS+DEGENSAC": (0.9203, 0.39),
}


def fmt(v: float) -> str:
    return f"{v:.6f}"


# -- BEBLID model -----------------------------------------------------------

def make_patch_pairs(images, n_pairs: int, seed: int = 0, positive_fraction: float = 0.5,
                     side: int = 32, noise: NoiseConfig = NoiseConfig(5.0, 0.1), jitter: float = 1.0,
                     retexture_fraction: float = 0.0):
    """Patch pairs from random mild warps of ``images``.

    Positives are a keypoint and its (slightly jittered) warped projection;
    negatives pair it with an unrelated keypoint of the warped image.
    """
    rng = np.random.default_rng(seed)
    images = list(images)
    per_image = int(np.ceil(n_pairs / len(images)))
    out = []
    for img in images:
        h = random_homography(rng, (img.width / 2, img.height / 2))
        warped, _ = render_frame(img, h, (img.width, img.height), noise, rng)
        src = detect_keypoints(img, 20, 4 * per_image)
        if retexture_fraction:
            wk = detect_keypoints(warped, 20, 4 * per_image)
            warped, _ = retexture(warped, wk.xy, retexture_fraction, rng)
        proj = project_points(h, src.xy)
        proj = proj + rng.normal(0, jitter, proj.shape) if jitter else proj
        proj = np.rint(proj)
        m = PATCH_RADIUS
        ok = ((proj[:, 0] >= m) & (proj[:, 1] >= m) & (proj[:, 0] < img.width - m) & (proj[:, 1] < img.height - m))
        src = src[np.nonzero(ok)[0]]
        proj = proj[ok]
        dst = Keypoints(proj, np.ones(len(proj)), compute_orientations(warped, proj))
        xp = extract_patches(img, src, side)
        yp = extract_patches(warped, dst, side)
        n = min(per_image, len(src))
        order = rng.permutation(len(src))[:n]
        for i in order:
            if rng.random() < positive_fraction:
                out.append(PatchPairSample(GrayImage(xp[i]), GrayImage(yp[i]), 1))
            else:
                j = int(rng.integers(len(src)))
                while j == i and len(src) > 1:
                    j = int(rng.integers(len(src)))
                out.append(PatchPairSample(GrayImage(xp[i]), GrayImage(yp[j]), -1))
    return out[:n_pairs]


def train_default_model(K: int = 256, n_pairs: int = 2400, n_candidates: int = 3000, seed: int = 7) -> BeblidModel:
    """Train on warped crops of synthetic panoramas from the benchmark's texture family."""
    images = [synthetic_panorama(480, 480, seed=1000 + i) for i in range(6)]
    samples = make_patch_pairs(images, n_pairs, seed)
    pool = sample_pool(build_candidate_pool(32), n_candidates, seed)
    return train_beblid(samples, K, 1.0, pool)


@lru_cache(maxsize=1)
def default_beblid_model() -> BeblidModel:
    path = resources.files("lacmatch.data").joinpath("beblid_synthetic.lacb")
    with resources.as_file(path) as p:
        return load_model(p)


def patch_bits(model: BeblidModel, patches) -> np.ndarray:
    """(N, K) boolean descriptor bits of already-steered patches."""
    p1, p2, s, t = model.arrays()
    pool = np.column_stack([p1, p2, s])
    f = _pool_features(_patch_stack(patches), pool, model.patch_side).T
    return f <= t


def hamming_auc(model_or_none, samples, rng: np.random.Generator | None = None) -> float:
    """Patch-verification AUC with -Hamming distance as score.

    ``model_or_none=None`` scores with uniformly random 256-bit strings.
    """
    labels = np.array([s.label for s in samples])
    if model_or_none is None:
        rng = rng or np.random.default_rng(0)
        dist = rng.binomial(256, 0.5, len(samples)).astype(np.float64)
    else:
        bx = patch_bits(model_or_none, [smp.x for smp in samples])
        by = patch_bits(model_or_none, [smp.y for smp in samples])
        dist = (bx != by).sum(axis=1).astype(np.float64)
    return auc(-dist, labels > 0)


def auc(score: np.ndarray, positive: np.ndarray) -> float:
    """Mann-Whitney AUC, ties counted half."""
    from scipy.stats import rankdata

    ranks = rankdata(score)
    n_pos = int(positive.sum())
    n_neg = len(score) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


# -- inlier-rate benchmark --------------------------------------------------

@dataclass(frozen=True)
class BenchConfig:
    panorama_dims: tuple[int, int] = (1600, 1100)
    template_rect: tuple[int, int, int, int] = (150, 120, 1280, 860)
    frames_per_rep: int = 3
    reps: int = 10
    noise: NoiseConfig = NoiseConfig(5.0, 0.1)
    retexture_fraction: float = 0.3
    retexture_radius: int = 4
    max_keypoints: int = 2500
    fast_threshold: int = 20
    reproj_tol: float = 3.0
    gt_tol: float = 3.0
    max_angle: float = 0.15
    max_scale: float = 0.1
    max_tilt: float = 2e-4
    radial_k1: float = 0.015   # barrel distortion of the live camera, see radial_undistort
    seed: int = 0
    identity: bool = False     # frames equal the template, no noise, no corruption


@dataclass
class BenchFrame:
    image: GrayImage
    truth: np.ndarray          # template -> undistorted frame
    keypoints: Keypoints
    radial_k1: float = 0.0

    def undistorted(self, xy: np.ndarray) -> np.ndarray:
        return radial_undistort(xy, (self.image.width, self.image.height), self.radial_k1)


def radial_undistort(xy: np.ndarray, dims, k1: float) -> np.ndarray:
    """Map observed frame pixels to ideal pinhole pixels.

    ``p_u = c + (p - c) * (1 + k1 * (r / r0)^2)`` with ``c`` the image centre
    and ``r0`` the half diagonal, so ``k1 * r0`` is the corner shift in px.
    """
    xy = np.asarray(xy, np.float64).reshape(-1, 2)
    if k1 == 0.0:
        return xy
    w, h = dims
    c = np.array([(w - 1) / 2, (h - 1) / 2])
    r0 = float(np.hypot(*c))
    d = xy - c
    r2 = (d ** 2).sum(axis=1, keepdims=True) / (r0 * r0)
    return c + d * (1 + k1 * r2)


def render_distorted(template: GrayImage, truth: np.ndarray, k1: float, noise: NoiseConfig,
                     rng: np.random.Generator) -> GrayImage:
    dims = (template.width, template.height)
    if k1 == 0.0:
        return render_frame(template, truth, dims, noise, rng)[0]
    src = project_points(np.linalg.inv(truth), radial_undistort(pixel_grid(dims), dims, k1))
    img = sample_bilinear(template, src[:, 0], src[:, 1]).reshape(template.height, template.width)
    if noise.gain:
        img = img * rng.uniform(1 - noise.gain, 1 + noise.gain)
    if noise.sigma:
        img = img + rng.normal(0, noise.sigma, img.shape)
    return GrayImage(np.clip(np.rint(img), 0, 255).astype(np.uint8))


@dataclass
class BenchCase:
    template: GrayImage
    frames: list


def make_bench_case(cfg: BenchConfig, rep: int) -> BenchCase:
    pano = synthetic_panorama(*cfg.panorama_dims, seed=cfg.seed)
    x, y, w, h = cfg.template_rect
    template = pano.crop(x, y, w, h)
    frames = []
    for f in range(cfg.frames_per_rep):
        rng = np.random.default_rng([cfg.seed, rep, f])
        if cfg.identity:
            frames.append(BenchFrame(template, np.eye(3), detect_keypoints(template, cfg.fast_threshold, cfg.max_keypoints)))
            continue
        truth = random_homography(rng, (w / 2, h / 2), cfg.max_angle, cfg.max_scale, cfg.max_tilt)
        image = render_distorted(template, truth, cfg.radial_k1, cfg.noise, rng)
        kps = detect_keypoints(image, cfg.fast_threshold, cfg.max_keypoints)
        if cfg.retexture_fraction:
            image, _ = retexture(image, kps.xy, cfg.retexture_fraction, rng, cfg.retexture_radius)
            kps = Keypoints(kps.xy, kps.response, compute_orientations(image, kps.xy))
        frames.append(BenchFrame(image, truth, kps, cfg.radial_k1))
    return BenchCase(template, frames)


def _describe(img: GrayImage, kps: Keypoints, kind: str, model):
    if kind == "brief":
        return describe_brief(img, kps)
    return describe_beblid(compute_integral(img), kps, model)


def true_match_mask(matches, frame_kps, template_kps, truth, tol=3.0, frame: BenchFrame | None = None) -> np.ndarray:
    proj = project_points(truth, template_kps.xy[matches.train_idx])
    seen = frame_kps.xy[matches.query_idx]
    if frame is not None:
        seen = frame.undistorted(seen)
    return np.linalg.norm(proj - seen, axis=1) <= tol


@dataclass
class VariantRun:
    variant: str
    rep: int
    inlier_rates: list = field(default_factory=list)
    ms: list = field(default_factory=list)
    raw_precision: list = field(default_factory=list)
    filtered_precision: list = field(default_factory=list)
    raw_counts: list = field(default_factory=list)
    filtered_counts: list = field(default_factory=list)
    failed: int = 0

    @property
    def mean_inlier_rate(self) -> float:
        return float(np.mean(self.inlier_rates)) if self.inlier_rates else 0.0

    @property
    def ms_per_frame(self) -> float:
        return float(np.mean(self.ms)) if self.ms else 0.0


def run_variant(case: BenchCase, variant: str, rep: int, cfg: BenchConfig, model=None,
                template_cache: dict | None = None) -> VariantRun:
    kind, use_gms, est = VARIANTS[variant]
    model = model if model is not None else (default_beblid_model() if kind == "beblid" else None)
    cache = template_cache if template_cache is not None else {}
    if kind not in cache:
        tk = detect_keypoints(case.template, cfg.fast_threshold, cfg.max_keypoints)
        cache[kind] = (tk, _describe(case.template, tk, kind, model))
    tkps, tdesc = cache[kind]
    run = VariantRun(variant, rep)
    dims = (case.template.width, case.template.height)
    for fi, fr in enumerate(case.frames):
        t0 = time.perf_counter()
        # detection is shared by all variants; time it here so each row pays for it
        detect_keypoints(fr.image, cfg.fast_threshold, cfg.max_keypoints)
        fdesc = _describe(fr.image, fr.keypoints, kind, model)
        raw = brute_force_match(fdesc, tdesc, True)
        matches = raw
        if use_gms:
            matches, _ = gms_filter(raw, fr.keypoints, tkps, (fr.image.width, fr.image.height), dims)
        fn = ransac if est == "ransac" else degensac
        if len(matches) >= 4:
            res = fn(matches, fr.keypoints, tkps, cfg.reproj_tol, 2000, 0.995, seed=cfg.seed * 1000 + rep * 10 + fi)
            rate = inlier_rate(res) if res.ok else 0.0
            if not res.ok:
                run.failed += 1
        else:
            rate = 0.0
            run.failed += 1
        run.ms.append((time.perf_counter() - t0) * 1000.0)
        run.inlier_rates.append(rate)
        gt_raw = true_match_mask(raw, fr.keypoints, tkps, fr.truth, cfg.gt_tol, fr)
        gt_kept = true_match_mask(matches, fr.keypoints, tkps, fr.truth, cfg.gt_tol, fr)
        run.raw_precision.append(float(gt_raw.mean()) if len(raw) else 0.0)
        run.filtered_precision.append(float(gt_kept.mean()) if len(matches) else 0.0)
        run.raw_counts.append(len(raw))
        run.filtered_counts.append(len(matches))
    return run


def benchmark_inlier_rates(cfg: BenchConfig = BenchConfig(), variants=tuple(VARIANTS), model=None) -> list[VariantRun]:
    """Every variant on every repetition; one :class:`VariantRun` per (variant, rep)."""
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}")
    runs = []
    for rep in range(cfg.reps):
        case = make_bench_case(cfg, rep)
        cache: dict = {}
        for v in variants:
            try:
                runs.append(run_variant(case, v, rep, cfg, model, cache))
            except Exception:  # a broken variant must not sink the table
                log.exception("variant %s failed on rep %d", v, rep)
                bad = VariantRun(v, rep)
                bad.failed = cfg.frames_per_rep
                runs.append(bad)
    return runs


@dataclass
class SummaryRow:
    variant: str
    mean_inlier_rate: float
    mean_ms: float
    median_ms: float
    failed: bool


def summarise(runs) -> list[SummaryRow]:
    rows = []
    for v in dict.fromkeys(r.variant for r in runs):
        mine = [r for r in runs if r.variant == v]
        ms = [m for r in mine for m in r.ms]
        all_failed = all(r.failed == len(r.inlier_rates) or not r.inlier_rates for r in mine)
        rows.append(SummaryRow(v, float(np.mean([r.mean_inlier_rate for r in mine])),
                               float(np.mean(ms)) if ms else 0.0,
                               float(statistics.median(ms)) if ms else 0.0, all_failed))
    return rows


def rates_csv(runs, timing: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "rep", "mean_inlier_rate", "ms_per_frame"])
    for r in runs:
        w.writerow([r.variant, r.rep, fmt(r.mean_inlier_rate), fmt(r.ms_per_frame if timing else 0.0)])
    return buf.getvalue()


def rates_table(rows) -> str:
    head = f"{'variant':<22} {'inlier rate':>11} {'mean ms':>9} {'median ms':>9}  {'ref rate':>10} {'ref s':>7}"
    lines = [head, "-" * len(head)]
    for r in rows:
        ref = REFERENCE_TABLE.get(r.variant, (float("nan"), float("nan")))
        status = "  FAILED" if r.failed else ""
        lines.append(f"{r.variant:<22} {100 * r.mean_inlier_rate:>10.2f}% {r.mean_ms:>9.1f} {r.median_ms:>9.1f}"
                     f"  {100 * ref[0]:>9.2f}% {ref[1]:>7.2f}{status}")
    return "\n".join(lines) + "\n"


# -- drift ------------------------------------------------------------------

@dataclass
class DriftReport:
    frame_count: int
    label_ids: list
    rel_x: dict                 # label id -> list (len frame_count) of x / width * 100, NaN when absent
    variance: dict              # label id -> variance of its finite rel_x values
    displacement: dict          # label id -> list of (frame, px) over consecutive ok frames
    rows: list                  # (frame, label, rel_x, x, y, stale)

    @property
    def total_variance(self) -> float:
        return float(sum(self.variance.values()))

    @property
    def mean_displacement(self) -> float:
        vals = [d for series in self.displacement.values() for _, d in series]
        return float(np.mean(vals)) if vals else 0.0

    def restricted(self, ids) -> "DriftReport":
        ids = [i for i in self.label_ids if i in set(ids)]
        return DriftReport(self.frame_count, ids, {i: self.rel_x[i] for i in ids},
                           {i: self.variance[i] for i in ids}, {i: self.displacement[i] for i in ids},
                           [r for r in self.rows if r[1] in set(ids)])


def trace_rows(results, frame_dims, label_ids=None) -> list:
    """``(frame, label, rel_x, x, y, stale)`` for every projected label of every frame."""
    width = float(frame_dims[0])
    rows = []
    for t, r in enumerate(results):
        for i in sorted(r.label_positions):
            if label_ids is not None and i not in label_ids:
                continue
            p = r.label_positions[i]
            rows.append((t, i, p.x / width * 100.0, p.x, p.y, bool(r.stale or not r.ok)))
    return rows


def drift_metrics(results, frame_dims, label_ids=None) -> DriftReport:
    """Relative-x traces (scaled by 100), per-label variance and frame-to-frame displacement."""
    results = list(results)
    ok = [r for r in results if r.ok]
    if len(ok) < 2:
        raise ValueError("drift metrics need at least two successfully matched frames")
    ids = sorted(label_ids if label_ids is not None else {i for r in results for i in r.label_positions})
    n = len(results)
    rows = trace_rows(results, frame_dims, set(ids))
    rel = {i: [float("nan")] * n for i in ids}
    for t, i, rx, _, _, _ in rows:
        rel[i][t] = rx
    variance = {}
    for i in ids:
        vals = np.array([v for v in rel[i] if np.isfinite(v)])
        variance[i] = float(vals.var()) if len(vals) else 0.0
    disp = {i: [] for i in ids}
    prev = None
    for t, r in enumerate(results):
        if not r.ok:
            continue
        if prev is not None:
            for i in ids:
                a, b = prev.label_positions.get(i), r.label_positions.get(i)
                if a is not None and b is not None:
                    disp[i].append((t, float(np.hypot(b.x - a.x, b.y - a.y))))
        prev = r
    return DriftReport(n, ids, rel, variance, disp, rows)


def trace_csv(report_or_rows) -> str:
    rows = report_or_rows.rows if isinstance(report_or_rows, DriftReport) else report_or_rows
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frame", "label_id", "rel_x_times_100", "x", "y", "stale"])
    for t, i, rx, x, y, stale in rows:
        w.writerow([t, i, fmt(rx), fmt(x), fmt(y), int(stale)])
    return buf.getvalue()


def displacement_csv(report: DriftReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frame", "label_id", "euclidean_px"])
    rows = sorted((t, i, d) for i, series in report.displacement.items() for t, d in series)
    for t, i, d in rows:
        w.writerow([t, i, fmt(d)])
    return buf.getvalue()


# -- drift fixtures ---------------------------------------------------------

@dataclass(frozen=True)
class DriftFixtureConfig:
    panorama_dims: tuple[int, int] = (2200, 1300)
    frame_dims: tuple[int, int] = (800, 600)
    n_clusters: int = 4
    per_cluster: int = 4
    n_frames: int = 30
    pan_px: float = 20.0
    jitter: float = 0.5
    noise: NoiseConfig = NoiseConfig(12.0, 0.1)
    max_keypoints: int = 2500
    seed: int = 4


@dataclass
class DriftFixture:
    panorama: GrayImage
    labels: list
    sequence: SyntheticSequence
    k: int


def make_drift_fixture(cfg: DriftFixtureConfig = DriftFixtureConfig(), stationary: bool = False) -> DriftFixture:
    pano = synthetic_panorama(*cfg.panorama_dims, seed=cfg.seed)
    labels = synthetic_labels(cfg.panorama_dims, cfg.n_clusters, cfg.per_cluster, seed=cfg.seed,
                              spread=30.0, margin=220.0, min_sep=400.0)
    # pan across the first cluster
    first = [lab.position for lab in labels[:cfg.per_cluster]]
    cx = float(np.mean([p.x for p in first]))
    cy = float(np.mean([p.y for p in first]))
    fw, fh = cfg.frame_dims
    cx = min(max(cx, fw / 2 + cfg.pan_px + 10), cfg.panorama_dims[0] - fw / 2 - cfg.pan_px - 10)
    cy = min(max(cy, fh / 2 + 10), cfg.panorama_dims[1] - fh / 2 - 10)
    half = 0.0 if stationary else cfg.pan_px / 2
    script = pan_script((cx - half, cy), (cx + half, cy), cfg.n_frames,
                        jitter=0.0 if stationary else cfg.jitter, seed=cfg.seed)
    seq = generate_sequence(pano, script, cfg.frame_dims, cfg.noise, seed=cfg.seed)
    return DriftFixture(pano, labels, seq, cfg.n_clusters)


def visible_labels(fixture: DriftFixture, margin: float = 30.0) -> list[int]:
    """Labels whose true position stays inside every frame."""
    fw, fh = fixture.sequence.frame_dims
    out = []
    for lab in fixture.labels:
        inside = True
        for h in fixture.sequence.homographies:
            p = project_points(h, [(lab.position.x, lab.position.y)])[0]
            if not (margin <= p[0] < fw - margin and margin <= p[1] < fh - margin):
                inside = False
                break
        if inside:
            out.append(lab.id)
    return out


def run_pipeline(fixture: DriftFixture, lac_on: bool, cfg: PipelineConfig = PipelineConfig(), seed: int = 0):
    """Frame results with LAC switched on (clustered templates plus polar refinement) or off."""
    if lac_on:
        templates = segment_templates(fixture.panorama, fixture.labels, fixture.k, cfg.lac.template_size,
                                      cfg.features, seed)
        proj = LabelProjector(templates, fixture.labels, cfg, build_topology(fixture.labels), refine=True)
    else:
        tpl = whole_panorama_template(fixture.panorama, fixture.labels, cfg.features)
        off = replace(cfg, lac=replace(cfg.lac, use_local_area=False, lam=0.0))
        proj = LabelProjector([tpl], fixture.labels, off, None, refine=False)
    return [proj.process(f) for f in fixture.sequence.frames]


@dataclass
class PairedDrift:
    label_ids: list
    on: DriftReport | None
    off: DriftReport | None
    on_results: list
    off_results: list


def common_labels(runs, candidates) -> list[int]:
    """Labels from ``candidates`` projected in every ok frame of every run."""
    return [i for i in candidates
            if all(i in r.label_positions for res in runs for r in res if r.ok)]


def paired_drift(fixture: DriftFixture, cfg: PipelineConfig = PipelineConfig(), seed: int = 0,
                 lac_on: bool = True, lac_off: bool = True) -> PairedDrift:
    on = run_pipeline(fixture, True, cfg, seed) if lac_on else []
    off = run_pipeline(fixture, False, cfg, seed) if lac_off else []
    ids = common_labels([r for r in (on, off) if r], visible_labels(fixture))
    dims = fixture.sequence.frame_dims
    return PairedDrift(ids, drift_metrics(on, dims, ids) if on else None,
                       drift_metrics(off, dims, ids) if off else None, on, off)


def variance_summary_csv(paired: PairedDrift) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label_id", "variance_off", "variance_on", "delta"])
    nan = float("nan")
    for i in paired.label_ids:
        v_off = paired.off.variance[i] if paired.off else nan
        v_on = paired.on.variance[i] if paired.on else nan
        w.writerow([i, fmt(v_off), fmt(v_on), fmt(v_on - v_off)])
    t_off = paired.off.total_variance if paired.off else nan
    t_on = paired.on.total_variance if paired.on else nan
    w.writerow(["total", fmt(t_off), fmt(t_on), fmt(t_on - t_off)])
    d_off = paired.off.mean_displacement if paired.off else nan
    d_on = paired.on.mean_displacement if paired.on else nan
    w.writerow(["mean_displacement", fmt(d_off), fmt(d_on), fmt(d_on - d_off)])
    return buf.getvalue()


def lac_config_for(fixture_cfg: DriftFixtureConfig, **lac_kw) -> PipelineConfig:
    return PipelineConfig(features=FeatureConfig(max_keypoints=fixture_cfg.max_keypoints), lac=LacConfig(**lac_kw))


@dataclass(frozen=True)
class DwellFixtureConfig:
    panorama_dims: tuple[int, int] = (3600, 1000)
    frame_dims: tuple[int, int] = (640, 480)
    n_clusters: int = 6
    per_cluster: int = 3
    template_size: tuple[int, int] = (720, 560)
    dwell: int = 6
    travel: int = 2
    jitter: float = 0.5
    noise: NoiseConfig = NoiseConfig(5.0, 0.1)
    seed: int = 5


def make_dwell_fixture(cfg: DwellFixtureConfig = DwellFixtureConfig()) -> DriftFixture:
    """Clusters strung along the panorama; the camera lingers at each one in turn."""
    from lacmatch.lac import Label

    pw, ph = cfg.panorama_dims
    fw, fh = cfg.frame_dims
    pano = synthetic_panorama(pw, ph, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    xs = np.linspace(fw / 2 + 20, pw - fw / 2 - 20, cfg.n_clusters)
    labels, stops = [], []
    for ci, cx in enumerate(xs):
        cy = ph / 2 + (ph / 2 - fh / 2 - 20) * (0.5 if ci % 2 else -0.5)
        stops.append((float(cx), float(cy)))
        for j in range(cfg.per_cluster):
            p = (cx, cy) + rng.uniform(-90, 90, 2)
            labels.append(Label(len(labels) + 1, f"equip-{ci}-{j}", Point2(float(p[0]), float(p[1]))))
    script = dwell_script(stops, cfg.dwell, cfg.travel, cfg.jitter, cfg.seed)
    return DriftFixture(pano, labels, generate_sequence(pano, script, cfg.frame_dims, cfg.noise, cfg.seed),
                        cfg.n_clusters)


def locality_run(fixture: DriftFixture, cfg: DwellFixtureConfig = DwellFixtureConfig(),
                 pipeline: PipelineConfig = PipelineConfig(), seed: int = 0):
    """Frame results with the local area on; returns ``(results, template_count)``."""
    templates = segment_templates(fixture.panorama, fixture.labels, cfg.n_clusters, cfg.template_size,
                                  pipeline.features, seed)
    proj = LabelProjector(templates, fixture.labels, pipeline, build_topology(fixture.labels))
    return [proj.process(f) for f in fixture.sequence.frames], len(templates)
