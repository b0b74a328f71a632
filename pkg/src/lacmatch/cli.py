"""``lacmatch`` command line: prepare, match, bench, drift, train-beblid, make-fixture.

Exit codes: 0 success, 2 input error, 3 infeasible configuration,
4 missing template cache, 5 internal failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import platform
import sys
from dataclasses import replace
from importlib import metadata
from pathlib import Path

import numpy as np

from lacmatch import __version__
from lacmatch.config import ConfigError, RunConfig, apply, from_dict, load_config

log = logging.getLogger("lacmatch")

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_NO_CACHE, EXIT_INTERNAL = 0, 2, 3, 4, 5
FRAME_SUFFIXES = (".png", ".pgm")
MANIFEST_NAME = "run_manifest.json"


class InputError(Exception):
    pass


class MissingCache(Exception):
    pass


class Infeasible(Exception):
    pass


# -- helpers ----------------------------------------------------------------

def _require_file(path, what: str) -> Path:
    if path is None:
        raise InputError(f"{what} not given")
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} not readable: {p}")
    return p


def _load_image(path):
    from lacmatch.imagecore import load_image

    try:
        return load_image(path)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read image {path}: {exc}") from None


def list_frames(directory) -> list[Path]:
    if directory is None:
        raise InputError("frames directory not given")
    d = Path(directory)
    if not d.is_dir():
        raise InputError(f"frames directory not found: {d}")
    frames = sorted(p for p in d.iterdir() if p.suffix.lower() in FRAME_SUFFIXES)
    if not frames:
        raise InputError(f"no .png/.pgm frames in {d}")
    return frames


def _beblid_model(cfg: RunConfig):
    if cfg.descriptor != "beblid":
        return None
    from lacmatch.evaluation import default_beblid_model
    from lacmatch.features import load_model

    ref = cfg.features.beblid_model
    if ref in (None, "default"):
        return default_beblid_model()
    try:
        return load_model(_require_file(ref, "BEBLID model"))
    except ValueError as exc:
        raise InputError(f"bad BEBLID model {ref}: {exc}") from None


def versions() -> dict:
    out = {"lacmatch": __version__, "python": platform.python_version()}
    for dist in ("numpy", "scipy", "Pillow"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = None
    return out


def write_manifest(out: Path, command: str, options: dict, cfg: RunConfig, extra: dict | None = None) -> Path:
    doc = {
        "command": command,
        "options": options,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "versions": versions(),
    }
    if extra:
        doc["outputs"] = extra
    path = out / MANIFEST_NAME
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=list) + "\n")
    return path


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# -- commands ---------------------------------------------------------------

def cmd_prepare(cfg: RunConfig, opts: dict) -> int:
    from lacmatch.lac import ClusterCountError, InfeasibleCluster, load_labels, save_templates, segment_templates

    labels_path = _require_file(cfg.paths.labels, "labels file")
    try:
        pano_ref, labels = load_labels(labels_path)
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"bad labels file {labels_path}: {exc}") from None
    pano_path = _require_file(cfg.paths.panorama or pano_ref, "panorama")
    panorama = _load_image(pano_path)
    model = _beblid_model(cfg)
    pipe = cfg.pipeline(model)
    k = cfg.lac.k
    if k is not None and k > len(labels):
        raise Infeasible(f"k={k} exceeds the {len(labels)} labels")
    try:
        templates = segment_templates(panorama, labels, k, cfg.lac.template_size, pipe.features, cfg.seed)
    except (InfeasibleCluster, ClusterCountError) as exc:
        raise Infeasible(str(exc)) from None
    except ValueError as exc:
        raise InputError(str(exc)) from None
    cache = Path(cfg.paths.cache or Path(cfg.paths.out) / "cache")
    extra = {"beblid_model": cfg.features.beblid_model, "fast_threshold": cfg.features.fast_threshold,
             "max_keypoints": cfg.features.max_keypoints}
    save_templates(cache, templates, labels, k=len(templates), seed=cfg.seed, panorama=str(pano_path),
                   descriptor=cfg.descriptor, extra=extra)
    print(f"prepared {len(templates)} templates in {cache}")
    return EXIT_OK


def _load_cache(cfg: RunConfig):
    from lacmatch.lac import load_templates

    cache = Path(cfg.paths.cache or Path(cfg.paths.out) / "cache")
    if not (cache / "manifest.json").is_file():
        raise MissingCache(f"no template cache at {cache}; run `lacmatch prepare` first")
    try:
        templates, labels, manifest = load_templates(cache)
    except (OSError, ValueError, KeyError) as exc:
        raise MissingCache(f"template cache at {cache} is unreadable ({exc}); rerun `lacmatch prepare`") from None
    # the frame side must be described exactly like the cached templates
    feats = replace(cfg.features, descriptor=manifest.get("descriptor", "brief"),
                    beblid_model=manifest.get("beblid_model"),
                    fast_threshold=manifest.get("fast_threshold", cfg.features.fast_threshold),
                    max_keypoints=manifest.get("max_keypoints", cfg.features.max_keypoints))
    return templates, labels, manifest, replace(cfg, features=feats)


def draw_overlay(frame, result, names: dict, path: Path) -> None:
    from PIL import Image, ImageDraw

    im = Image.fromarray(frame.data).convert("RGB")
    draw = ImageDraw.Draw(im)
    colour = (160, 160, 160) if result.stale or not result.ok else (255, 40, 40)
    for lid, p in sorted(result.label_positions.items()):
        x, y = p.x, p.y
        draw.ellipse((x - 5, y - 5, x + 5, y + 5), outline=colour, width=2)
        draw.text((x + 8, y - 8), names.get(lid, str(lid)), fill=colour)
    path.parent.mkdir(parents=True, exist_ok=True)
    im.save(path)


def cmd_match(cfg: RunConfig, opts: dict) -> int:
    from lacmatch.evaluation import trace_csv, trace_rows
    from lacmatch.lac import LabelProjector
    from lacmatch.topology import build_topology

    templates, labels, manifest, cfg = _load_cache(cfg)
    frames = list_frames(cfg.paths.frames)
    model = _beblid_model(cfg)
    pipe = cfg.pipeline(model)
    proj = LabelProjector(templates, labels, pipe, build_topology(labels), refine=pipe.lac.lam > 0)
    out = Path(cfg.paths.out)
    names = {lab.id: lab.name for lab in labels}
    results, dims = [], None
    summary = io.StringIO()
    sw = csv.writer(summary, lineterminator="\n")
    sw.writerow(["frame", "file", "status", "template", "matches", "inliers", "candidates"])
    for i, path in enumerate(frames):
        img = _load_image(path)
        if dims is None:
            dims = (img.width, img.height)
        elif dims != (img.width, img.height):
            raise InputError(f"{path.name}: frame size {img.width}x{img.height} differs from {dims[0]}x{dims[1]}")
        res = proj.process(img)
        results.append(res)
        sw.writerow([i, path.name, res.status, "" if res.chosen_template is None else res.chosen_template,
                     res.match_count, res.inlier_count, res.candidates_scored])
        if opts.get("overlay"):
            draw_overlay(img, res, names, out / "overlay" / f"{path.stem}.png")
    _write(out / "trace.csv", trace_csv(trace_rows(results, dims)))
    _write(out / "frames.csv", summary.getvalue())
    missed = sum(1 for r in results if not r.ok)
    write_manifest(out, "match", opts, cfg, {"frames": len(frames), "no_match": missed})
    msg = f"matched {len(frames) - missed}/{len(frames)} frames"
    if missed:
        msg += f"; {missed} no_match frame(s) reused previous positions (stale)"
    print(msg)
    return EXIT_OK


def _bench_case_from_frames(template_path, frames_dir, cfg: RunConfig):
    from lacmatch.evaluation import BenchCase, BenchFrame
    from lacmatch.features import detect_keypoints

    template = _load_image(_require_file(template_path, "benchmark template"))
    frames = list_frames(frames_dir)
    sidecar = Path(frames_dir) / "truth.json"
    if not sidecar.is_file():
        raise InputError(f"ground-truth sidecar missing: {sidecar}")
    truth = json.loads(sidecar.read_text())
    out = []
    for f in frames:
        if f.name not in truth:
            raise InputError(f"{sidecar} has no homography for {f.name}")
        img = _load_image(f)
        h = np.asarray(truth[f.name], dtype=np.float64).reshape(3, 3)
        out.append(BenchFrame(img, h, detect_keypoints(img, cfg.features.fast_threshold, cfg.features.max_keypoints)))
    return BenchCase(template, out)


def cmd_bench(cfg: RunConfig, opts: dict) -> int:
    from lacmatch.evaluation import (
        VARIANTS, BenchConfig, benchmark_inlier_rates, rates_csv, rates_table, run_variant, summarise,
    )

    variants = opts.get("variant") or list(VARIANTS)
    for v in variants:
        if v not in VARIANTS:
            raise InputError(f"unknown variant {v!r}; choose from {', '.join(VARIANTS)}")
    bcfg = BenchConfig(reps=cfg.reps, seed=cfg.seed, max_keypoints=cfg.features.max_keypoints,
                       fast_threshold=cfg.features.fast_threshold, reproj_tol=cfg.homography.reproj_tol)
    model = _beblid_model(replace(cfg, features=replace(cfg.features, descriptor="beblid")))
    if opts.get("frames"):
        case = _bench_case_from_frames(opts.get("template"), opts["frames"], cfg)
        runs = []
        for rep in range(cfg.reps):
            cache: dict = {}
            runs.extend(run_variant(case, v, rep, bcfg, model, cache) for v in variants)
    else:
        runs = benchmark_inlier_rates(bcfg, variants, model)
    out = Path(cfg.paths.out)
    rows = summarise(runs)
    _write(out / "rates.csv", rates_csv(runs, timing=not opts.get("no_timing")))
    table = rates_table(rows)
    _write(out / "rates.txt", table)
    write_manifest(out, "bench", opts, cfg)
    print(table, end="")
    return EXIT_OK


def cmd_drift(cfg: RunConfig, opts: dict) -> int:
    from lacmatch.evaluation import (
        DriftFixtureConfig, displacement_csv, make_drift_fixture, paired_drift, trace_csv, variance_summary_csv,
    )

    if opts.get("lac_off_only") and opts.get("lac_on_only"):
        raise InputError("--lac-off-only and --lac-on-only exclude each other")
    fcfg = replace(DriftFixtureConfig(), max_keypoints=cfg.features.max_keypoints)
    fixture = make_drift_fixture(fcfg, stationary=bool(opts.get("stationary")))
    pipe = cfg.pipeline(_beblid_model(cfg))
    paired = paired_drift(fixture, pipe, cfg.seed, lac_on=not opts.get("lac_off_only"),
                          lac_off=not opts.get("lac_on_only"))
    out = Path(cfg.paths.out)
    for name, rep in (("on", paired.on), ("off", paired.off)):
        if rep is None:
            continue
        _write(out / name / "trace.csv", trace_csv(rep))
        _write(out / name / "displacement.csv", displacement_csv(rep))
    summary = variance_summary_csv(paired)
    _write(out / "variance_summary.csv", summary)
    write_manifest(out, "drift", opts, cfg, {"labels": paired.label_ids})
    print(summary, end="")
    return EXIT_OK


def _read_pairs(directory) -> list:
    from lacmatch.features import PatchPairSample

    d = Path(directory)
    index = d / "pairs.csv"
    if not index.is_file():
        raise InputError(f"patch-pair index missing: {index}")
    samples = []
    with index.open(newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                label = int(row["label"])
                samples.append(PatchPairSample(_load_image(d / row["x"]), _load_image(d / row["y"]), label))
            except (KeyError, ValueError) as exc:
                raise InputError(f"{index}: bad row {row}: {exc}") from None
    return samples


def cmd_train_beblid(cfg: RunConfig, opts: dict) -> int:
    from lacmatch.evaluation import make_patch_pairs
    from lacmatch.features import TrainingError, save_model, train_beblid
    from lacmatch.features.beblid import build_candidate_pool, sample_pool
    from lacmatch.synthetic import synthetic_panorama

    if opts.get("pairs"):
        samples = _read_pairs(opts["pairs"])
    else:
        images = [synthetic_panorama(480, 480, seed=cfg.seed * 100 + i) for i in range(6)]
        samples = make_patch_pairs(images, opts.get("synthetic") or 2400, cfg.seed)
    if not samples:
        raise InputError("no training pairs")
    side = samples[0].x.width
    pool = sample_pool(build_candidate_pool(side), opts.get("candidates") or 3000, cfg.seed)
    try:
        model = train_beblid(samples, opts.get("K") or 256, opts.get("gamma") or 1.0, pool)
    except TrainingError as exc:
        raise InputError(str(exc)) from None
    out = Path(cfg.paths.out)
    target = Path(opts.get("model_out") or out / "beblid.lacb")
    target.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, target)
    write_manifest(out, "train-beblid", opts, cfg, {"model": str(target)})
    h = model.loss_history
    print(f"trained K={model.K} on {len(samples)} pairs; loss {h[0]:.4f} -> {h[-1]:.4f}; wrote {target}")
    return EXIT_OK


def cmd_make_fixture(cfg: RunConfig, opts: dict) -> int:
    """Write a synthetic scene to disk, with labels.json beside the panorama and a numbered frame directory."""
    from lacmatch.evaluation import DriftFixtureConfig, make_drift_fixture
    from lacmatch.imagecore import save_image
    from lacmatch.synthetic import NoiseConfig, generate_sequence, translation

    out = Path(cfg.paths.out)
    kind = opts.get("kind") or "pan"
    fcfg = DriftFixtureConfig(seed=cfg.seed if opts.get("seed_fixture") else DriftFixtureConfig().seed)
    fixture = make_drift_fixture(fcfg, stationary=kind == "stationary")
    seq = fixture.sequence
    if kind == "identity":
        # a still camera whose frame grid coincides with panorama pixels
        fw, fh = fcfg.frame_dims
        first = fixture.labels[0].position
        x0 = int(min(max(first.x - fw // 2, 0), fcfg.panorama_dims[0] - fw))
        y0 = int(min(max(first.y - fh // 2, 0), fcfg.panorama_dims[1] - fh))
        poses = [translation(-x0, -y0)] * (opts.get("frames_n") or 5)
        seq = generate_sequence(fixture.panorama, poses, fcfg.frame_dims, NoiseConfig(), cfg.seed)
    elif opts.get("frames_n"):
        seq = replace(seq, frames=seq.frames[:opts["frames_n"]], homographies=seq.homographies[:opts["frames_n"]])
    out.mkdir(parents=True, exist_ok=True)
    save_image(fixture.panorama, out / "panorama.png")
    doc = {"panorama": "panorama.png",
           "labels": [{"id": lab.id, "name": lab.name, "x": lab.position.x, "y": lab.position.y}
                      for lab in fixture.labels]}
    _write(out / "labels.json", json.dumps(doc, indent=2) + "\n")
    frames_dir = out / "frames"
    frames_dir.mkdir(exist_ok=True)
    truth = {}
    for i, (frame, h) in enumerate(zip(seq.frames, seq.homographies), start=1):
        name = f"frame_{i:06d}.png"
        save_image(frame, frames_dir / name)
        truth[name] = np.asarray(h).round(12).tolist()
    _write(frames_dir / "truth.json", json.dumps(truth, indent=1) + "\n")
    print(f"wrote {len(seq.frames)} {kind} frames, panorama and labels to {out}")
    return EXIT_OK


COMMANDS = {
    "prepare": cmd_prepare,
    "match": cmd_match,
    "bench": cmd_bench,
    "drift": cmd_drift,
    "train-beblid": cmd_train_beblid,
    "make-fixture": cmd_make_fixture,
}

# option dest -> (config section, key)
CONFIG_FLAGS = {
    "labels": ("paths", "labels"), "panorama": ("paths", "panorama"), "frames": ("paths", "frames"),
    "cache": ("paths", "cache"), "out": ("paths", "out"),
    "fast_threshold": ("features", "fast_threshold"), "max_keypoints": ("features", "max_keypoints"),
    "descriptor": ("features", "descriptor"), "beblid_model": ("features", "beblid_model"),
    "grid": ("gms", None), "gms_alpha": ("gms", "alpha"), "with_rotation": ("gms", "with_rotation"),
    "estimator": ("homography", "estimator"), "reproj_tol": ("homography", "reproj_tol"),
    "max_iter": ("homography", "max_iter"), "confidence": ("homography", "confidence"),
    "k": ("lac", "k"), "template_size": ("lac", "template_size"), "history": ("lac", "history"),
    "beta": ("lac", "beta"), "lam": ("lac", "lam"), "no_local_area": ("lac", "use_local_area"),
    "seed": ("run", "seed"), "reps": ("run", "reps"),
}


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = {"default": argparse.SUPPRESS} if suppress else {}
    p.add_argument("--config", metavar="PATH", help="INI config file", **d)
    p.add_argument("--manifest", metavar="PATH", help="replay a previous run from its run_manifest.json", **d)
    p.add_argument("--seed", type=int, metavar="N", **d)
    p.add_argument("--out", metavar="DIR", help="output directory (default: out)", **d)
    p.add_argument("--overlay", action="store_true", help="write annotated frames (match)", **d)
    p.add_argument("--reps", type=int, metavar="N", help="benchmark repetitions (default 10)", **d)
    p.add_argument("-v", "--verbose", action="store_true", **d)


def _pipeline_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline")
    g.add_argument("--fast-threshold", type=int)
    g.add_argument("--max-keypoints", type=int)
    g.add_argument("--descriptor", choices=("auto", "brief", "beblid"))
    g.add_argument("--beblid-model", metavar="PATH", help='model file, or "default" for the bundled one')
    g.add_argument("--grid", metavar="RxC", help="GMS grid, e.g. 20x20")
    g.add_argument("--gms-alpha", type=float)
    g.add_argument("--with-rotation", action="store_true", default=None)
    g.add_argument("--estimator", choices=("ransac", "degensac"))
    g.add_argument("--reproj-tol", type=float)
    g.add_argument("--max-iter", type=int)
    g.add_argument("--confidence", type=float)
    g.add_argument("--k", type=int)
    g.add_argument("--template-size", metavar="WxH")
    g.add_argument("--history", type=int)
    g.add_argument("--beta", type=float)
    g.add_argument("--lam", type=float)
    g.add_argument("--no-local-area", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lacmatch", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    parser.add_argument("--version", action="version", version=f"lacmatch {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("prepare", help="cluster labels, cut templates, cache their features")
    p.add_argument("--labels", metavar="JSON")
    p.add_argument("--panorama", metavar="IMAGE", help="overrides the path inside the labels file")
    p.add_argument("--cache", metavar="DIR")
    _pipeline_flags(p)

    p = sub.add_parser("match", help="project labels into every frame of a directory")
    p.add_argument("--frames", metavar="DIR")
    p.add_argument("--cache", metavar="DIR")
    _pipeline_flags(p)

    p = sub.add_parser("bench", help="inlier-rate / timing table over the four variants")
    p.add_argument("--variant", action="append", metavar="NAME")
    p.add_argument("--no-timing", action="store_true", help="write 0 in ms_per_frame for byte-stable CSVs")
    p.add_argument("--frames", metavar="DIR", help="frames with a truth.json sidecar instead of the synthetic set")
    p.add_argument("--template", metavar="IMAGE", help="template image the sidecar homographies start from")
    _pipeline_flags(p)

    p = sub.add_parser("drift", help="LAC-on vs LAC-off label drift on the jittered pan fixture")
    p.add_argument("--lac-off-only", action="store_true")
    p.add_argument("--lac-on-only", action="store_true")
    p.add_argument("--stationary", action="store_true", help="fixed camera instead of the jittered pan")
    _pipeline_flags(p)

    p = sub.add_parser("train-beblid", help="train a BEBLID model from a patch-pair directory")
    p.add_argument("--pairs", metavar="DIR", help="directory with pairs.csv (x,y,label) and patch images")
    p.add_argument("--synthetic", type=int, metavar="N", help="train on N generated pairs instead")
    p.add_argument("--K", type=int, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--candidates", type=int, default=None)
    p.add_argument("--model-out", metavar="PATH")

    p = sub.add_parser("make-fixture", help="write a synthetic panorama, labels and frames")
    p.add_argument("--kind", choices=("pan", "stationary", "identity"), default="pan")
    p.add_argument("--frames-n", type=int, metavar="N")
    p.add_argument("--seed-fixture", action="store_true", help="use --seed for the scene as well")

    for action in sub.choices.values():
        _global_flags(action, suppress=True)
    return parser


def resolve(args: argparse.Namespace) -> tuple[str, RunConfig, dict]:
    """Defaults, then the config file (or manifest), then command-line flags."""
    given = {k: v for k, v in vars(args).items() if v is not None}
    if given.get("manifest"):
        mpath = Path(given["manifest"])
        try:
            doc = json.loads(mpath.read_text())
            command, opts, cfg = doc["command"], dict(doc["options"]), from_dict(doc["config"])
        except (OSError, ValueError, KeyError) as exc:
            raise InputError(f"cannot replay manifest {mpath}: {exc}") from None
        if given.get("out"):
            cfg = apply(cfg, "paths", {"out": given["out"]})
        return command, cfg, opts
    command = given.get("command")
    if command is None:
        raise InputError("no command given (see --help)")
    cfg = load_config(given["config"]) if given.get("config") else RunConfig()
    for dest, (section, key) in CONFIG_FLAGS.items():
        if dest not in given or given[dest] is False and dest in ("with_rotation", "no_local_area"):
            continue
        val = given[dest]
        if dest == "grid":
            try:
                rows, cols = (int(v) for v in str(val).lower().split("x"))
            except ValueError:
                raise ConfigError(f"--grid expects RxC, got {val!r}") from None
            cfg = apply(cfg, "gms", {"grid_rows": rows, "grid_cols": cols})
        elif dest == "no_local_area":
            cfg = apply(cfg, "lac", {"use_local_area": not val})
        else:
            cfg = apply(cfg, section, {key: val})
    opts = {k: v for k, v in given.items()
            if k not in CONFIG_FLAGS and k not in ("config", "manifest", "command", "verbose")}
    opts.setdefault("overlay", False)
    return command, cfg, opts


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        command, cfg, opts = resolve(args)
        cfg.validate()
        Path(cfg.paths.out).mkdir(parents=True, exist_ok=True)
        return COMMANDS[command](cfg, opts)
    except (InputError, ConfigError) as exc:
        print(f"lacmatch: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Infeasible as exc:
        print(f"lacmatch: infeasible configuration: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except MissingCache as exc:
        print(f"lacmatch: {exc}", file=sys.stderr)
        return EXIT_NO_CACHE
    except Exception as exc:  # anything else is a bug or an environment failure
        log.debug("internal failure", exc_info=True)
        print(f"lacmatch: internal failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
