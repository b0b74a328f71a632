import csv
import json

import numpy as np
import pytest

from lacmatch.cli import main


def run(*argv):
    return main([str(a) for a in argv])


def read_trace(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("identity")
    assert run("make-fixture", "--kind", "identity", "--frames-n", 2, "--out", root) == 0
    return root


@pytest.fixture(scope="module")
def cache_dir(fixture_dir):
    cache = fixture_dir / "cache"
    assert run("prepare", "--labels", fixture_dir / "labels.json", "--cache", cache, "--k", 4,
               "--max-keypoints", 1500, "--out", fixture_dir / "prep") == 0
    return cache


def test_prepare_writes_one_template_per_cluster(cache_dir):
    manifest = json.loads((cache_dir / "manifest.json").read_text())
    assert manifest["k"] == 4 and len(manifest["templates"]) == 4
    assert sorted(i for t in manifest["templates"] for i in t["labels"]) == list(range(1, 17))
    assert all((cache_dir / t["blob"]).exists() for t in manifest["templates"])


def test_identity_frames_put_labels_where_they_belong(fixture_dir, cache_dir, tmp_path):
    out = tmp_path / "m"
    assert run("match", "--frames", fixture_dir / "frames", "--cache", cache_dir, "--out", out, "--overlay") == 0
    truth = json.loads((fixture_dir / "frames" / "truth.json").read_text())
    labels = {d["id"]: (d["x"], d["y"]) for d in json.loads((fixture_dir / "labels.json").read_text())["labels"]}
    rows = read_trace(out / "trace.csv")
    assert rows and all(r["stale"] == "0" for r in rows)
    for r in rows:
        h = np.array(truth[f"frame_{int(r['frame']) + 1:06d}.png"])
        x, y = labels[int(r["label_id"])]
        want = h @ (x, y, 1.0)
        assert abs(float(r["x"]) - want[0] / want[2]) < 0.5 and abs(float(r["y"]) - want[1] / want[2]) < 0.5
    assert len(list((out / "overlay").glob("*.png"))) == 2
    assert (out / "run_manifest.json").exists()


def test_repeat_and_replay_are_byte_identical(fixture_dir, cache_dir, tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    args = ("match", "--frames", fixture_dir / "frames", "--cache", cache_dir, "--seed", 3)
    assert run(*args, "--out", a) == 0
    assert run(*args, "--out", b) == 0
    assert run("--manifest", a / "run_manifest.json", "--out", c) == 0
    first = (a / "trace.csv").read_bytes()
    assert first == (b / "trace.csv").read_bytes() == (c / "trace.csv").read_bytes()
    ma = json.loads((a / "run_manifest.json").read_text())
    mc = json.loads((c / "run_manifest.json").read_text())
    assert ma["config"]["seed"] == 3 and {k: v for k, v in ma.items() if k != "config"} == \
        {k: v for k, v in mc.items() if k != "config"}


def test_missing_cache_exits_4(fixture_dir, tmp_path):
    assert run("match", "--frames", fixture_dir / "frames", "--cache", tmp_path / "nope", "--out", tmp_path) == 4


def test_too_many_clusters_exits_3(fixture_dir, tmp_path):
    assert run("prepare", "--labels", fixture_dir / "labels.json", "--cache", tmp_path / "c", "--k", 17,
               "--out", tmp_path) == 3


def test_bad_inputs_exit_2(fixture_dir, cache_dir, tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert run("match", "--frames", empty, "--cache", cache_dir, "--out", tmp_path) == 2
    assert run("prepare", "--labels", tmp_path / "absent.json", "--out", tmp_path) == 2
    assert run("match", "--frames", fixture_dir / "frames", "--cache", cache_dir, "--max-keypoints", 10,
               "--out", tmp_path) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[lac]\nwhatever = 1\n")
    assert run("bench", "--config", bad, "--out", tmp_path) == 2
    assert run("bench", "--variant", "ORB", "--out", tmp_path) == 2


def test_mismatched_frame_sizes_exit_2(fixture_dir, cache_dir, tmp_path):
    from lacmatch.imagecore import GrayImage, load_image, save_image

    frames = tmp_path / "frames"
    frames.mkdir()
    first = load_image(fixture_dir / "frames" / "frame_000001.png")
    save_image(first, frames / "a.png")
    save_image(GrayImage(first.data[:100, :100]), frames / "b.png")
    assert run("match", "--frames", frames, "--cache", cache_dir, "--out", tmp_path / "o") == 2


def test_bench_on_sidecar_frames(fixture_dir, tmp_path):
    out = tmp_path / "bench"
    assert run("bench", "--frames", fixture_dir / "frames", "--template", fixture_dir / "panorama.png",
               "--variant", "BRIEF+RANSAC", "--reps", 1, "--no-timing", "--max-keypoints", 1500, "--out", out) == 0
    lines = (out / "rates.csv").read_text().splitlines()
    assert lines[0] == "variant,rep,mean_inlier_rate,ms_per_frame"
    assert len(lines) == 2 and lines[1].startswith("BRIEF+RANSAC,0,") and lines[1].endswith(",0.000000")
    # the whole 2200x1300 panorama competes with an 800x600 view, so many raw matches are wrong
    assert float(lines[1].split(",")[2]) > 0.5


def test_drift_one_side_only(tmp_path):
    out = tmp_path / "d"
    assert run("drift", "--lac-off-only", "--stationary", "--out", out) == 0
    assert (out / "off" / "trace.csv").exists() and not (out / "on").exists()
    summary = (out / "variance_summary.csv").read_text().splitlines()
    total = next(line for line in summary if line.startswith("total,")).split(",")
    assert total[2] == "nan" and np.isfinite(float(total[1]))
