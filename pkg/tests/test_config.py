import pytest

from lacmatch.config import ConfigError, RunConfig, apply, from_dict, load_config


def write(tmp_path, text):
    p = tmp_path / "run.ini"
    p.write_text(text)
    return p


def test_defaults_validate():
    cfg = RunConfig()
    cfg.validate()
    assert cfg.descriptor == "brief"
    assert cfg.features.max_keypoints == 2500 and cfg.lac.history == 3


def test_ini_file(tmp_path):
    cfg = load_config(write(tmp_path, """
[features]
max_keypoints = 800   # inline comments are fine
beblid_model = default

[lac]
k = 4
template_size = 640x480
use_local_area = no

[homography]
estimator = ransac
reproj_tol = 2.5
"""))
    assert cfg.features.max_keypoints == 800 and cfg.descriptor == "beblid"
    assert cfg.lac.k == 4 and cfg.lac.template_size == (640, 480) and cfg.lac.use_local_area is False
    assert cfg.homography.estimator == "ransac" and cfg.homography.reproj_tol == 2.5
    cfg.validate()


@pytest.mark.parametrize("text", [
    "[features]\ncolour = red\n",
    "[nonsense]\na = 1\n",
    "[features]\nmax_keypoints = lots\n",
    "[lac]\ntemplate_size = 640by480\n",
    "[lac]\nuse_local_area = maybe\n",
    "not an ini file",
])
def test_bad_files(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, text))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")


@pytest.mark.parametrize("section,values", [
    ("features", {"max_keypoints": 99}),
    ("features", {"fast_threshold": 300}),
    ("features", {"descriptor": "orb"}),
    ("homography", {"estimator": "lmeds"}),
    ("homography", {"confidence": 1.0}),
    ("lac", {"lam": 1.5}),
    ("lac", {"history": 0}),
    ("lac", {"k": 0}),
    ("run", {"reps": 0}),
])
def test_validation(section, values):
    with pytest.raises(ConfigError):
        apply(RunConfig(), section, values).validate()


def test_dict_roundtrip():
    cfg = apply(apply(RunConfig(), "lac", {"k": 3, "template_size": "500x400"}), "run", {"seed": 7})
    back = from_dict(cfg.to_dict())
    assert back == cfg
    assert back.lac.template_size == (500, 400) and back.seed == 7


def test_pipeline_carries_the_seed():
    cfg = apply(RunConfig(), "run", {"seed": 11})
    assert cfg.pipeline().homography.seed == 11
