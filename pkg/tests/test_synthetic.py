import numpy as np
import pytest

from lacmatch.synthetic import (
    NoiseConfig, ScriptError, ViewPose, dwell_script, generate_sequence, pan_script, pose_homography, retexture,
    synthetic_panorama, translation, warp_image,
)


@pytest.fixture(scope="module")
def pano():
    return synthetic_panorama(400, 300, seed=3)


def test_identity_pose_is_a_plain_crop(pano):
    x0, y0, fw, fh = 60, 40, 160, 120
    seq = generate_sequence(pano, [ViewPose(x0 + fw / 2, y0 + fh / 2)], (fw, fh))
    assert np.array_equal(seq.frames[0].data, pano.data[y0:y0 + fh, x0:x0 + fw])
    np.testing.assert_allclose(seq.homographies[0], translation(-x0, -y0))


def test_explicit_homographies_pass_through(pano):
    h = translation(-10, -20)
    seq = generate_sequence(pano, [h], (100, 80))
    assert np.array_equal(seq.frames[0].data, pano.data[20:100, 10:110])
    rect = (10, 20, 100, 80)
    np.testing.assert_allclose(seq.template_homography(0, rect), np.eye(3))


def test_rotation_pose_maps_centre_to_centre():
    h = pose_homography(ViewPose(200, 150, angle=0.3, scale=1.2), (160, 120))
    p = h @ np.array([200, 150, 1.0])
    np.testing.assert_allclose(p[:2] / p[2], (80, 60))


def test_seeded_noise_is_reproducible(pano):
    script = pan_script((150, 150), (250, 150), 4)
    a = generate_sequence(pano, script, (160, 120), NoiseConfig(4.0, 0.1), seed=9)
    b = generate_sequence(pano, script, (160, 120), NoiseConfig(4.0, 0.1), seed=9)
    c = generate_sequence(pano, script, (160, 120), NoiseConfig(4.0, 0.1), seed=10)
    assert all(np.array_equal(x.data, y.data) for x, y in zip(a.frames, b.frames))
    assert not np.array_equal(a.frames[0].data, c.frames[0].data)
    assert a.gains == b.gains and all(0.9 <= g <= 1.1 for g in a.gains)


def test_view_leaving_the_panorama_names_the_frame(pano):
    script = [ViewPose(200, 150), ViewPose(20, 150)]
    with pytest.raises(ScriptError) as info:
        generate_sequence(pano, script, (160, 120))
    assert info.value.frame == 1


def test_scripts():
    pan = pan_script((0, 0), (30, 0), 4)
    assert [p.cx for p in pan] == [0, 10, 20, 30]
    dwell = dwell_script([(0, 0), (30, 0)], dwell=2, travel=2)
    assert [p.cx for p in dwell] == [0, 0, 10, 20, 30, 30]


def test_warp_by_translation_shifts_pixels(pano):
    out = warp_image(pano, translation(-5, -7), (50, 40))
    np.testing.assert_array_equal(out, pano.data[7:47, 5:55].astype(float))


def test_retexture_touches_the_requested_fraction(pano):
    rng = np.random.default_rng(0)
    xy = np.array([(50, 50), (150, 100), (250, 200), (350, 250)], float)
    img, picked = retexture(pano, xy, 0.5, rng, radius=3)
    assert len(picked) == 2
    changed = img.data != pano.data
    for i in range(4):
        x, y = xy[i].astype(int)
        patch = changed[y - 3:y + 4, x - 3:x + 4]
        assert patch.any() == (i in picked)
    same, none = retexture(pano, xy, 0.0, rng)
    assert same is pano and len(none) == 0
