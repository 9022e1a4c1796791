import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from splatprune import Camera, Gaussian, Scene, activate, deactivate, make_toy_scene, toy_cameras
from splatprune.raster import blend_trace
from splatprune.scene import SH_C0, TAG_FLOATER, TAG_SURFACE, look_at, raw_dtype


def _raw_record(**overrides):
    rec = np.zeros(1, dtype=raw_dtype(0))[0]
    rec["rot_0"] = 1.0
    for k, v in overrides.items():
        rec[k] = v
    return rec


def test_activate_logit_zero_is_half():
    assert activate(_raw_record(opacity=0.0)).opacity == 0.5


def test_activate_log_scale_zero_is_unit():
    np.testing.assert_array_equal(activate(_raw_record()).scale, [1.0, 1.0, 1.0])


def test_activate_normalises_quaternion():
    np.testing.assert_array_equal(activate(_raw_record(rot_0=2.0)).rotation, [1.0, 0.0, 0.0, 0.0])


def test_activate_rejects_non_finite():
    with pytest.raises(ValueError):
        activate(_raw_record(x=np.inf))


def test_activate_rejects_zero_quaternion():
    with pytest.raises(ValueError):
        activate(_raw_record(rot_0=0.0))


unit = st.floats(-1.0, 1.0, allow_nan=False)


@given(
    pos=st.tuples(*[st.floats(-50, 50)] * 3),
    quat=st.tuples(*[unit] * 4).filter(lambda q: np.linalg.norm(q) > 0.1),
    log_scale=st.tuples(*[st.floats(-6, 2)] * 3),
    opacity=st.floats(1e-4, 1 - 1e-4),
    dc=st.tuples(*[st.floats(-3, 3)] * 3),
)
def test_activate_deactivate_roundtrip(pos, quat, log_scale, opacity, dc):
    q = np.asarray(quat) / np.linalg.norm(quat)
    g = Gaussian(pos, q, np.exp(log_scale), opacity, [dc])
    back = activate(deactivate(g) | {})
    np.testing.assert_allclose(back.position, g.position, atol=1e-6)
    np.testing.assert_allclose(back.rotation, g.rotation, atol=1e-6)
    np.testing.assert_allclose(back.scale, g.scale, rtol=1e-6)
    assert abs(back.opacity - g.opacity) <= 1e-6
    np.testing.assert_allclose(back.sh, g.sh, atol=1e-6)


def test_gaussian_invariants():
    with pytest.raises(ValueError):
        Gaussian([0, 0, 0], [1, 1, 0, 0], [1, 1, 1], 0.5, [[0, 0, 0]])
    with pytest.raises(ValueError):
        Gaussian([0, 0, 0], [1, 0, 0, 0], [1, 0, 1], 0.5, [[0, 0, 0]])
    with pytest.raises(ValueError):
        Gaussian([0, 0, 0], [1, 0, 0, 0], [1, 1, 1], 1.0, [[0, 0, 0]])


def test_sh_padding_to_full_degree():
    raw = np.zeros(1, dtype=raw_dtype(9))  # degree 1
    raw["rot_0"] = 1.0
    s = Scene(raw)
    assert s.sh.shape == (1, 4, 3)
    assert s.sh_degree == 1


def test_camera_validation():
    with pytest.raises(ValueError):
        Camera(0, "a", 0, 10, 10.0, 10.0, np.eye(3), np.zeros(3))
    with pytest.raises(ValueError):
        Camera(0, "a", 10, 10, 10.0, 10.0, np.diag([1.0, 1.0, 1.1]), np.zeros(3))
    cam = Camera(0, "a", 10, 20, 10.0, 10.0, np.eye(3), np.zeros(3))
    assert (cam.cx, cam.cy) == (5.0, 10.0)


def test_world_to_camera_inverts_pose():
    rot = look_at([1.0, 2.0, -3.0], [0.0, 0.0, 0.0])
    cam = Camera(0, "a", 8, 8, 5.0, 5.0, rot, np.array([1.0, 2.0, -3.0]))
    R, t = cam.world_to_camera
    np.testing.assert_allclose(R @ cam.position + t, 0.0, atol=1e-12)
    # the target lies on the optical axis in front of the camera
    p = R @ np.zeros(3) + t
    assert p[2] > 0 and abs(p[0]) < 1e-12 and abs(p[1]) < 1e-12


def test_stable_removal_keeps_order_and_bits():
    s, _ = make_toy_scene("plane+floater", seed=3), None
    before = s.raw.copy()
    ids = np.array([5, 0, 17, len(s) - 1])
    survivors = s.remove(ids)
    assert len(s) == len(before) - 4
    np.testing.assert_array_equal(survivors, np.setdiff1d(np.arange(len(before)), ids))
    assert s.raw.tobytes() == before[survivors].tobytes()


def test_remove_out_of_range():
    s = make_toy_scene("ray4")
    with pytest.raises(IndexError):
        s.remove([4])


def test_toy_scene_determinism():
    a = make_toy_scene("plane+floater", seed=7)
    b = make_toy_scene("plane+floater", seed=7)
    assert a.raw.tobytes() == b.raw.tobytes()
    np.testing.assert_array_equal(a.tags, b.tags)
    assert (a.tags == TAG_FLOATER).sum() == 24
    assert set(np.unique(a.tags)) == {TAG_SURFACE, TAG_FLOATER}


def test_toy_scene_seed_changes_scene():
    a = make_toy_scene("plane", seed=1)
    b = make_toy_scene("plane", seed=2)
    assert a.raw.tobytes() != b.raw.tobytes()


def test_toy_scene_errors():
    with pytest.raises(ValueError):
        make_toy_scene("cube")
    with pytest.raises(ValueError):
        make_toy_scene("plane+floater", n_floaters=0)
    with pytest.raises(ValueError):
        make_toy_scene("plane", spacing=-1.0)
    with pytest.raises(ValueError):
        toy_cameras("plane", n_views=0)


def test_ray4_centre_pixel_blends_requested_sequence():
    depths, ops = (1.0, 1.5, 5.0, 6.0), (0.2, 0.5, 0.2, 0.3)
    scene = make_toy_scene("ray4", depths=depths, opacities=ops)
    (cam,) = toy_cameras("ray4")
    steps = blend_trace(scene, cam, 16, 16)
    assert [s.gaussian_id for s in steps] == [0, 1, 2, 3]
    np.testing.assert_allclose([s.depth for s in steps], depths, rtol=0, atol=0)
    np.testing.assert_allclose([s.alpha for s in steps], ops, rtol=0, atol=1e-15)


def test_ray4_custom_sequence():
    scene = make_toy_scene("ray4", depths=(2.0, 3.0), opacities=(0.9, 0.4))
    (cam,) = toy_cameras("ray4")
    steps = blend_trace(scene, cam, 16, 16)
    np.testing.assert_allclose([s.weight for s in steps], [0.9, 0.1 * 0.4], atol=1e-15)


def test_ray4_rejects_bad_sequences():
    with pytest.raises(ValueError):
        make_toy_scene("ray4", depths=(2.0, 1.0), opacities=(0.5, 0.5))
    with pytest.raises(ValueError):
        make_toy_scene("ray4", depths=(1.0,), opacities=(0.5, 0.5))


def test_clean_plane_has_no_floater_signal(toy):
    from splatprune import render
    from splatprune.pruner import relative_diff

    scene, cams = toy("plane")
    for cam in cams:
        delta = relative_diff(render(scene, cam))
        assert np.abs(delta).max() < 0.02
        assert (delta > 0).sum() == 0


def test_toy_colours_are_in_range():
    s = make_toy_scene("plane", seed=0)
    rgb = s.sh[:, 0] * SH_C0 + 0.5
    assert rgb.min() >= 0.0 and rgb.max() <= 1.0
    assert not math.isclose(rgb.min(), rgb.max())
