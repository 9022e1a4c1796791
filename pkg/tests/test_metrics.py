import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import patch_loss_loop, pearson_moments

from splatprune import PatchSpec, local_pearson_loss, local_pearson_loss_grad, pcc, psnr, ssim
from splatprune.metrics import sample_patches


def _maps(seed, shape=(48, 48)):
    rng = np.random.default_rng(seed)
    a = rng.uniform(1.0, 5.0, shape)
    b = 0.5 * a + rng.normal(0, 0.4, shape) + 2.0
    return a, np.clip(b, 0.1, None)


def test_pcc_examples():
    x = np.arange(10.0)
    assert pcc(x, x) == pytest.approx(1.0, abs=1e-15)
    assert pcc(x, -x) == pytest.approx(-1.0, abs=1e-15)
    assert pcc(x, 2 * x + 3) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_pcc_matches_raw_moment_form(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=64), rng.normal(size=64)
    assert abs(pcc(x, y) - pearson_moments(x, y)) <= 1e-12


@given(
    st.lists(st.floats(-100, 100), min_size=2, max_size=50),
    st.floats(1e-3, 1e3),
    st.floats(-1e3, 1e3),
)
def test_pcc_positive_affine_is_one(xs, a, b):
    x = np.asarray(xs)
    if np.var(x) < 1e-6:
        return
    assert pcc(x, a * x + b) == pytest.approx(1.0, abs=1e-9)


def test_pcc_degenerate_flag():
    assert pcc(np.ones(5), np.arange(5.0), with_flag=True) == (0.0, True)
    assert pcc(np.arange(5.0), np.arange(5.0), with_flag=True)[1] is False


def test_pcc_errors():
    with pytest.raises(ValueError):
        pcc([1.0, 2.0], [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        pcc([1.0], [1.0])


def test_patch_count_and_corner_range():
    corners = sample_patches((100, 70), PatchSpec(box_p=16, p_corr=0.5, seed=1))
    # floor(0.5 * 6 * 4)
    assert corners.shape == (12, 2)
    assert corners[:, 0].min() >= 0 and corners[:, 0].max() <= 100 - 16
    assert corners[:, 1].max() <= 70 - 16


def test_identical_maps_give_zero_loss():
    a, _ = _maps(0)
    assert local_pearson_loss(a, a, PatchSpec(16, 0.5, 0)) == pytest.approx(0.0, abs=1e-12)


@given(st.integers(0, 2**16), st.floats(0.01, 100), st.floats(-0.5, 50))
def test_positive_affine_target_gives_zero_loss(seed, a, b):
    src, _ = _maps(seed, (32, 32))
    spec = PatchSpec(8, 0.75, seed)
    assert abs(local_pearson_loss(src, a * src + b, spec)) <= 1e-9


@pytest.mark.parametrize("seed", range(6))
def test_loss_matches_scripted_loop(seed):
    a, b = _maps(seed, (64, 80))
    b[:10, :30] = 0.0  # background block exercises masking and skipping
    spec = PatchSpec(16, 0.6, seed)
    assert abs(local_pearson_loss(a, b, spec) - patch_loss_loop(a, b, 16, 0.6, seed)) <= 1e-12


def test_loss_is_deterministic_given_seed():
    a, b = _maps(3)
    spec = PatchSpec(16, 0.5, 11)
    assert local_pearson_loss(a, b, spec) == local_pearson_loss(a, b, spec)


@given(st.integers(0, 2**16))
def test_loss_range(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0.5, 2, (24, 24)), rng.uniform(0.5, 2, (24, 24))
    loss = local_pearson_loss(a, b, PatchSpec(8, 1.0, seed))
    assert 0.0 <= loss <= 2.0


def test_anticorrelated_maps_give_two():
    a, _ = _maps(1, (32, 32))
    assert local_pearson_loss(a, 10.0 - a, PatchSpec(8, 1.0, 0)) == pytest.approx(2.0, abs=1e-12)


def test_constant_patch_counts_as_loss_one():
    a = np.full((16, 16), 3.0)
    b, _ = _maps(0, (16, 16))
    r = local_pearson_loss(a, b, PatchSpec(16, 1.0, 0), return_stats=True)
    assert (r.loss, r.n_patches, r.n_degenerate) == (1.0, 1, 1)
    assert not local_pearson_loss_grad(a, b, PatchSpec(16, 1.0, 0)).any()


def test_mostly_background_patch_is_skipped():
    a, b = _maps(0, (16, 16))
    b[:, :13] = 0.0  # 3/16 of the patch left
    r = local_pearson_loss(a, b, PatchSpec(16, 1.0, 0), return_stats=True)
    assert (r.loss, r.n_patches, r.n_skipped) == (0.0, 0, 1)


def _used_pixels(shape, spec):
    covered = np.zeros(shape, dtype=bool)
    for r, c in sample_patches(shape, spec):
        covered[r : r + spec.box_p, c : c + spec.box_p] = True
    return covered


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_central_differences(seed):
    a, b = _maps(seed)
    spec = PatchSpec(16, 0.5, seed)
    grad = local_pearson_loss_grad(a, b, spec)
    rng = np.random.default_rng(100 + seed)
    cand = np.argwhere(_used_pixels(a.shape, spec))
    h = 1e-4
    for r, c in cand[rng.choice(len(cand), 10, replace=False)]:
        up, dn = a.copy(), a.copy()
        up[r, c] += h
        dn[r, c] -= h
        fd = (local_pearson_loss(up, b, spec) - local_pearson_loss(dn, b, spec)) / (2 * h)
        assert abs(fd - grad[r, c]) <= 1e-4 * abs(fd)


def test_gradient_vanishes_at_identical_maps():
    a, _ = _maps(2)
    assert np.linalg.norm(local_pearson_loss_grad(a, a, PatchSpec(16, 0.5, 2))) <= 1e-8


def test_gradient_is_zero_outside_sampled_patches():
    a, b = _maps(4, (64, 64))
    spec = PatchSpec(16, 0.25, 4)
    covered = _used_pixels(a.shape, spec)
    assert not covered.all()
    grad = local_pearson_loss_grad(a, b, spec)
    assert not grad[~covered].any()
    assert grad[covered].any()


def test_loss_errors():
    a = np.ones((20, 20))
    with pytest.raises(ValueError):
        local_pearson_loss(a, np.ones((20, 21)), PatchSpec(8))
    with pytest.raises(ValueError):
        local_pearson_loss(a, a, PatchSpec(32))
    with pytest.raises(ValueError):
        local_pearson_loss_grad(a, np.ones((21, 20)), PatchSpec(8))
    with pytest.raises(ValueError):
        PatchSpec(0)
    with pytest.raises(ValueError):
        PatchSpec(8, 0.0)
    with pytest.raises(ValueError):
        PatchSpec(8, 1.5)


def test_psnr_examples():
    rng = np.random.default_rng(0)
    a = rng.uniform(0, 0.9, (16, 16, 3))
    assert psnr(a, a) == math.inf
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)


def test_ssim_identity():
    a = np.random.default_rng(0).uniform(0, 1, (24, 24, 3))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_ssim_matches_skimage(seed):
    metrics = pytest.importorskip("skimage.metrics")
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 1, (32, 40, 3))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    ref = metrics.structural_similarity(
        a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False, data_range=1.0, channel_axis=2
    )
    assert abs(ssim(a, b) - ref) <= 1e-6


def test_ssim_grayscale_matches_skimage():
    metrics = pytest.importorskip("skimage.metrics")
    rng = np.random.default_rng(9)
    a, b = rng.uniform(0, 1, (20, 20)), rng.uniform(0, 1, (20, 20))
    ref = metrics.structural_similarity(a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False, data_range=1.0)
    assert abs(ssim(a, b) - ref) <= 1e-6


def test_image_metric_errors():
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(ValueError):
        ssim(np.zeros((12, 12)), np.zeros((12, 13)))
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))
