import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cspn.affinity import AffinityField, Mode, NormalizedKernels, guided_affinity, normalize
from cspn.formats import SparseSamples, make_scene, sample_sparse
from cspn.grid import FeatureGrid, ShapeError, neighbor_read
from cspn.propagate import (PropagationConfig, complete_depth, nearest_fill, replacement_only, run, smooth_fill,
                            step, step_with_sparse)

ALL_MODES = list(Mode)


def random_kernels(rng, shape, k=3, mode=Mode.ABS_SUM_ANCHOR, channels=1):
    raw = rng.standard_normal((k * k - 1, *shape, channels))
    center = rng.standard_normal((*shape, channels))
    return normalize(AffinityField(raw, k, center=center), mode)


def brute_step(h_t, h_0, kern):
    """Per-pixel loop straight from the update rule, using zero-padded reads."""
    gt, g0 = FeatureGrid(h_t), FeatureGrid(h_0)
    H, W, C = gt.shape
    out = np.zeros((H, W, C))
    src = gt if kern.mode.center_reads_current else g0
    for i in range(H):
        for j in range(W):
            for ch in range(C):
                kc = 0 if kern.channels == 1 else ch
                acc = kern.center[i, j, kc] * src.values[i, j, ch]
                for o, (a, b) in enumerate(kern.offsets):
                    acc += kern.weights[o, i, j, kc] * neighbor_read(gt, i, j, a, b, ch)
                out[i, j, ch] = acc
    return out


def test_identity_kernels_return_anchor(rng):
    h0, ht = rng.standard_normal((4, 5, 1)), rng.standard_normal((4, 5, 1))
    out = step(ht, h0, NormalizedKernels.identity((4, 5)))
    assert np.array_equal(out.values, h0)


def test_identity_kernels_moving_center_return_current(rng):
    h0, ht = rng.standard_normal((4, 5, 1)), rng.standard_normal((4, 5, 1))
    out = step(ht, h0, NormalizedKernels.identity((4, 5), mode=Mode.MOVING_CENTER))
    assert np.array_equal(out.values, ht)


def test_delta_uniform_abs_anchor():
    h = np.zeros((3, 3))
    h[1, 1] = 1.0
    out = step(h, h, normalize(AffinityField.uniform((3, 3)))).values[:, :, 0]
    expect = np.full((3, 3), 0.125)
    expect[1, 1] = 0.0
    assert np.array_equal(out, expect)


@given(st.floats(-1e3, 1e3))
def test_constant_preserved_positive_no_center(v):
    # interior pixels only: border pixels read zero padding
    h = np.full((5, 5), v)
    out = step(h, h, normalize(AffinityField.uniform((5, 5)), Mode.POSITIVE_NO_CENTER)).values[1:-1, 1:-1, 0]
    assert np.allclose(out, v, rtol=1e-15, atol=1e-12)


@pytest.mark.parametrize("mode", ALL_MODES)
@pytest.mark.parametrize("k", [3, 5])
def test_step_matches_brute_force(rng, mode, k):
    kern = random_kernels(rng, (5, 6), k, mode, channels=2)
    ht, h0 = rng.standard_normal((5, 6, 2)), rng.standard_normal((5, 6, 2))
    assert np.max(np.abs(step(ht, h0, kern).values - brute_step(ht, h0, kern))) <= 1e-12


def test_shared_kernel_across_channels(rng):
    kern = random_kernels(rng, (4, 4))
    h = rng.standard_normal((4, 4, 3))
    out = step(h, h, kern).values
    for ch in range(3):
        single = step(h[:, :, ch], h[:, :, ch], kern).values[:, :, 0]
        assert np.array_equal(out[:, :, ch], single)


def test_run_zero_iterations(rng):
    h0 = rng.standard_normal((4, 4, 1))
    assert np.array_equal(run(h0, random_kernels(rng, (4, 4)), PropagationConfig(iterations=0)).values, h0)


@pytest.mark.parametrize("mode", ALL_MODES)
def test_run_is_composition(rng, mode):
    kern = random_kernels(rng, (6, 7), mode=mode)
    h0 = rng.standard_normal((6, 7, 1))
    manual = step(step(h0, h0, kern), h0, kern)
    assert np.array_equal(run(h0, kern, PropagationConfig(2, mode)).values, manual.values)


@pytest.mark.parametrize("workers", [2, 3, 8])
def test_worker_count_invariant(rng, workers):
    kern = random_kernels(rng, (23, 17), k=5)
    h0 = rng.standard_normal((23, 17, 1))
    base = run(h0, kern, PropagationConfig(5, worker_count=1)).values
    assert np.array_equal(run(h0, kern, PropagationConfig(5, worker_count=workers)).values, base)


def test_env_worker_count(rng, monkeypatch):
    kern = random_kernels(rng, (9, 9))
    h0 = rng.standard_normal((9, 9, 1))
    base = run(h0, kern, PropagationConfig(3)).values
    monkeypatch.setenv("CSPN_WORKERS", "4")
    assert np.array_equal(run(h0, kern, PropagationConfig(3)).values, base)


def test_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        step(np.zeros((4, 4)), np.zeros((4, 4)), random_kernels(rng, (4, 5)))
    with pytest.raises(ValueError):
        PropagationConfig(iterations=-1)


@given(st.integers(0, 2**32 - 1), st.sampled_from(ALL_MODES))
def test_anchored_non_expansion(seed, mode):
    rng = np.random.default_rng(seed)
    kern = random_kernels(rng, (5, 5), mode=mode)
    h0 = rng.standard_normal((5, 5, 1))
    x, y = rng.standard_normal((5, 5, 1)) * 10, rng.standard_normal((5, 5, 1))
    d_out = np.abs(step(x, h0, kern).values - step(y, h0, kern).values).max()
    assert d_out <= np.abs(x - y).max() * (1 + 1e-12)


@given(st.integers(0, 2**32 - 1))
def test_min_max_principle(seed):
    rng = np.random.default_rng(seed)
    kern = random_kernels(rng, (6, 6), mode=Mode.POSITIVE_NO_CENTER)
    h = rng.uniform(1, 2, (6, 6, 1))
    # zero padding counts as a value of 0 at the border, so compare against the padded range
    out = step(h, h, kern).values
    assert np.all(out <= h.max() + 1e-12) and np.all(out >= -1e-12)
    inner = out[1:-1, 1:-1]
    assert np.all(inner >= h.min() - 1e-12)


def test_sparse_full_coverage(rng):
    vals = rng.uniform(1, 2, (3, 4))
    s = SparseSamples.from_dense(vals)
    out = step_with_sparse(rng.standard_normal((3, 4)), rng.standard_normal((3, 4)), random_kernels(rng, (3, 4)), s)
    assert np.array_equal(out.values[:, :, 0], vals)


def test_sparse_empty_equals_step(rng):
    kern = random_kernels(rng, (4, 4))
    ht, h0 = rng.standard_normal((4, 4)), rng.standard_normal((4, 4))
    out = step_with_sparse(ht, h0, kern, SparseSamples.empty((4, 4)))
    assert np.array_equal(out.values, step(ht, h0, kern).values)


def test_sparse_single_sample(rng):
    s = SparseSamples([2], [3], [5.0], (5, 5))
    out = step_with_sparse(rng.standard_normal((5, 5)), rng.standard_normal((5, 5)), random_kernels(rng, (5, 5)), s)
    assert out.values[2, 3, 0] == 5.0


def test_complete_fixed_point_on_constant_scene():
    scene = make_scene(12, 12, 1, 0)
    s = sample_sparse(scene.depth_gt, 20, 0)
    kern = normalize(guided_affinity(scene.guide, 3), Mode.POSITIVE_NO_CENTER)
    out = complete_depth(scene.depth_gt, s, kern, PropagationConfig(10, Mode.POSITIVE_NO_CENTER))
    assert np.allclose(out.values, scene.depth_gt.values, rtol=1e-14, atol=0)


@pytest.mark.parametrize("seed", range(3))
def test_complete_constant_any_guide(rng, seed):
    scene = make_scene(10, 10, 4, seed)
    depth = np.full((10, 10), 3.25)
    s = sample_sparse(FeatureGrid(depth), 10, seed)
    kern = normalize(guided_affinity(scene.guide, 3, theta_beta=0.05), Mode.POSITIVE_NO_CENTER)
    out = complete_depth(nearest_fill(s), s, kern, PropagationConfig(8, Mode.POSITIVE_NO_CENTER))
    assert np.allclose(out.values, 3.25, rtol=1e-14, atol=0)


@pytest.mark.parametrize("mode", ALL_MODES)
def test_complete_preserves_samples(rng, mode):
    depth = rng.uniform(1, 5, (9, 8))
    s = sample_sparse(FeatureGrid(depth), 12, 4)
    out = complete_depth(rng.uniform(1, 5, (9, 8)), s, random_kernels(rng, (9, 8), mode=mode),
                         PropagationConfig(7, mode))
    assert np.array_equal(out.values[s.rows, s.cols, 0], s.values)


def test_complete_beats_replacement_on_scene():
    scene = make_scene(48, 48, 5, 3)
    s = sample_sparse(scene.depth_gt, 120, 3)
    init = nearest_fill(s)
    kern = normalize(guided_affinity(scene.guide, 3, theta_beta=8 / 255, w2=0.0), Mode.POSITIVE_NO_CENTER)
    out = complete_depth(init, s, kern, PropagationConfig(24, Mode.POSITIVE_NO_CENTER))
    gt = scene.depth_gt.values
    rmse = lambda x: np.sqrt(np.mean((x.values - gt) ** 2))
    assert rmse(out) < rmse(replacement_only(init, s))


def test_nearest_fill():
    s = SparseSamples([0, 3], [0, 3], [1.0, 2.0], (4, 4))
    f = nearest_fill(s).values[:, :, 0]
    assert f[0, 1] == 1.0 and f[3, 2] == 2.0 and f[1, 1] == 1.0 and f[2, 2] == 2.0
    with pytest.raises(ValueError):
        nearest_fill(SparseSamples.empty((2, 2)))


def test_smooth_fill_keeps_constants_and_blurs_edges():
    s = SparseSamples([0, 5], [0, 5], [1.0, 3.0], (6, 6))
    assert np.allclose(smooth_fill(SparseSamples([2], [2], [4.0], (6, 6))).values, 4.0, rtol=1e-15)
    sm, nf = smooth_fill(s).values, nearest_fill(s).values
    assert sm.min() >= 1.0 - 1e-12 and sm.max() <= 3.0 + 1e-12
    assert np.abs(np.diff(sm[:, :, 0], axis=1)).max() < np.abs(np.diff(nf[:, :, 0], axis=1)).max()
    with pytest.raises(ValueError):
        smooth_fill(s, 0.0)


def test_complete_rejects_multichannel(rng):
    with pytest.raises(ShapeError):
        complete_depth(np.ones((3, 3, 2)), SparseSamples.empty((3, 3)), random_kernels(rng, (3, 3)))
