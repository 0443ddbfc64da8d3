import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cspn.affinity import AffinityField, Mode, NormalizedKernels, kernel_offsets, normalize, stability_margin
from cspn.formats import SparseSamples
from cspn.grid import ShapeError
from cspn.oracle import build, operator_norm, spectral_radius, step_dense
from cspn.propagate import complete_depth, PropagationConfig, step
from cspn.volume import step3

ALL_MODES = list(Mode)


def kernels(rng, shape, k=3, mode=Mode.ABS_SUM_ANCHOR):
    nd = len(shape)
    raw = rng.standard_normal((k**nd - 1, *shape, 1))
    return normalize(AffinityField(raw, k, center=rng.standard_normal((*shape, 1))), mode)


def test_one_by_two_grid():
    raw = np.arange(1.0, 17.0).reshape(8, 1, 2, 1)
    kern = normalize(AffinityField(raw, 3))
    A = build(kern).dense()
    offs = kernel_offsets(3)
    # pixel 0 reads (0, 1) through offset (0, -1); pixel 1 reads (0, 0) through (0, 1)
    assert A[0, 0] == 0 and A[1, 1] == 0
    assert A[0, 1] == kern.weights[offs.index((0, -1)), 0, 0, 0]
    assert A[1, 0] == kern.weights[offs.index((0, 1)), 0, 1, 0]
    # raw[o, 0, j] = 1 + 2o + j: sums 64 and 72, picked entries 7 and 10
    assert A[0, 1] == 7 / 64 and A[1, 0] == 10 / 72


def test_identity_system(rng):
    sys = build(NormalizedKernels.identity((3, 3)))
    assert sys.A.nnz == 0 and np.all(sys.degree == 0)
    h0, ht = rng.standard_normal(9), rng.standard_normal(9)
    assert np.array_equal(step_dense(sys, ht, h0), h0)


def test_unit_row_for_sample(rng):
    kern = kernels(rng, (3, 4))
    s = SparseSamples([1], [2], [4.0], (3, 4))
    sys = build(kern, s)
    q = 1 * 4 + 2
    cols, vals = sys.row(q)
    assert cols.tolist() == [q] and vals.tolist() == [1.0]
    assert sys.degree[q] == 1.0 and sys.center[q] == 0.0


def test_full_mask_holds_samples(rng):
    vals = rng.uniform(1, 2, (3, 3))
    sys = build(kernels(rng, (3, 3)), SparseSamples.from_dense(vals))
    h = vals.ravel()
    for _ in range(5):
        h = step_dense(sys, h, rng.standard_normal(9))
    assert np.array_equal(h, vals.ravel())


def test_masked_states_stay_fixed_and_match_completion(rng):
    kern = kernels(rng, (5, 6))
    s = SparseSamples([0, 4, 2], [0, 5, 3], [1.5, 2.5, 3.5], (5, 6))
    init = rng.uniform(1, 4, (5, 6))
    sys = build(kern, s)
    h0 = init.copy()
    h0[s.rows, s.cols] = s.values
    h = h0.ravel()
    for _ in range(6):
        h = step_dense(sys, h, h0.ravel())
    assert np.array_equal(h.reshape(5, 6)[s.rows, s.cols], s.values)
    out = complete_depth(init, s, kern, PropagationConfig(6)).values[:, :, 0]
    assert np.max(np.abs(out.ravel() - h)) <= 1e-12


@pytest.mark.parametrize("mode", ALL_MODES)
@pytest.mark.parametrize("k", [3, 5])
def test_step_matches_oracle(rng, mode, k):
    kern = kernels(rng, (6, 7), k, mode)
    sys = build(kern)
    ht, h0 = rng.standard_normal((6, 7, 1)), rng.standard_normal((6, 7, 1))
    assert np.max(np.abs(step(ht, h0, kern).values.ravel() - step_dense(sys, ht, h0))) <= 1e-12


@pytest.mark.parametrize("mode", ALL_MODES)
def test_step3_matches_oracle(rng, mode):
    kern = kernels(rng, (4, 4, 4), 3, mode)
    sys = build(kern)
    vt, v0 = rng.standard_normal((4, 4, 4, 1)), rng.standard_normal((4, 4, 4, 1))
    assert np.max(np.abs(step3(vt, v0, kern).values.ravel() - step_dense(sys, vt, v0))) <= 1e-12


def test_multichannel_oracle(rng):
    kern = kernels(rng, (3, 4))
    sys = build(kern, channels=2)
    h = rng.standard_normal((3, 4, 2))
    assert np.max(np.abs(step(h, h, kern).values.ravel() - step_dense(sys, h, h))) <= 1e-12


def test_diagonal_zero_and_rows_bounded(rng):
    sys = build(kernels(rng, (5, 5)))
    assert np.all(sys.dense().diagonal() == 0)
    assert sys.gershgorin_bound() <= 1 + 1e-12


def test_length_mismatch(rng):
    with pytest.raises(ShapeError):
        step_dense(build(kernels(rng, (2, 2))), np.zeros(3), np.zeros(4))


def test_radius_zero_matrix():
    assert spectral_radius(build(NormalizedKernels.identity((3, 3)))) == 0.0
    assert operator_norm(build(NormalizedKernels.identity((3, 3)))) == 0.0


def test_radius_uniform_below_one():
    sys = build(normalize(AffinityField.uniform((5, 5)), Mode.POSITIVE_NO_CENTER))
    est = spectral_radius(sys, 2000)
    exact = np.abs(np.linalg.eigvals(sys.dense())).max()
    assert est < 1
    assert est == pytest.approx(exact, abs=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_radius_and_norm_match_dense(seed):
    rng = np.random.default_rng(seed)
    sys = build(kernels(rng, (4, 5)))
    dense = sys.dense()
    assert operator_norm(sys, 3000) == pytest.approx(np.linalg.norm(dense, 2), rel=1e-6)
    assert spectral_radius(sys, 3000) == pytest.approx(np.abs(np.linalg.eigvals(dense)).max(), rel=1e-2)


@given(st.integers(0, 2**32 - 1), st.sampled_from(ALL_MODES))
def test_radius_below_gershgorin(seed, mode):
    rng = np.random.default_rng(seed)
    kern = kernels(rng, (4, 4), mode=mode)
    sys = build(kern)
    est = spectral_radius(sys, 200, seed)
    assert est <= sys.gershgorin_bound() + 1e-9
    assert est <= stability_margin(kern) + 1e-9
    assert est <= 1 + 1e-9


def test_operator_norm_can_exceed_row_bound():
    # non-normal A: two-norm above the max row abs sum; the row bound caps the spectral radius only
    H, W = 1, 3
    raw = np.zeros((8, H, W, 1))
    offs = kernel_offsets(3)
    raw[offs.index((0, -1)), 0, 0] = 1.0  # pixel 0 reads pixel 1
    raw[offs.index((0, 1)), 0, 2] = 1.0   # pixel 2 reads pixel 1
    raw[offs.index((0, 1)), 0, 1] = 1.0   # pixel 1 reads pixel 0
    sys = build(normalize(AffinityField(raw, 3)))
    assert sys.gershgorin_bound() == 1.0
    assert operator_norm(sys, 500) == pytest.approx(np.sqrt(2), rel=1e-9)
    assert spectral_radius(sys, 500) <= 1.0 + 1e-9


def test_determinism(rng):
    sys = build(kernels(rng, (4, 4)))
    assert spectral_radius(sys, 100, 3) == spectral_radius(sys, 100, 3)
    with pytest.raises(ValueError):
        spectral_radius(sys, 0)


def test_dump_csv(tmp_path, rng):
    sys = build(kernels(rng, (2, 2)))
    sys.dump_csv(tmp_path / "a.csv")
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "row,col,value" and len(lines) == sys.A.nnz + 1
