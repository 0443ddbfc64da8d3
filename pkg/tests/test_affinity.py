import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from cspn.affinity import (AffinityField, Mode, NormalizedKernels, guided_affinity, kernel_offsets, normalize,
                           normalize_arrays, stability_margin)
from cspn.grid import FeatureGrid, ShapeError

ALL_MODES = list(Mode)


def one_pixel(raw, center=None, mode=Mode.ABS_SUM_ANCHOR):
    raw = np.asarray(raw, float).reshape(-1, 1, 1, 1)
    c = None if center is None else np.full((1, 1, 1), float(center))
    kern = normalize(AffinityField(raw, 3, center=c), mode)
    return kern.weights[:, 0, 0, 0], kern.center[0, 0, 0]


def test_offsets_row_major_without_center():
    assert kernel_offsets(3) == ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
    assert len(kernel_offsets(5)) == 24
    assert len(kernel_offsets(3, 3)) == 26


def test_abs_anchor_uniform():
    w, c = one_pixel(np.ones(8))
    assert np.all(w == 0.125) and c == 0.0


def test_abs_anchor_signed():
    w, c = one_pixel([-1, 1, 0, 0, 0, 0, 0, 0])
    assert w.tolist() == [-0.5, 0.5, 0, 0, 0, 0, 0, 0] and c == 1.0


@pytest.mark.parametrize("mode", ALL_MODES)
def test_all_zero_gives_identity(mode):
    w, c = one_pixel(np.zeros(8), 0.0 if mode.center_reads_current else None, mode)
    assert np.all(w == 0) and c == 1.0


def test_positive_no_center_abs_values():
    w, c = one_pixel([2, -2, 0, 0, 0, 0, 0, 0], mode=Mode.POSITIVE_NO_CENTER)
    assert w.tolist() == [0.5, 0.5, 0, 0, 0, 0, 0, 0] and c == 0.0


def test_moving_center_hand_values():
    # raw neighbors (1, -1, 0...), raw center 2: s = 4, w' = (.25, -.25), c' = 1, total |.| = 1.5
    w, c = one_pixel([1, -1, 0, 0, 0, 0, 0, 0], 2.0, Mode.MOVING_CENTER)
    assert w[:2] == pytest.approx([1 / 6, -1 / 6], abs=1e-15)
    assert c == pytest.approx(2 / 3, abs=1e-15)


def test_positive_all_hand_values():
    w, c = one_pixel([1, -3, 0, 0, 0, 0, 0, 0], 4.0, Mode.POSITIVE_ALL)
    assert w[:2].tolist() == [0.125, 0.375] and c == 0.5


raw_entries = st.one_of(st.floats(-1e6, 1e6), st.floats(-1e-6, 1e-6), st.just(0.0))


@given(hnp.arrays(np.float64, (8, 2, 3, 2), elements=raw_entries),
       hnp.arrays(np.float64, (2, 3, 2), elements=raw_entries), st.sampled_from(ALL_MODES))
def test_mode_invariants(raw, center, mode):
    w, c = normalize_arrays(raw, center, mode)
    ident = (w == 0).all(axis=0) & (c == 1.0)
    if mode is Mode.ABS_SUM_ANCHOR:
        s = np.abs(w).sum(axis=0)
        assert np.all(ident | (np.abs(s - 1) <= 1e-12))
        assert np.allclose(c, 1 - w.sum(axis=0), atol=1e-12, rtol=0)
    elif mode is Mode.POSITIVE_NO_CENTER:
        assert np.all(w >= 0)
        assert np.all(ident | ((np.abs(w.sum(axis=0) - 1) <= 1e-12) & (c == 0)))
    elif mode is Mode.MOVING_CENTER:
        assert np.all(np.abs(np.abs(w).sum(axis=0) + np.abs(c) - 1) <= 1e-12)
    else:
        assert np.all(w >= 0) and np.all(c >= 0)
        assert np.all(np.abs(w.sum(axis=0) + c - 1) <= 1e-12)
    assert np.all(np.isfinite(w)) and np.all(np.isfinite(c))


@given(hnp.arrays(np.float64, (8, 2, 2, 1), elements=st.floats(-100, 100)),
       st.floats(1e-3, 1e3), st.sampled_from(ALL_MODES))
def test_scale_invariance(raw, scale, mode):
    center = np.ones((2, 2, 1))
    w1, c1 = normalize_arrays(raw, center, mode)
    w2, c2 = normalize_arrays(raw * scale, center * scale, mode)
    assert np.allclose(w1, w2, atol=1e-12, rtol=0) and np.allclose(c1, c2, atol=1e-12, rtol=0)


@given(hnp.arrays(np.float64, (8, 3, 3, 1), elements=raw_entries), st.sampled_from(ALL_MODES))
def test_margin_at_most_one(raw, mode):
    assert stability_margin(normalize(AffinityField(raw, 3, center=np.ones((3, 3, 1))), mode)) <= 1 + 1e-12


def test_margin_examples():
    assert stability_margin(normalize(AffinityField.uniform((4, 4)), Mode.ABS_SUM_ANCHOR)) == 1.0
    assert stability_margin(NormalizedKernels.identity((4, 4))) == 0.0
    # center raw chosen so the normalized center mass is 0.3 at every pixel
    raw = np.ones((8, 3, 3, 1))
    center = np.full((3, 3, 1), 8 * 0.3 / 0.7)
    kern = normalize(AffinityField(raw, 3, center=center), Mode.POSITIVE_ALL)
    assert np.allclose(kern.center, 0.3, atol=1e-15)
    assert stability_margin(kern) == pytest.approx(0.7, abs=1e-12)
    mc = normalize(AffinityField(raw, 3, center=center), Mode.MOVING_CENTER)
    assert stability_margin(mc) == pytest.approx(1 - np.abs(mc.center).max(), abs=1e-12)


def test_field_validation():
    with pytest.raises(ValueError):
        AffinityField(np.zeros((3, 2, 2, 1)), 2)
    with pytest.raises(ShapeError):
        AffinityField(np.zeros((7, 2, 2, 1)), 3)
    with pytest.raises(ValueError):
        AffinityField(np.full((8, 2, 2, 1), np.nan), 3)
    with pytest.raises(ShapeError):
        AffinityField(np.zeros((8, 2, 2, 1)), 3, center=np.zeros((2, 3, 1)))


def test_guided_constant_spatial_only():
    raw = guided_affinity(FeatureGrid(np.full((5, 5), 0.4)), 3, theta_gamma=1.0, w1=0.0, w2=1.0).raw[:, 2, 2, 0]
    for (a, b), v in zip(kernel_offsets(3), raw):
        expect = np.exp(-1.0) if a and b else np.exp(-0.5)
        assert v == pytest.approx(expect, abs=1e-15)


def test_guided_huge_bandwidth_ignores_intensity(rng):
    g1 = FeatureGrid(rng.uniform(0, 1, (6, 6)))
    g2 = FeatureGrid(rng.uniform(0, 1, (6, 6)))
    a = guided_affinity(g1, 3, theta_beta=1e9).raw
    b = guided_affinity(g2, 3, theta_beta=1e9).raw
    assert np.max(np.abs(a - b)) <= 1e-9


def test_guided_step_edge():
    g = np.zeros((4, 6))
    g[:, 3:] = 1.0
    raw = guided_affinity(FeatureGrid(g), 3, theta_beta=0.1, w2=0.0).raw
    o = kernel_offsets(3).index((0, 1))  # neighbor to the left
    assert raw[o, 1, 3, 0] < raw[o, 1, 2, 0]


def test_guided_border_and_sign(rng):
    raw = guided_affinity(FeatureGrid(rng.uniform(0, 1, (4, 4, 3))), 5).raw
    assert np.all(raw >= 0)
    o = kernel_offsets(5).index((1, 0))
    assert np.all(raw[o, 0] == 0)  # row -1 does not exist


def test_guided_rejects_bad_scale():
    with pytest.raises(ValueError):
        guided_affinity(FeatureGrid(np.zeros((3, 3))), theta_beta=0.0)
