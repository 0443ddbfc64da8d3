"""Recurrent 2D propagation and sparse-sample-preserving depth completion.

One step computes, for every pixel at once::

    H[i,j,t+1] = center[i,j] * H[i,j,0] + sum_{(a,b) != 0} w[i,j](a,b) * H[i-a, j-b, t]

with zero padding outside the image. Kernels normalized with a
moving-center or positive-all scheme read the center from ``H[t]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import parallel
from .affinity import AffinityField, Mode, NormalizedKernels, normalize
from .formats import SparseSamples
from .grid import DoubleBuffer, FeatureGrid, ShapeError, as_grid


@dataclass
class PropagationConfig:
    iterations: int = 24
    mode: Mode = Mode.ABS_SUM_ANCHOR
    kernel_size: int = 3
    worker_count: int | None = None

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.worker_count is not None and self.worker_count < 1:
            raise ValueError(f"worker_count must be >= 1, got {self.worker_count}")


def as_kernels(kern, mode: Mode | str | None = None) -> NormalizedKernels:
    if isinstance(kern, NormalizedKernels):
        return kern
    if isinstance(kern, AffinityField):
        return normalize(kern, Mode.ABS_SUM_ANCHOR if mode is None else mode)
    raise TypeError(f"expected NormalizedKernels or AffinityField, got {type(kern).__name__}")


# --------------------------------------------------------------------------- #
# stencil core, shared with the 3D operator


def _check_kernels(state_shape: tuple[int, ...], kern: NormalizedKernels) -> None:
    spatial = state_shape[:-1]
    if kern.spatial_shape != spatial:
        raise ShapeError(f"kernel field {kern.spatial_shape} does not match field {spatial}")
    if kern.channels not in (1, state_shape[-1]):
        raise ShapeError(f"kernel channels {kern.channels} incompatible with {state_shape[-1]} feature channels")


def pad_state(x: np.ndarray, pad: int) -> np.ndarray:
    nd = x.ndim - 1
    return np.pad(x, [(pad, pad)] * nd + [(0, 0)])


def stencil_step(out: np.ndarray, src_padded: np.ndarray, pad: int, center_src: np.ndarray,
                 weights: np.ndarray, center: np.ndarray, offsets, dilation: int = 1,
                 workers: int | None = None) -> np.ndarray:
    """Write one propagation step into ``out``.

    ``src_padded`` is the current iterate zero-padded by ``pad`` on every
    spatial axis; ``center_src`` is what the center weight multiplies.
    Work is split into bands along the height axis; each output element is
    accumulated in the same fixed offset order whatever the band layout.
    """
    nd = out.ndim - 1
    band_axis = nd - 2
    spatial = out.shape[:-1]

    def band(start: int, stop: int) -> None:
        sel = [slice(None)] * nd
        sel[band_axis] = slice(start, stop)
        sel = tuple(sel)
        dst = out[sel]
        np.multiply(center[sel], center_src[sel], out=dst)
        tmp = np.empty_like(dst)
        for o, off in enumerate(offsets):
            src = []
            for ax in range(nd):
                lo = pad - off[ax] * dilation
                if ax == band_axis:
                    src.append(slice(lo + start, lo + stop))
                else:
                    src.append(slice(lo, lo + spatial[ax]))
            np.multiply(weights[o][sel], src_padded[tuple(src)], out=tmp)
            dst += tmp

    parallel.run_bands(band, spatial[band_axis], workers)
    return out


def _step_array(ht: np.ndarray, h0: np.ndarray, kern: NormalizedKernels, dilation: int = 1,
                workers: int | None = None) -> np.ndarray:
    if ht.shape != h0.shape:
        raise ShapeError(f"h_t {ht.shape} and h_0 {h0.shape} differ")
    _check_kernels(ht.shape, kern)
    pad = (kern.kernel_size // 2) * dilation
    out = np.empty_like(ht)
    center_src = ht if kern.mode.center_reads_current else h0
    return stencil_step(out, pad_state(ht, pad), pad, center_src, kern.weights, kern.center,
                        kern.offsets, dilation, workers)


def iterate(h0: np.ndarray, kern: NormalizedKernels, iterations: int, workers: int | None = None,
            mask: np.ndarray | None = None, fixed: np.ndarray | None = None,
            dilation: int = 1, callback=None) -> np.ndarray:
    """Run ``iterations`` steps on padded double buffers.

    With ``mask``/``fixed`` given, masked pixels are overwritten with
    ``fixed`` after every step. ``callback(t, h_t)`` sees each iterate
    before it is consumed.
    """
    _check_kernels(h0.shape, kern)
    if iterations == 0:
        return h0.copy()
    pad = (kern.kernel_size // 2) * dilation
    interior = tuple([slice(pad, pad + n) for n in h0.shape[:-1]] + [slice(None)])
    buf = DoubleBuffer(pad_state(h0, pad))
    moving = kern.mode.center_reads_current
    where = None if mask is None else np.broadcast_to(mask.reshape(mask.shape + (1,) * (h0.ndim - mask.ndim)), h0.shape)
    for t in range(iterations):
        cur = buf.front[interior]
        if callback is not None:
            callback(t, cur)
        out = buf.back[interior]
        stencil_step(out, buf.front, pad, cur if moving else h0, kern.weights, kern.center,
                     kern.offsets, dilation, workers)
        if where is not None:
            np.copyto(out, fixed, where=where)
        buf.swap()
    return buf.front[interior].copy()


# --------------------------------------------------------------------------- #
# public operators


def step(h_t, h_0, kern, workers: int | None = None) -> FeatureGrid:
    """One simultaneous update of every pixel."""
    h_t, h_0 = as_grid(h_t), as_grid(h_0)
    return FeatureGrid(_step_array(h_t.values, h_0.values, as_kernels(kern), workers=workers))


def run(h_0, kern, cfg: PropagationConfig | None = None) -> FeatureGrid:
    """``cfg.iterations`` steps from ``h_0``; the anchor stays ``h_0`` throughout."""
    cfg = cfg or PropagationConfig()
    h_0 = as_grid(h_0)
    kern = as_kernels(kern, cfg.mode)
    return FeatureGrid(iterate(h_0.values, kern, cfg.iterations, cfg.worker_count))


def _sparse_arrays(sparse: SparseSamples, shape) -> tuple[np.ndarray, np.ndarray]:
    if sparse.shape != tuple(shape[:2]):
        raise ShapeError(f"samples cover {sparse.shape}, field is {tuple(shape[:2])}")
    mask = sparse.mask().bits
    fixed = np.broadcast_to(sparse.dense()[..., None], shape)
    return mask, fixed


def replace_samples(h: np.ndarray, sparse: SparseSamples) -> np.ndarray:
    mask, fixed = _sparse_arrays(sparse, h.shape)
    out = h.copy()
    np.copyto(out, fixed, where=np.broadcast_to(mask[..., None], h.shape))
    return out


def step_with_sparse(h_t, h_0, kern, sparse: SparseSamples, workers: int | None = None) -> FeatureGrid:
    """One step followed by overwriting every sampled pixel with its sample value."""
    out = step(h_t, h_0, kern, workers)
    return FeatureGrid(replace_samples(out.values, sparse))


def complete_depth(depth_init, sparse: SparseSamples, kern, cfg: PropagationConfig | None = None,
                   callback=None) -> FeatureGrid:
    """Refine a dense depth map while keeping sampled pixels fixed.

    Samples are written into the initial map first, so the anchor term
    already carries them, then every step is followed by the replacement.
    """
    cfg = cfg or PropagationConfig()
    depth_init = as_grid(depth_init)
    if depth_init.channels != 1:
        raise ShapeError(f"depth map must have one channel, got {depth_init.channels}")
    kern = as_kernels(kern, cfg.mode)
    mask, fixed = _sparse_arrays(sparse, depth_init.shape)
    h0 = replace_samples(depth_init.values, sparse)
    return FeatureGrid(iterate(h0, kern, cfg.iterations, cfg.worker_count, mask, fixed, callback=callback))


def nearest_fill(sparse: SparseSamples) -> FeatureGrid:
    """Dense map where every pixel takes the value of its nearest sample (ties to the lowest index)."""
    if len(sparse) == 0:
        raise ValueError("need at least one sample")
    missing = ~sparse.mask().bits
    _, (ri, ci) = ndimage.distance_transform_edt(missing, return_indices=True)
    return FeatureGrid(sparse.dense()[ri, ci][..., None])


def smooth_fill(sparse: SparseSamples, sigma: float = 2.0) -> FeatureGrid:
    """Nearest-sample fill blurred by a Gaussian: a stand-in for a coarse, edge-blind prediction."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    d = nearest_fill(sparse).values[:, :, 0]
    return FeatureGrid(ndimage.gaussian_filter(d, sigma, mode="nearest")[..., None])


def replacement_only(depth_init, sparse: SparseSamples) -> FeatureGrid:
    """The initial map with samples written in and no propagation."""
    return FeatureGrid(replace_samples(as_grid(depth_init).values, sparse))

