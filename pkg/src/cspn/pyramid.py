"""Spatial pyramid pooling and its one-step-propagation generalizations.

* ``spp_avg``: plain window means.
* ``cspp``: strided one-step propagation with a learned positive weight map.
* ``acspp``: dilated one-step propagation at full resolution.
* ``build_pyramid_fused``: branches upsampled, stacked and collapsed by
  :func:`cspn.volume.fuse_stack`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .affinity import AffinityField, Mode, normalize
from .grid import FeatureGrid, FeatureVolume, ShapeError, as_grid
from .propagate import _step_array
from .volume import fuse_stack, normalize_fusion, uniform_fusion


class PyramidMode(str, Enum):
    SPP = "spp"
    CSPP = "cspp"
    ASPP_LIKE = "aspp"
    ACSPP = "acspp"


DEFAULT_SIZES = ((64, 64), (32, 32), (16, 16), (8, 8))
DEFAULT_RATES = (6, 12, 18, 24)


@dataclass
class PyramidSpec:
    mode: PyramidMode = PyramidMode.SPP
    sizes: Sequence[tuple[int, int]] = field(default_factory=lambda: list(DEFAULT_SIZES))
    rates: Sequence[int] = field(default_factory=lambda: list(DEFAULT_RATES))
    kernel_size: int = 3

    def __post_init__(self):
        self.mode = PyramidMode(self.mode)
        if any(r < 1 for r in self.rates):
            raise ValueError(f"dilation rates must be >= 1, got {list(self.rates)}")

    @property
    def pooled(self) -> bool:
        return self.mode in (PyramidMode.SPP, PyramidMode.CSPP)

    @property
    def levels(self) -> int:
        return len(self.sizes) if self.pooled else len(self.rates)

    def check(self, height: int, width: int) -> None:
        if self.pooled:
            for p, q in self.sizes:
                _windows(height, width, p, q)


def _windows(height: int, width: int, p: int, q: int) -> tuple[int, int]:
    if p < 1 or q < 1 or height % p or width % q:
        raise ShapeError(f"target {p}x{q} does not evenly divide {height}x{width}")
    return height // p, width // q


def _blocks(x: np.ndarray, p: int, q: int) -> np.ndarray:
    """``(H, W, C)`` -> ``(p, q, C, wh * ww)`` window-major view."""
    H, W, C = x.shape
    wh, ww = _windows(H, W, p, q)
    return x.reshape(p, wh, q, ww, C).transpose(0, 2, 4, 1, 3).reshape(p, q, C, wh * ww)


def spp_avg(grid, target: tuple[int, int]) -> FeatureGrid:
    """Mean of each ``H/p x W/q`` window."""
    g = as_grid(grid)
    return FeatureGrid(_blocks(g.values, *target).mean(axis=-1))


def cspp(grid, weight_map, target: tuple[int, int]) -> FeatureGrid:
    """Window-wise weighted pooling with ``|w| / sum_window |w|``; one weight map shared by every channel."""
    g, wm = as_grid(grid), as_grid(weight_map)
    if wm.channels != 1 or (wm.height, wm.width) != (g.height, g.width):
        raise ShapeError(f"weight map must be {g.height}x{g.width}x1, got {wm.shape}")
    vals = _blocks(g.values, *target)
    w = _blocks(np.abs(wm.values), *target)
    s = w.sum(axis=-1)
    # divide once per window so the uniform case reduces to a plain mean
    pooled = np.where(s == 0.0, vals.mean(axis=-1), (w * vals).sum(axis=-1) / np.where(s == 0.0, 1.0, s))
    return FeatureGrid(pooled)


def acspp(grid, affinity: AffinityField, rate: int, workers: int | None = None) -> FeatureGrid:
    """One positive-all propagation step whose window offsets are scaled by ``rate``."""
    if rate < 1:
        raise ValueError(f"dilation rate must be >= 1, got {rate}")
    g = as_grid(grid)
    kern = normalize(affinity, Mode.POSITIVE_ALL)
    return FeatureGrid(_step_array(g.values, g.values, kern, dilation=rate, workers=workers))


def upsample_nearest(grid, height: int, width: int) -> FeatureGrid:
    g = as_grid(grid)
    fh, fw = height // g.height, width // g.width
    if fh * g.height != height or fw * g.width != width:
        raise ShapeError(f"cannot upsample {g.height}x{g.width} to {height}x{width} by an integer factor")
    return FeatureGrid(np.repeat(np.repeat(g.values, fh, axis=0), fw, axis=1))


def pyramid_branches(grid, spec: PyramidSpec, weights=None, workers: int | None = None) -> list[FeatureGrid]:
    """Every pyramid level at input resolution.

    ``weights`` is the shared weight map for CSPP, or one
    :class:`AffinityField` per dilation rate for ACSPP. SPP and the
    ASPP-like mode (uniform dilated kernels) ignore it.
    """
    g = as_grid(grid)
    H, W = g.height, g.width
    spec.check(H, W)
    out = []
    if spec.mode is PyramidMode.SPP:
        for size in spec.sizes:
            out.append(upsample_nearest(spp_avg(g, size), H, W))
    elif spec.mode is PyramidMode.CSPP:
        if weights is None:
            raise ValueError("CSPP needs a weight map")
        for size in spec.sizes:
            out.append(upsample_nearest(cspp(g, weights, size), H, W))
    else:
        if spec.mode is PyramidMode.ASPP_LIKE or weights is None:
            affinities = [AffinityField(np.ones((spec.kernel_size**2 - 1, H, W, 1)), spec.kernel_size,
                                        center=np.ones((H, W, 1)))] * len(spec.rates)
        else:
            affinities = list(weights)
            if len(affinities) != len(spec.rates):
                raise ValueError(f"need one affinity field per rate ({len(spec.rates)}), got {len(affinities)}")
        for rate, aff in zip(spec.rates, affinities):
            out.append(acspp(g, aff, rate, workers))
    return out


def build_pyramid_fused(grid, spec: PyramidSpec, weights=None, fusion=None,
                        workers: int | None = None) -> FeatureGrid:
    """Stack the pyramid levels and fuse them with one 3D step (padding ``[0, 1, 1]``).

    ``fusion`` holds raw ``(H, W, levels, 3, 3)`` kernels; they are made
    positive and normalized per pixel. ``None`` means uniform weights.
    """
    g = as_grid(grid)
    branches = pyramid_branches(g, spec, weights, workers)
    stack = FeatureVolume(np.stack([b.values for b in branches]))
    if fusion is None:
        kern = uniform_fusion(g.height, g.width, len(branches))
    else:
        kern = normalize_fusion(fusion)
    return fuse_stack(stack, kern)
