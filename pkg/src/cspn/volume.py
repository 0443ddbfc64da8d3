"""3D propagation over volumes and the one-step stack fusion.

Volumes are ``(D, H, W, C)``; kernel offsets are ``(c, a, b)`` along the
leading (disparity / stack) axis, rows and columns.
"""
from __future__ import annotations

import numpy as np

from .affinity import NormalizedKernels
from .grid import FeatureGrid, FeatureVolume, ShapeError, as_volume
from .propagate import PropagationConfig, _step_array, as_kernels, iterate


def _as_kernels3(kern3, mode=None) -> NormalizedKernels:
    kern3 = as_kernels(kern3, mode)
    if kern3.ndim != 3:
        raise ShapeError(f"expected 3D kernels, got {kern3.ndim}D")
    return kern3


def step3(v_t, v_0, kern3, workers: int | None = None) -> FeatureVolume:
    v_t, v_0 = as_volume(v_t), as_volume(v_0)
    return FeatureVolume(_step_array(v_t.values, v_0.values, _as_kernels3(kern3), workers=workers))


def run3(v_0, kern3, cfg: PropagationConfig | None = None) -> FeatureVolume:
    cfg = cfg or PropagationConfig()
    v_0 = as_volume(v_0)
    return FeatureVolume(iterate(v_0.values, _as_kernels3(kern3, cfg.mode), cfg.iterations, cfg.worker_count))


def normalize_fusion(raw: np.ndarray) -> np.ndarray:
    """Positive normalization of per-pixel ``s x 3 x 3`` fusion kernels, shape ``(H, W, s, 3, 3)``.

    An all-zero kernel falls back to uniform weights.
    """
    raw = np.abs(np.asarray(raw, dtype=np.float64))
    if raw.ndim != 5 or raw.shape[-2:] != (3, 3):
        raise ShapeError(f"fusion kernels must be (H, W, s, 3, 3), got {raw.shape}")
    s = raw.sum(axis=(2, 3, 4), keepdims=True)
    uniform = np.full_like(raw, 1.0 / (raw.shape[2] * 9))
    return np.where(s == 0.0, uniform, raw / np.where(s == 0.0, 1.0, s))


def uniform_fusion(height: int, width: int, layers: int) -> np.ndarray:
    return np.full((height, width, layers, 3, 3), 1.0 / (layers * 9))


def fuse_stack(stack, kern: np.ndarray) -> FeatureGrid:
    """Collapse the leading axis of a stack with one 3D step, padding ``[0, 1, 1]``.

    ``out[i,j] = sum_l sum_{a,b} kern[i,j,l,a+1,b+1] * stack[l, i-a, j-b]``
    with zero padding in the image plane only. Kernels must be
    non-negative and sum to one per pixel (see :func:`normalize_fusion`).
    """
    stack = as_volume(stack)
    kern = np.asarray(kern, dtype=np.float64)
    s, H, W, C = stack.shape
    if kern.shape != (H, W, s, 3, 3):
        raise ShapeError(f"fusion kernels {kern.shape} do not match stack {(s, H, W)}")
    if np.any(kern < 0) or not np.allclose(kern.sum(axis=(2, 3, 4)), 1.0, rtol=0, atol=1e-9):
        raise ValueError("fusion kernels must be non-negative and sum to 1 per pixel")

    padded = np.pad(stack.values, ((0, 0), (1, 1), (1, 1), (0, 0)))
    out = np.zeros((H, W, C))
    for layer in range(s):
        for a in (-1, 0, 1):
            for b in (-1, 0, 1):
                w = kern[:, :, layer, a + 1, b + 1][..., None]
                out += w * padded[layer, 1 - a:1 - a + H, 1 - b:1 - b + W]
    return FeatureGrid(out)
