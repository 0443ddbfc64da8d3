"""Raw transformation kernels and their normalizations.

Kernel entries are stored offset-major: ``raw[o, *spatial, ch]`` where ``o``
indexes the neighbor offsets of a ``k x k`` (or ``k x k x k``) window in
row-major order with the center removed. Offset ``(a, b)`` weights the
neighbor at ``(i - a, j - b)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from itertools import product

import numpy as np

from .grid import ShapeError, as_grid


class Mode(str, Enum):
    """Kernel normalization schemes."""

    ABS_SUM_ANCHOR = "abs-anchor"
    POSITIVE_NO_CENTER = "positive-no-center"
    MOVING_CENTER = "moving-center"
    POSITIVE_ALL = "positive-all"

    @property
    def center_reads_current(self) -> bool:
        """Whether the center weight multiplies the current iterate instead of the initial field."""
        return self in (Mode.MOVING_CENTER, Mode.POSITIVE_ALL)


@lru_cache(maxsize=None)
def kernel_offsets(kernel_size: int, ndim: int = 2) -> tuple[tuple[int, ...], ...]:
    """Neighbor offsets of an odd window, row-major, center excluded."""
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ValueError(f"kernel size must be odd and positive, got {kernel_size}")
    r = kernel_size // 2
    rng = range(-r, r + 1)
    return tuple(o for o in product(rng, repeat=ndim) if any(o))


@dataclass(eq=False)
class AffinityField:
    """Raw per-pixel (or per-voxel) kernels before normalization.

    ``raw`` has shape ``(k**nd - 1, *spatial, channels)``. ``center`` holds
    an optional raw center entry per pixel; only the modes that normalize
    over the whole window (moving-center, positive-all) look at it.
    """

    raw: np.ndarray
    kernel_size: int
    center: np.ndarray | None = None

    def __post_init__(self):
        self.raw = np.ascontiguousarray(self.raw, dtype=np.float64)
        if self.kernel_size % 2 == 0 or self.kernel_size < 3:
            raise ValueError(f"kernel size must be odd and >= 3, got {self.kernel_size}")
        nd = self.raw.ndim - 2
        if nd not in (2, 3):
            raise ShapeError(f"raw affinity must have 4 or 5 dims, got {self.raw.shape}")
        n = self.kernel_size**nd - 1
        if self.raw.shape[0] != n:
            raise ShapeError(f"expected {n} offset planes for k={self.kernel_size}, got {self.raw.shape[0]}")
        if not np.all(np.isfinite(self.raw)):
            raise ValueError("raw affinities must be finite")
        if self.center is not None:
            self.center = np.ascontiguousarray(self.center, dtype=np.float64)
            if self.center.shape != self.raw.shape[1:]:
                raise ShapeError(f"center shape {self.center.shape} != {self.raw.shape[1:]}")

    @property
    def ndim(self) -> int:
        return self.raw.ndim - 2

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        return self.raw.shape[1:-1]

    @property
    def channels(self) -> int:
        return self.raw.shape[-1]

    @property
    def height(self) -> int:
        return self.spatial_shape[-2]

    @property
    def width(self) -> int:
        return self.spatial_shape[-1]

    @property
    def offsets(self) -> tuple[tuple[int, ...], ...]:
        return kernel_offsets(self.kernel_size, self.ndim)

    @classmethod
    def uniform(cls, spatial_shape, kernel_size: int = 3, channels: int = 1) -> "AffinityField":
        n = kernel_size ** len(spatial_shape) - 1
        return cls(np.ones((n, *spatial_shape, channels)), kernel_size)

    @classmethod
    def zeros(cls, spatial_shape, kernel_size: int = 3, channels: int = 1) -> "AffinityField":
        n = kernel_size ** len(spatial_shape) - 1
        return cls(np.zeros((n, *spatial_shape, channels)), kernel_size)


@dataclass(eq=False)
class NormalizedKernels:
    """Normalized neighbor weights plus the center weight for every pixel."""

    weights: np.ndarray
    center: np.ndarray
    kernel_size: int
    mode: Mode

    @property
    def ndim(self) -> int:
        return self.weights.ndim - 2

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        return self.weights.shape[1:-1]

    @property
    def channels(self) -> int:
        return self.weights.shape[-1]

    @property
    def offsets(self) -> tuple[tuple[int, ...], ...]:
        return kernel_offsets(self.kernel_size, self.ndim)

    @classmethod
    def identity(cls, spatial_shape, kernel_size: int = 3, channels: int = 1,
                 mode: Mode = Mode.ABS_SUM_ANCHOR) -> "NormalizedKernels":
        n = kernel_size ** len(spatial_shape) - 1
        return cls(np.zeros((n, *spatial_shape, channels)), np.ones((*spatial_shape, channels)),
                   kernel_size, Mode(mode))


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    return num / np.where(den == 0.0, 1.0, den)


def normalize_arrays(raw: np.ndarray, center: np.ndarray | None, mode: Mode) -> tuple[np.ndarray, np.ndarray]:
    """Array-level normalization; see :func:`normalize`."""
    mode = Mode(mode)
    if center is None:
        center = np.zeros(raw.shape[1:])
    abs_raw = np.abs(raw)
    if mode in (Mode.ABS_SUM_ANCHOR, Mode.POSITIVE_NO_CENTER):
        s = abs_raw.sum(axis=0)
    else:
        s = abs_raw.sum(axis=0) + np.abs(center)
    zero = s == 0.0

    if mode is Mode.ABS_SUM_ANCHOR:
        w = _safe_div(raw, s)
        c = 1.0 - w.sum(axis=0)
    elif mode is Mode.POSITIVE_NO_CENTER:
        w = _safe_div(abs_raw, s)
        c = np.zeros_like(s)
    elif mode is Mode.POSITIVE_ALL:
        w = _safe_div(abs_raw, s)
        c = _safe_div(np.abs(center), s)
    else:
        w1 = _safe_div(raw, s)
        c1 = 1.0 - w1.sum(axis=0)
        t = np.abs(w1).sum(axis=0) + np.abs(c1)
        w = w1 / t
        c = c1 / t

    if zero.any():
        w = np.where(zero, 0.0, w)
        c = np.where(zero, 1.0, c)
    return w, c


def normalize(raw: AffinityField, mode: Mode | str = Mode.ABS_SUM_ANCHOR) -> NormalizedKernels:
    """Normalize raw kernels per pixel and channel.

    ``abs-anchor``
        ``w = raw / sum|raw|``, center ``1 - sum(w)`` (anchored to the initial field).
    ``positive-no-center``
        ``w = |raw| / sum|raw|``, center 0.
    ``moving-center``
        neighbors and center scaled by the whole-window absolute sum, center
        completed to ``1 - sum(w')``, then everything rescaled so the absolute
        sum over the window is 1. The center reads the current iterate.
    ``positive-all``
        ``|raw| / sum|raw|`` over the whole window including the center.

    A pixel whose denominator is zero gets the identity kernel.
    """
    mode = Mode(mode)
    w, c = normalize_arrays(raw.raw, raw.center, mode)
    return NormalizedKernels(w, c, raw.kernel_size, mode)


def stability_margin(kern: NormalizedKernels) -> float:
    """Largest per-pixel neighbor absolute sum, the Gershgorin row bound of the propagation matrix."""
    if kern.weights.shape[0] == 0:
        return 0.0
    return float(np.abs(kern.weights).sum(axis=0).max())


def guided_affinity(guide, kernel_size: int = 3, theta_beta: float = 20.0, theta_gamma: float = 3.0,
                    w1: float = 1.0, w2: float = 1.0, theta_alpha: float = 20.0) -> AffinityField:
    """Bilateral-plus-spatial RBF kernels from a guide image.

    For the neighbor ``q`` of pixel ``p`` at each window offset::

        w1 * exp(-|p-q|^2 / 2 theta_alpha^2 - |I_p - I_q|^2 / 2 theta_beta^2)
          + w2 * exp(-|p-q|^2 / 2 theta_gamma^2)

    Offsets that fall outside the image get a zero raw entry so no weight
    leaks across the border. One kernel is shared by all feature channels.
    """
    guide = as_grid(guide)
    for name, v in (("theta_alpha", theta_alpha), ("theta_beta", theta_beta), ("theta_gamma", theta_gamma)):
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")
    if guide.channels not in (1, 3):
        raise ShapeError(f"guide must have 1 or 3 channels, got {guide.channels}")

    H, W = guide.height, guide.width
    r = kernel_size // 2
    offsets = kernel_offsets(kernel_size, 2)
    img = guide.values
    padded = np.pad(img, ((r, r), (r, r), (0, 0)), mode="edge")
    inside = np.pad(np.ones((H, W), dtype=bool), r, constant_values=False)

    raw = np.zeros((len(offsets), H, W, 1))
    for o, (a, b) in enumerate(offsets):
        dp2 = float(a * a + b * b)
        nb = padded[r - a:r - a + H, r - b:r - b + W]
        di2 = ((img - nb) ** 2).sum(axis=-1)
        val = (w1 * np.exp(-dp2 / (2 * theta_alpha**2) - di2 / (2 * theta_beta**2))
               + w2 * np.exp(-dp2 / (2 * theta_gamma**2)))
        ok = inside[r - a:r - a + H, r - b:r - b + W]
        raw[o, :, :, 0] = np.where(ok, val, 0.0)
    return AffinityField(raw, kernel_size)
