"""Dense field containers shared by every propagation operator.

Storage is row-major and channel-minor: a 2D field is an ``(H, W, C)``
float64 array, a volume is ``(D, H, W, C)``. Reads outside the field are
zero (zero padding).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Raised when two fields that must agree in shape do not."""


def _as_float_array(values, ndim: int, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.ndim == ndim - 1:
        arr = arr[..., None]
    if arr.ndim != ndim:
        raise ShapeError(f"{name} expects {ndim - 1} or {ndim} dims, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} values must be finite")
    return arr


@dataclass(eq=False)
class FeatureGrid:
    """Dense ``height x width x channels`` field of 64-bit reals."""

    values: np.ndarray

    def __post_init__(self):
        self.values = _as_float_array(self.values, 3, "FeatureGrid")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    @classmethod
    def zeros(cls, height: int, width: int, channels: int = 1) -> "FeatureGrid":
        return cls(np.zeros((height, width, channels)))

    def plane(self, ch: int = 0) -> np.ndarray:
        return self.values[:, :, ch]

    def copy(self) -> "FeatureGrid":
        return FeatureGrid(self.values.copy())

    def __getitem__(self, idx):
        return self.values[idx]

    def __setitem__(self, idx, value):
        self.values[idx] = value


@dataclass(eq=False)
class FeatureVolume:
    """Dense ``depth x height x width x channels`` field."""

    values: np.ndarray

    def __post_init__(self):
        self.values = _as_float_array(self.values, 4, "FeatureVolume")

    @property
    def depth(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    @property
    def channels(self) -> int:
        return self.values.shape[3]

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.values.shape

    def copy(self) -> "FeatureVolume":
        return FeatureVolume(self.values.copy())


@dataclass(eq=False)
class BinaryMask:
    """One validity flag per pixel."""

    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.ascontiguousarray(self.bits, dtype=bool)
        if self.bits.ndim != 2:
            raise ShapeError(f"BinaryMask must be 2D, got shape {self.bits.shape}")

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def count(self) -> int:
        return int(self.bits.sum())

    @classmethod
    def full(cls, height: int, width: int) -> "BinaryMask":
        return cls(np.ones((height, width), dtype=bool))


def as_grid(x) -> FeatureGrid:
    return x if isinstance(x, FeatureGrid) else FeatureGrid(x)


def as_volume(x) -> FeatureVolume:
    return x if isinstance(x, FeatureVolume) else FeatureVolume(x)


def neighbor_read(grid: FeatureGrid, i: int, j: int, a: int, b: int, ch: int = 0) -> float:
    """Value at ``(i - a, j - b, ch)``, or 0 when that cell lies outside the grid."""
    ii, jj = i - a, j - b
    if 0 <= ii < grid.height and 0 <= jj < grid.width:
        return float(grid.values[ii, jj, ch])
    return 0.0


def swap_buffers(front, back) -> None:
    """Exchange the storage of two equally shaped fields without copying."""
    if front.values.shape != back.values.shape:
        raise ShapeError(f"cannot swap buffers of shape {front.values.shape} and {back.values.shape}")
    front.values, back.values = back.values, front.values


class DoubleBuffer:
    """Front/back pair for Jacobi-style updates: read ``front``, write ``back``, swap."""

    def __init__(self, initial: np.ndarray):
        self.front = np.array(initial, dtype=np.float64, copy=True)
        self.back = np.zeros_like(self.front)

    def swap(self) -> None:
        self.front, self.back = self.back, self.front


def check_same_shape(*arrays: np.ndarray, what: str = "fields") -> None:
    shapes = {a.shape for a in arrays}
    if len(shapes) > 1:
        raise ShapeError(f"{what} must share one shape, got {sorted(shapes)}")
