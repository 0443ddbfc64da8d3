"""Four-direction scan-line propagation with three-way connections.

Along a scan, line ``t`` depends on the already-updated line ``t-1``::

    h'(i, t) = (1 - sum_j w_j(i,t)) h(i, t) + sum_{j in -1,0,1} w_j(i,t) h'(i+j, t-1)

so the scan axis is serial; only the orthogonal axis can be split across
workers, and every line needs a barrier.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from . import parallel
from .affinity import AffinityField, Mode, normalize
from .grid import FeatureGrid, ShapeError, as_grid

DIRECTIONS = ("left_to_right", "right_to_left", "top_to_bottom", "bottom_to_top")


@dataclass(eq=False)
class ScanWeights:
    """``weights[direction]`` has shape ``(H, W, 3)``; the last axis is the
    offset ``-1, 0, +1`` along the axis orthogonal to the scan, in image
    coordinates (rows for horizontal scans, columns for vertical ones)."""

    weights: dict

    def __post_init__(self):
        missing = set(DIRECTIONS) - set(self.weights)
        if missing:
            raise ValueError(f"missing scan directions {sorted(missing)}")
        for d in DIRECTIONS:
            w = np.asarray(self.weights[d], dtype=np.float64)
            if w.ndim != 3 or w.shape[-1] != 3:
                raise ShapeError(f"{d} weights must be (H, W, 3), got {w.shape}")
            if np.any(np.abs(w).sum(axis=-1) > 1.0 + 1e-12):
                raise ValueError(f"{d} weights violate sum |w| <= 1")
            self.weights[d] = w

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights[DIRECTIONS[0]].shape[:2]

    @classmethod
    def zeros(cls, height: int, width: int) -> "ScanWeights":
        return cls({d: np.zeros((height, width, 3)) for d in DIRECTIONS})

    @classmethod
    def constant(cls, height: int, width: int, w) -> "ScanWeights":
        w = np.broadcast_to(np.asarray(w, dtype=np.float64), (height, width, 3))
        return cls({d: w.copy() for d in DIRECTIONS})


# offsets (a, b) of the 3x3 window feeding each direction; neighbor (i-a, j-b)
_PROJECTION = {
    "left_to_right": [(1, 1), (0, 1), (-1, 1)],     # (i-1, j-1), (i, j-1), (i+1, j-1)
    "right_to_left": [(1, -1), (0, -1), (-1, -1)],
    "top_to_bottom": [(1, 1), (1, 0), (1, -1)],     # (i-1, j-1), (i-1, j), (i-1, j+1)
    "bottom_to_top": [(-1, 1), (-1, 0), (-1, -1)],
}


def scan_weights_from_affinity(field: AffinityField, mode: Mode | str = Mode.POSITIVE_NO_CENTER) -> ScanWeights:
    """Pick the three previous-line entries of a normalized 3x3 kernel for each direction.

    The kernel is normalized over all eight neighbors first, so the three
    picked weights keep ``sum |w| <= 1``.
    """
    if field.kernel_size != 3 or field.ndim != 2:
        raise ShapeError("scan weights are projected from 2D 3x3 affinities")
    kern = normalize(field, mode)
    index = {off: o for o, off in enumerate(kern.offsets)}
    out = {}
    for d in DIRECTIONS:
        out[d] = np.stack([kern.weights[index[off], :, :, 0] for off in _PROJECTION[d]], axis=-1)
    return ScanWeights(out)


def _to_canonical(x: np.ndarray, direction: str) -> np.ndarray:
    """View in which the scan runs left to right along axis 1."""
    if direction == "left_to_right":
        return x
    if direction == "right_to_left":
        return x[:, ::-1]
    if direction == "top_to_bottom":
        return x.swapaxes(0, 1)
    if direction == "bottom_to_top":
        return x[::-1].swapaxes(0, 1)
    raise ValueError(f"unknown direction {direction!r}")


def _scan_canonical(h: np.ndarray, w: np.ndarray, out: np.ndarray, workers: int | None) -> None:
    """Left-to-right recurrence on ``h`` of shape ``(R, T, C)`` with weights ``(R, T, 3)``."""
    R, T, _ = h.shape
    keep = (1.0 - w.sum(axis=-1))[..., None]
    out[:, 0] = h[:, 0]
    parts = parallel.bands(R, parallel.resolve_workers(workers))

    def line(t: int, lo: int, hi: int) -> None:
        prev = out[:, t - 1]
        acc = keep[lo:hi, t] * h[lo:hi, t]
        # three-way connection, rows outside the image contribute nothing
        acc = acc + w[lo:hi, t, 1:2] * prev[lo:hi]
        up_lo = max(lo, 1)
        acc[up_lo - lo:] += w[up_lo:hi, t, 0:1] * prev[up_lo - 1:hi - 1]
        dn_hi = min(hi, R - 1)
        acc[:dn_hi - lo] += w[lo:dn_hi, t, 2:3] * prev[lo + 1:dn_hi + 1]
        out[lo:hi, t] = acc

    if len(parts) <= 1:
        for t in range(1, T):
            line(t, 0, R)
        return

    barrier = threading.Barrier(len(parts))

    def worker(lo: int, hi: int) -> None:
        for t in range(1, T):
            line(t, lo, hi)
            barrier.wait()

    futures = [parallel.pool(len(parts)).submit(worker, lo, hi) for lo, hi in parts]
    for f in futures:
        f.result()


def scan(h, weights: ScanWeights, direction: str, workers: int | None = None) -> FeatureGrid:
    h = as_grid(h)
    if weights.shape != (h.height, h.width):
        raise ShapeError(f"scan weights {weights.shape} do not match grid {(h.height, h.width)}")
    if direction not in DIRECTIONS:
        raise ValueError(f"unknown direction {direction!r}")
    hv = _to_canonical(h.values, direction)
    wv = _to_canonical(weights.weights[direction], direction)
    out = np.empty(h.values.shape)
    ov = _to_canonical(out, direction)
    _scan_canonical(np.ascontiguousarray(hv), np.ascontiguousarray(wv), ov, workers)
    return FeatureGrid(out)


def refine(h, weights: ScanWeights, workers: int | None = None) -> FeatureGrid:
    """Mean of the four directional scans of ``h``."""
    h = as_grid(h)
    total = np.zeros(h.values.shape)
    for d in DIRECTIONS:
        total += scan(h, weights, d, workers).values
    return FeatureGrid(total / 4.0)
