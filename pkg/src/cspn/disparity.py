"""Soft-argmin disparity regression, the L1 training loss and evaluation metrics."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .grid import BinaryMask, FeatureGrid, ShapeError, as_grid

DELTA_THRESHOLDS = (1.02, 1.05, 1.10, 1.25, 1.25**2, 1.25**3)
KITTI12_THRESHOLDS = (2, 3, 4, 5)


@dataclass(eq=False)
class CostVolume:
    """Matching costs ``costs[d, i, j]`` for disparities ``d = 0..max_disparity``."""

    costs: np.ndarray

    def __post_init__(self):
        self.costs = np.ascontiguousarray(self.costs, dtype=np.float64)
        if self.costs.ndim != 3:
            raise ShapeError(f"cost volume must be (D+1, H, W), got {self.costs.shape}")
        if self.costs.shape[0] < 2:
            raise ShapeError("need at least two disparity bins (max_disparity >= 1)")
        if not np.all(np.isfinite(self.costs)):
            raise ValueError("costs must be finite")

    @property
    def max_disparity(self) -> int:
        return self.costs.shape[0] - 1


def _softmax_parts(costs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    logits = -costs
    e = np.exp(logits - logits.max(axis=0, keepdims=True))
    return e, e.sum(axis=0)


def soft_argmin(vol: CostVolume) -> FeatureGrid:
    """``sum_d d * softmax(-c)_d`` per pixel.

    The weighted sum is divided by the normalizer last, so equal costs
    give exactly ``max_disparity / 2``.
    """
    e, z = _softmax_parts(vol.costs)
    d = np.arange(vol.costs.shape[0], dtype=np.float64)[:, None, None]
    return FeatureGrid(((d * e).sum(axis=0) / z)[..., None])


def soft_argmin_grad(vol: CostVolume, grad_out) -> np.ndarray:
    """Gradient of ``sum(grad_out * soft_argmin(vol))`` with respect to the costs."""
    g = as_grid(grad_out).values[:, :, 0]
    e, z = _softmax_parts(vol.costs)
    p = e / z
    d = np.arange(vol.costs.shape[0], dtype=np.float64)[:, None, None]
    mean = (d * p).sum(axis=0)
    return -p * (d - mean) * g


def _masked(pred, gt, valid) -> tuple[np.ndarray, np.ndarray]:
    p, t = as_grid(pred).values[:, :, 0], as_grid(gt).values[:, :, 0]
    if p.shape != t.shape:
        raise ShapeError(f"prediction {p.shape} and ground truth {t.shape} differ")
    bits = np.ones(p.shape, dtype=bool) if valid is None else (
        valid.bits if isinstance(valid, BinaryMask) else np.asarray(valid, dtype=bool))
    if bits.shape != p.shape:
        raise ShapeError(f"mask {bits.shape} does not match {p.shape}")
    if not bits.any():
        raise ValueError("valid mask selects no pixels")
    return p[bits], t[bits]


def l1_loss(pred, gt, valid=None) -> float:
    """Mean absolute error over valid pixels."""
    p, t = _masked(pred, gt, valid)
    return float(np.abs(t - p).mean())


def depth_metrics(pred, gt, valid=None) -> dict:
    """RMSE, mean relative error and the delta-threshold accuracies (in percent)."""
    p, t = _masked(pred, gt, valid)
    if np.any(t <= 0):
        raise ValueError("ground truth must be positive on the valid set")
    if np.any(p <= 0):
        raise ValueError("prediction must be positive on the valid set")
    ratio = np.maximum(t / p, p / t)
    return {
        "rmse": float(np.sqrt(np.mean((t - p) ** 2))),
        "rel": float(np.mean(np.abs(t - p) / t)),
        "delta": {th: float(100.0 * np.mean(ratio < th)) for th in DELTA_THRESHOLDS},
    }


def stereo_metrics(pred, gt, valid=None) -> dict:
    """End-point error, KITTI 2012 outlier rates and the KITTI 2015 D1 rate (percent).

    A KITTI 2015 outlier is off by more than 3 px *and* by more than 5% of the
    true disparity.
    """
    p, t = _masked(pred, gt, valid)
    if np.any(t <= 0):
        raise ValueError("ground truth must be positive on the valid set")
    err = np.abs(t - p)
    return {
        "epe": float(err.mean()),
        "outlier_rate": {th: float(100.0 * np.mean(err > th)) for th in KITTI12_THRESHOLDS},
        "kitti15_rate": float(100.0 * np.mean((err > 3.0) & (err > 0.05 * t))),
    }


def flatten_metrics(metrics: dict) -> list[tuple[str, float]]:
    rows = []
    for key, val in metrics.items():
        if isinstance(val, dict):
            for th, v in val.items():
                label = f"{th:g}" if isinstance(th, float) else str(th)
                rows.append((f"{key}_{label}", v))
        else:
            rows.append((key, val))
    return rows


def write_metrics_csv(metrics: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "value"])
        for name, v in flatten_metrics(metrics):
            w.writerow([name, f"{v:.17g}"])
