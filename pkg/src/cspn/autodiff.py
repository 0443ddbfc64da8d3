"""Reverse-mode gradients through the propagation recurrence, and a toy trainer.

The forward pass runs the exact same code as :func:`cspn.propagate.run` /
:func:`cspn.propagate.complete_depth` and records every iterate. The
backward pass walks the recurrence in reverse, then pulls the kernel
gradient back through the normalization (quotient rule, ``sign`` as the
subgradient of ``|.|`` with ``sign(0) = 0``).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .affinity import AffinityField, Mode, NormalizedKernels, guided_affinity, normalize
from .formats import SparseSamples, SyntheticScene
from .grid import FeatureGrid, ShapeError, as_grid
from .propagate import PropagationConfig, _sparse_arrays, iterate, pad_state, replace_samples, smooth_fill

log = logging.getLogger(__name__)

# guide intensities live in [0, 1]; bandwidth of 8 grey levels
GUIDE_THETA_BETA = 8.0 / 255.0


@dataclass(eq=False)
class Tape:
    h0: np.ndarray
    raw: AffinityField
    kern: NormalizedKernels
    snapshots: list = field(default_factory=list)
    mask: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.snapshots)


def forward_taped(h_0, raw: AffinityField, cfg: PropagationConfig | None = None,
                  sparse: SparseSamples | None = None) -> tuple[FeatureGrid, Tape]:
    cfg = cfg or PropagationConfig()
    h_0 = as_grid(h_0)
    kern = normalize(raw, cfg.mode)
    snaps: list[np.ndarray] = []

    def record(t, cur):
        snaps.append(cur.copy())

    if sparse is None:
        h0 = h_0.values
        out = iterate(h0, kern, cfg.iterations, cfg.worker_count, callback=record)
        mask = None
    else:
        mask, fixed = _sparse_arrays(sparse, h_0.shape)
        h0 = replace_samples(h_0.values, sparse)
        out = iterate(h0, kern, cfg.iterations, cfg.worker_count, mask, fixed, callback=record)
    return FeatureGrid(out), Tape(h0, raw, kern, snaps, mask)


def _shift(x: np.ndarray, off, pad: int) -> np.ndarray:
    """``y[i, j] = x[i - a, j - b]`` with zero padding (``pad >= max|a|, |b|``)."""
    xp = pad_state(x, pad)
    H, W = x.shape[:2]
    a, b = off
    return xp[pad - a:pad - a + H, pad - b:pad - b + W]


def _reduce_channels(g: np.ndarray, channels: int) -> np.ndarray:
    return g if g.shape[-1] == channels else g.sum(axis=-1, keepdims=True)


def normalize_vjp(raw: np.ndarray, center: np.ndarray | None, mode: Mode,
                  g_w: np.ndarray, g_c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pull gradients on normalized weights ``g_w`` and center ``g_c`` back to raw entries."""
    mode = Mode(mode)
    if center is None:
        center = np.zeros(raw.shape[1:])
    sgn = np.sign(raw)
    abs_raw = np.abs(raw)
    if mode in (Mode.ABS_SUM_ANCHOR, Mode.POSITIVE_NO_CENTER):
        s = abs_raw.sum(axis=0)
    else:
        s = abs_raw.sum(axis=0) + np.abs(center)
    zero = s == 0.0
    s = np.where(zero, 1.0, s)
    g_center = np.zeros_like(center)

    if mode is Mode.ABS_SUM_ANCHOR:
        ge = g_w - g_c
        g_raw = ge / s - sgn * (ge * raw).sum(axis=0) / s**2
    elif mode is Mode.POSITIVE_NO_CENTER:
        g_raw = sgn * (g_w / s - (g_w * abs_raw).sum(axis=0) / s**2)
    elif mode is Mode.POSITIVE_ALL:
        G = (g_w * abs_raw).sum(axis=0) + g_c * np.abs(center)
        g_raw = sgn * (g_w / s - G / s**2)
        g_center = np.sign(center) * (g_c / s - G / s**2)
    else:
        w1 = raw / s
        c1 = 1.0 - w1.sum(axis=0)
        t = np.abs(w1).sum(axis=0) + np.abs(c1)
        G = (g_w * w1).sum(axis=0) + g_c * c1
        dt = -G / t**2
        g_w1 = g_w / t + dt * np.sign(w1)
        g_c1 = g_c / t + dt * np.sign(c1)
        g_w1 = g_w1 - g_c1
        inner = (g_w1 * raw).sum(axis=0)
        g_raw = g_w1 / s - sgn * inner / s**2
        g_center = -np.sign(center) * inner / s**2

    g_raw = np.where(zero, 0.0, g_raw)
    g_center = np.where(zero, 0.0, g_center)
    return g_raw, g_center


def backward(tape: Tape, grad_out) -> tuple[FeatureGrid, AffinityField]:
    """Gradients of ``sum(grad_out * output)`` w.r.t. the initial field and the raw kernels.

    The raw-kernel gradient comes back as an :class:`AffinityField` whose
    ``center`` holds the gradient of the raw center entries (zero when the
    mode ignores them).
    """
    g = np.array(as_grid(grad_out).values, dtype=np.float64)
    if g.shape != tape.h0.shape:
        raise ShapeError(f"gradient {g.shape} does not match the taped field {tape.h0.shape}")
    kern = tape.kern
    if kern.ndim != 2:
        raise ShapeError("backward supports 2D propagation only")
    moving = kern.mode.center_reads_current
    pad = kern.kernel_size // 2
    Cw = kern.channels
    where = None if tape.mask is None else np.broadcast_to(tape.mask[..., None], g.shape)

    H, W = g.shape[:2]
    offsets = kern.offsets
    # w[o] moved onto the source pixel it reads from, so the adjoint is a gather
    w_back = [_shift(kern.weights[o], (-a, -b), pad) for o, (a, b) in enumerate(offsets)]

    g_w = np.zeros_like(kern.weights)
    g_c = np.zeros_like(kern.center)
    g_h0 = np.zeros_like(g)
    for t in reversed(range(len(tape))):
        if where is not None:
            g[where] = 0.0
        ht = tape.snapshots[t]
        g_c += _reduce_channels(g * (ht if moving else tape.h0), Cw)
        g_prev = g * kern.center if moving else np.zeros_like(g)
        if not moving:
            g_h0 += g * kern.center
        hp = pad_state(ht, pad)
        gp = pad_state(g, pad)
        for o, (a, b) in enumerate(offsets):
            g_w[o] += _reduce_channels(g * hp[pad - a:pad - a + H, pad - b:pad - b + W], Cw)
            g_prev += w_back[o] * gp[pad + a:pad + a + H, pad + b:pad + b + W]
        g = g_prev
    g_h0 += g
    if where is not None:
        g_h0[where] = 0.0

    raw = tape.raw
    g_raw, g_center = normalize_vjp(raw.raw, raw.center, kern.mode, g_w, g_c)
    return FeatureGrid(g_h0), AffinityField(g_raw, raw.kernel_size, center=g_center)


# --------------------------------------------------------------------------- #
# finite-difference check


@dataclass
class GradcheckReport:
    max_abs_h0: float
    max_rel_h0: float
    max_abs_raw: float
    max_rel_raw: float
    coordinates: int

    @property
    def max_rel(self) -> float:
        return max(self.max_rel_h0, self.max_rel_raw)

    def lines(self) -> list[str]:
        return [f"{k},{v:.6e}" if isinstance(v, float) else f"{k},{v}" for k, v in self.__dict__.items()]


def _rel_error(analytic: np.ndarray, numeric: np.ndarray) -> tuple[float, float]:
    """Max absolute error, and that error relative to the largest gradient entry."""
    err = np.abs(analytic - numeric)
    scale = max(float(np.abs(numeric).max(initial=0.0)), float(np.abs(analytic).max(initial=0.0)))
    if err.size == 0:
        return 0.0, 0.0
    return float(err.max()), float(err.max() / scale) if scale > 0 else float(err.max())


def random_raw(rng: np.random.Generator, shape, min_abs: float = 1e-3) -> np.ndarray:
    """Standard normal entries redrawn until none sits within ``min_abs`` of the ``|.|`` kink."""
    x = rng.standard_normal(shape)
    while True:
        bad = np.abs(x) < min_abs
        if not bad.any():
            return x
        x[bad] = rng.standard_normal(int(bad.sum()))


def gradcheck(shape=(5, 4), k: int = 3, N: int = 3, mode: Mode | str = Mode.ABS_SUM_ANCHOR,
              seed: int = 0, eps: float = 1e-6, channels: int = 1,
              sparse_count: int = 0) -> GradcheckReport:
    """Compare :func:`backward` with central differences on every coordinate."""
    H, W = shape
    if H * W > 64:
        raise ValueError("gradcheck is brute force; keep grids at or below 8x8")
    rng = np.random.default_rng(seed)
    mode = Mode(mode)
    h0 = rng.standard_normal((H, W, channels))
    raw = random_raw(rng, (k * k - 1, H, W, channels))
    center = random_raw(rng, (H, W, channels)) if mode.center_reads_current else None
    G = rng.standard_normal((H, W, channels))
    sparse = None
    if sparse_count:
        idx = rng.choice(H * W, size=sparse_count, replace=False)
        r, c = np.divmod(idx, W)
        sparse = SparseSamples(r, c, rng.uniform(0.5, 2.0, sparse_count), (H, W))
    cfg = PropagationConfig(iterations=N, mode=mode, kernel_size=k)

    def loss(h, rw, cn) -> float:
        out, _ = forward_taped(h, AffinityField(rw, k, center=cn), cfg, sparse)
        return float((G * out.values).sum())

    _, tape = forward_taped(h0, AffinityField(raw, k, center=center), cfg, sparse)
    g_h0, g_raw = backward(tape, G)

    num_h0 = np.zeros_like(h0)
    for idx in np.ndindex(h0.shape):
        hp, hm = h0.copy(), h0.copy()
        hp[idx] += eps
        hm[idx] -= eps
        num_h0[idx] = (loss(hp, raw, center) - loss(hm, raw, center)) / (2 * eps)

    params = [raw] + ([center] if center is not None else [])
    analytic = [g_raw.raw] + ([g_raw.center] if center is not None else [])
    numeric = [np.zeros_like(p) for p in params]
    for which, p in enumerate(params):
        for idx in np.ndindex(p.shape):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[which][idx] += eps
            minus[which][idx] -= eps
            lp = loss(h0, plus[0], plus[1] if center is not None else None)
            lm = loss(h0, minus[0], minus[1] if center is not None else None)
            numeric[which][idx] = (lp - lm) / (2 * eps)

    a_h0, r_h0 = _rel_error(g_h0.values, num_h0)
    a_raw, r_raw = _rel_error(np.concatenate([a.ravel() for a in analytic]),
                              np.concatenate([n.ravel() for n in numeric]))
    coords = h0.size + sum(p.size for p in params)
    return GradcheckReport(a_h0, r_h0, a_raw, r_raw, coords)


# --------------------------------------------------------------------------- #
# toy trainer


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        self.step = step
        super().__init__(f"loss became {loss} at step {step}")


@dataclass
class LearnConfig:
    step_size: float = 1.0
    steps: int = 300
    loss: str = "L1"
    mode: Mode = Mode.POSITIVE_NO_CENTER
    seed: int = 0
    init_jitter: float = 0.0
    stop_below: float | None = None

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.loss not in ("L1", "L2"):
            raise ValueError(f"loss must be 'L1' or 'L2', got {self.loss!r}")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")


def _loss_and_grad(pred: np.ndarray, gt: np.ndarray, valid: np.ndarray, kind: str) -> tuple[float, np.ndarray]:
    diff = np.where(valid, pred - gt, 0.0)
    n = int(valid.sum())
    if kind == "L1":
        return float(np.abs(diff).sum() / n), np.sign(diff) / n
    return float((diff**2).sum() / n), 2.0 * diff / n


def train_toy(scene: SyntheticScene, sparse: SparseSamples, cfg: LearnConfig | None = None,
              prop: PropagationConfig | None = None, init: AffinityField | None = None,
              depth_init=None) -> tuple[AffinityField, list[float]]:
    """Fit per-pixel raw affinities by plain gradient descent on the completion loss.

    Starts from guided RBF affinities of the scene's guide image (unless
    ``init`` is given) and :func:`smooth_fill` as the initial depth.
    Returns the learned field and the loss before each update plus the
    final loss (``steps + 1`` entries, fewer when ``cfg.stop_below`` ends
    the run once the loss drops under that fraction of the initial loss).
    """
    cfg = cfg or LearnConfig()
    prop = prop or PropagationConfig(mode=cfg.mode)
    prop = PropagationConfig(prop.iterations, cfg.mode, prop.kernel_size, prop.worker_count)
    if init is None:
        init = guided_affinity(scene.guide, prop.kernel_size, theta_beta=GUIDE_THETA_BETA, w2=0.0)
    if cfg.init_jitter > 0:
        rng = np.random.default_rng(cfg.seed)
        init = AffinityField(init.raw * np.exp(cfg.init_jitter * rng.standard_normal(init.raw.shape)),
                             init.kernel_size, init.center)
    d_init = smooth_fill(sparse) if depth_init is None else as_grid(depth_init)
    gt = scene.depth_gt.values
    valid = gt > 0

    raw = init.raw.copy()
    center = None if init.center is None else init.center.copy()
    history: list[float] = []
    for step in range(cfg.steps + 1):
        field_ = AffinityField(raw, init.kernel_size, center=center)
        out, tape = forward_taped(d_init, field_, prop, sparse)
        loss, g_out = _loss_and_grad(out.values, gt, valid, cfg.loss)
        if not np.isfinite(loss):
            raise TrainingDiverged(step, loss)
        history.append(loss)
        if step == cfg.steps:
            break
        if cfg.stop_below is not None and loss < cfg.stop_below * history[0]:
            break
        _, g_raw = backward(tape, g_out)
        raw = raw - cfg.step_size * g_raw.raw
        if center is not None:
            center = center - cfg.step_size * g_raw.center
        if not np.all(np.isfinite(raw)):
            raise TrainingDiverged(step, float("nan"))
        if step % 50 == 0:
            log.debug("step %d loss %.6g", step, loss)
    return AffinityField(raw, init.kernel_size, center=center), history


def write_history_csv(history, path) -> None:
    with open(path, "w") as fh:
        fh.write("step,loss\n")
        for k, v in enumerate(history):
            fh.write(f"{k},{v:.17g}\n")
