"""Explicit matrix form of the propagation, used as ground truth.

One step on the vectorized state reads ``A @ h_t + (I - D) @ h_0``, where
``A`` holds neighbor weights (zero diagonal) and ``D`` the per-pixel sums
of those weights. The matrix is assembled by plain enumeration of pixels
and window offsets, independently of the sliced stencil code. States are
vectorized row-major with channels last, which is a relabeling of the
column-first order and changes nothing else.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
import scipy.sparse as sp

from .affinity import NormalizedKernels
from .formats import SparseSamples
from .grid import ShapeError


@dataclass(eq=False)
class DiffusionSystem:
    A: sp.csr_matrix
    degree: np.ndarray
    center: np.ndarray
    center_reads_current: bool
    state_shape: tuple[int, ...]
    anchor_mask: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def row(self, q: int) -> tuple[np.ndarray, np.ndarray]:
        """Column indices and weights stored for state ``q``."""
        lo, hi = self.A.indptr[q], self.A.indptr[q + 1]
        return self.A.indices[lo:hi].copy(), self.A.data[lo:hi].copy()

    def dense(self) -> np.ndarray:
        return self.A.toarray()

    def update_matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """Dense ``(M_t, M_0)`` with ``step = M_t h_t + M_0 h_0``."""
        C = np.diag(self.center)
        if self.center_reads_current:
            return self.dense() + C, np.zeros_like(C)
        return self.dense(), C

    def gershgorin_bound(self) -> float:
        if self.n == 0:
            return 0.0
        return float(np.abs(self.A).sum(axis=1).max())

    def dump_csv(self, path) -> None:
        coo = self.A.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w") as fh:
            fh.write("row,col,value\n")
            for k in order:
                fh.write(f"{coo.row[k]},{coo.col[k]},{coo.data[k]:.17g}\n")


def flat_index(pos: tuple[int, ...], ch: int, state_shape: tuple[int, ...]) -> int:
    idx = 0
    for p, n in zip(pos, state_shape[:-1]):
        idx = idx * n + p
    return idx * state_shape[-1] + ch


def build(kern: NormalizedKernels, sparse: SparseSamples | None = None, channels: int | None = None) -> DiffusionSystem:
    """Assemble the propagation matrix from normalized kernels.

    Neighbors outside the field are simply absent from ``A``. With
    ``sparse`` given, every sampled state's row becomes the unit row
    ``e_q`` (degree 1, no anchor), so iterating keeps it fixed.
    """
    spatial = kern.spatial_shape
    C = channels or kern.channels
    if kern.channels not in (1, C):
        raise ShapeError(f"kernel channels {kern.channels} incompatible with {C}")
    state_shape = (*spatial, C)
    n = int(np.prod(state_shape))
    offsets = kern.offsets

    rows, cols, vals = [], [], []
    degree = np.zeros(n)
    center = np.zeros(n)
    for pos in product(*(range(s) for s in spatial)):
        for ch in range(C):
            kc = ch if kern.channels > 1 else 0
            q = flat_index(pos, ch, state_shape)
            lam = 0.0
            for o, off in enumerate(offsets):
                wgt = float(kern.weights[(o, *pos, kc)])
                lam += wgt
                nb = tuple(p - d for p, d in zip(pos, off))
                if all(0 <= x < s for x, s in zip(nb, spatial)) and wgt != 0.0:
                    rows.append(q)
                    cols.append(flat_index(nb, ch, state_shape))
                    vals.append(wgt)
            degree[q] = lam
            center[q] = float(kern.center[(*pos, kc)])

    anchor = None
    if sparse is not None:
        if kern.ndim != 2 or sparse.shape != tuple(spatial):
            raise ShapeError(f"samples cover {sparse.shape}, kernels {spatial}")
        anchor = np.zeros(n, dtype=bool)
        for r, c in zip(sparse.rows, sparse.cols):
            for ch in range(C):
                anchor[flat_index((int(r), int(c)), ch, state_shape)] = True
        keep = [k for k, q in enumerate(rows) if not anchor[q]]
        rows = [rows[k] for k in keep] + list(np.flatnonzero(anchor))
        cols = [cols[k] for k in keep] + list(np.flatnonzero(anchor))
        vals = [vals[k] for k in keep] + [1.0] * int(anchor.sum())
        degree[anchor] = 1.0
        center[anchor] = 0.0

    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    A.sort_indices()
    return DiffusionSystem(A, degree, center, kern.mode.center_reads_current, state_shape, anchor)


def step_dense(sys: DiffusionSystem, h_t: np.ndarray, h_0: np.ndarray) -> np.ndarray:
    """``A h_t + (I - D) h_0`` (center on ``h_t`` for moving-center kernels)."""
    h_t = np.asarray(h_t, dtype=np.float64).ravel()
    h_0 = np.asarray(h_0, dtype=np.float64).ravel()
    if h_t.shape[0] != sys.n or h_0.shape[0] != sys.n:
        raise ShapeError(f"state vectors must have length {sys.n}, got {h_t.shape[0]} and {h_0.shape[0]}")
    anchor_src = h_t if sys.center_reads_current else h_0
    return sys.A @ h_t + sys.center * anchor_src


def spectral_radius(sys: DiffusionSystem, iterations: int = 400, seed: int = 0) -> float:
    """Power-iteration estimate of the largest eigenvalue magnitude of ``A``.

    The estimate is the geometric-mean max-norm growth over the second half
    of the run. Each factor is at most ``||A||_inf``, so the result never
    exceeds the Gershgorin row bound, and it converges to the spectral
    radius even when the dominant eigenvalues are complex or of opposite sign.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if sys.n == 0 or sys.A.nnz == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(sys.n)
    x /= np.abs(x).max()
    burn = iterations - max(1, iterations // 2)
    log_growth = 0.0
    for k in range(iterations):
        y = sys.A @ x
        g = np.abs(y).max()
        if g == 0.0:
            return 0.0
        if k >= burn:
            log_growth += np.log(g)
        x = y / g
    return float(np.exp(log_growth / (iterations - burn)))


def operator_norm(sys: DiffusionSystem, iterations: int = 400, seed: int = 0) -> float:
    """Power iteration on ``A^T A``; returns the estimate of ``||A||_2``."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if sys.n == 0 or sys.A.nnz == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(sys.n)
    x /= np.linalg.norm(x)
    AT = sys.A.T.tocsr()
    lam = 0.0
    for _ in range(iterations):
        y = AT @ (sys.A @ x)
        lam = float(x @ y)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        x = y / ny
    return float(np.sqrt(max(lam, 0.0)))
