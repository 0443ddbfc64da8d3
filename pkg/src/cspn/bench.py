"""Wall-clock scaling of the parallel stencil step against the serial scan.

Each configuration is run once to warm up, then ``repeats`` times; the
median is reported. The checksum (sum of the output) must not depend on the
worker count.
"""
from __future__ import annotations

import csv
import re
import statistics
import time
from dataclasses import asdict, dataclass

import numpy as np

from .affinity import AffinityField, Mode, normalize
from .propagate import iterate
from .spn import refine, scan_weights_from_affinity

OPERATORS = ("cspn_step", "cspn3d_step", "spn_sweep")
CSV_COLUMNS = ("operator", "height", "width", "k", "iters", "workers", "wall_time_s", "repeats", "checksum")


@dataclass
class BenchRecord:
    operator: str
    height: int
    width: int
    kernel_size: int
    iterations: int
    workers: int
    wall_time: float
    repeats: int
    checksum: float

    def row(self) -> list:
        return [self.operator, self.height, self.width, self.kernel_size, self.iterations,
                self.workers, f"{self.wall_time:.9f}", self.repeats, f"{self.checksum:.17g}"]


def parse_size(text: str) -> tuple[int, int]:
    """``"1024x768"`` -> ``(height, width) = (768, 1024)``."""
    m = re.fullmatch(r"\s*(\d+)\s*[xX]\s*(\d+)\s*", text)
    if not m or int(m.group(1)) == 0 or int(m.group(2)) == 0:
        raise ValueError(f"size must look like WIDTHxHEIGHT, got {text!r}")
    return int(m.group(2)), int(m.group(1))


def _workload(operator: str, height: int, width: int, k: int, iters: int, depth: int, seed: int):
    rng = np.random.default_rng(seed)
    if operator == "cspn_step":
        h0 = rng.uniform(0.5, 10.0, (height, width, 1))
        kern = normalize(AffinityField(rng.standard_normal((k * k - 1, height, width, 1)), k), Mode.ABS_SUM_ANCHOR)
        return lambda workers: iterate(h0, kern, iters, workers)
    if operator == "cspn3d_step":
        v0 = rng.uniform(0.5, 10.0, (depth, height, width, 1))
        kern = normalize(AffinityField(rng.standard_normal((k**3 - 1, depth, height, width, 1)), k),
                         Mode.ABS_SUM_ANCHOR)
        return lambda workers: iterate(v0, kern, iters, workers)
    if operator == "spn_sweep":
        h0 = rng.uniform(0.5, 10.0, (height, width, 1))
        weights = scan_weights_from_affinity(AffinityField(rng.standard_normal((8, height, width, 1)), 3))
        return lambda workers: refine(h0, weights, workers).values
    raise ValueError(f"unknown operator {operator!r}; choose from {OPERATORS}")


def time_config(operator: str, height: int, width: int, k: int, iters: int, workers: int,
                repeats: int = 5, depth: int = 4, seed: int = 0) -> BenchRecord:
    if repeats < 3:
        raise ValueError("repeats must be >= 3")
    if operator == "spn_sweep":
        k, iters = 3, 1
    fn = _workload(operator, height, width, k, iters, depth, seed)
    out = fn(workers)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(workers)
        times.append(time.perf_counter() - t0)
    return BenchRecord(operator, height, width, k, iters, workers, statistics.median(times), repeats,
                       float(np.sum(out)))


def run_bench(sizes, kernels=(3,), iters=(4,), workers=(1,), operators=OPERATORS,
              repeats: int = 5, depth: int = 4, seed: int = 0, progress=None) -> list[BenchRecord]:
    records = []
    for op in operators:
        op_kernels = (3,) if op == "spn_sweep" else kernels
        op_iters = (1,) if op == "spn_sweep" else iters
        for (h, w) in sizes:
            for k in op_kernels:
                for n in op_iters:
                    for nw in workers:
                        rec = time_config(op, h, w, k, n, nw, repeats, depth, seed)
                        records.append(rec)
                        if progress is not None:
                            progress(rec)
    return records


def write_bench_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow(r.row())


def read_bench_csv(path) -> list[BenchRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(BenchRecord(row["operator"], int(row["height"]), int(row["width"]), int(row["k"]),
                                   int(row["iters"]), int(row["workers"]), float(row["wall_time_s"]),
                                   int(row["repeats"]), float(row["checksum"])))
    return out


def _key(r: BenchRecord) -> tuple:
    return (r.operator, r.height, r.width, r.kernel_size, r.iterations)


def checksum_groups(records) -> dict:
    """Checksums seen per configuration (ignoring the worker count)."""
    groups: dict = {}
    for r in records:
        groups.setdefault(_key(r), set()).add(r.checksum)
    return groups


def speedup(records, operator: str, height: int, width: int, workers: int, base: int = 1) -> float:
    """``t(base workers) / t(workers)`` for one operator and size."""
    sel = {r.workers: r.wall_time for r in records
           if r.operator == operator and r.height == height and r.width == width}
    return sel[base] / sel[workers]


def linear_fit_r2(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_tot = float(((y - y.mean()) ** 2).sum())
    return 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0


def as_dicts(records) -> list[dict]:
    return [asdict(r) for r in records]
