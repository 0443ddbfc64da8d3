"""File formats, sparse samples and synthetic scenes.

PFM holds float maps (1 or 3 channels, rows bottom-up, the sign of the
scale line giving byte order). PGM (binary P5) carries guide images. Sparse
samples travel as ``row,col,value`` CSV.
"""
from __future__ import annotations

import csv
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import BinaryMask, FeatureGrid, ShapeError, as_grid


class ParseError(ValueError):
    """Malformed file contents; ``offset`` is the byte offset where parsing failed."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class SampleValidationError(ValueError):
    pass


# --------------------------------------------------------------------------- #
# header tokenizer shared by PFM and PGM

_WS = b" \t\r\n"


def _next_token(buf: bytes, pos: int, allow_comments: bool = False) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        if buf[pos] in _WS:
            pos += 1
        elif allow_comments and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] != b"\n":
                pos += 1
        else:
            break
    start = pos
    while pos < n and buf[pos] not in _WS:
        pos += 1
    if start == pos:
        raise ParseError("unexpected end of header", start)
    return buf[start:pos], pos


def _int_token(buf: bytes, pos: int, what: str, allow_comments: bool = False) -> tuple[int, int]:
    tok, end = _next_token(buf, pos, allow_comments)
    if not re.fullmatch(rb"\d+", tok):
        raise ParseError(f"bad {what} {tok!r}", end - len(tok))
    return int(tok), end


def _payload_start(buf: bytes, pos: int) -> int:
    if pos >= len(buf) or buf[pos] not in _WS:
        raise ParseError("missing whitespace before payload", pos)
    return pos + 1


# --------------------------------------------------------------------------- #
# PFM


def parse_pfm(buf: bytes) -> FeatureGrid:
    magic, pos = _next_token(buf, 0)
    if magic == b"Pf":
        channels = 1
    elif magic == b"PF":
        channels = 3
    else:
        raise ParseError(f"bad PFM magic {magic!r}", 0)
    width, pos = _int_token(buf, pos, "width")
    height, pos = _int_token(buf, pos, "height")
    if width == 0 or height == 0:
        raise ParseError("zero image dimension", pos)
    tok, pos = _next_token(buf, pos)
    try:
        scale = float(tok)
    except ValueError:
        raise ParseError(f"bad scale {tok!r}", pos - len(tok)) from None
    if scale == 0 or not np.isfinite(scale):
        raise ParseError(f"invalid scale {scale}", pos - len(tok))
    start = _payload_start(buf, pos)
    count = width * height * channels
    need = count * 4
    if len(buf) - start < need:
        raise ParseError(f"truncated payload: need {need} bytes, have {len(buf) - start}", len(buf))
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=start)
    if not np.all(np.isfinite(data)):
        bad = int(np.flatnonzero(~np.isfinite(data))[0])
        raise ParseError("non-finite value in payload", start + 4 * bad)
    img = data.reshape(height, width, channels)[::-1].astype(np.float64)
    return FeatureGrid(img)


def read_pfm(path) -> FeatureGrid:
    return parse_pfm(Path(path).read_bytes())


def encode_pfm(grid) -> bytes:
    grid = as_grid(grid)
    if grid.channels not in (1, 3):
        raise ShapeError(f"PFM stores 1 or 3 channels, got {grid.channels}")
    magic = "Pf" if grid.channels == 1 else "PF"
    header = f"{magic}\n{grid.width} {grid.height}\n-1.0\n".encode("ascii")
    payload = np.ascontiguousarray(grid.values[::-1], dtype="<f4").tobytes()
    return header + payload


def write_pfm(grid, path) -> None:
    Path(path).write_bytes(encode_pfm(grid))


# --------------------------------------------------------------------------- #
# PGM


def parse_pgm(buf: bytes) -> FeatureGrid:
    magic, pos = _next_token(buf, 0)
    if magic != b"P5":
        raise ParseError(f"bad PGM magic {magic!r}", 0)
    width, pos = _int_token(buf, pos, "width", True)
    height, pos = _int_token(buf, pos, "height", True)
    maxval, pos = _int_token(buf, pos, "maxval", True)
    if width == 0 or height == 0:
        raise ParseError("zero image dimension", pos)
    if not 0 < maxval <= 65535:
        raise ParseError(f"maxval must be in 1..65535, got {maxval}", pos)
    start = _payload_start(buf, pos)
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    count = width * height
    need = count * np.dtype(dtype).itemsize
    if len(buf) - start < need:
        raise ParseError(f"truncated payload: need {need} bytes, have {len(buf) - start}", len(buf))
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=start).reshape(height, width)
    if data.max() > maxval:
        raise ParseError("sample exceeds maxval", start)
    return FeatureGrid(data.astype(np.float64) / maxval)


def read_pgm(path) -> FeatureGrid:
    return parse_pgm(Path(path).read_bytes())


def write_pgm(grid, path, maxval: int = 255) -> None:
    grid = as_grid(grid)
    if not 0 < maxval <= 65535:
        raise ValueError(f"maxval must be in 1..65535, got {maxval}")
    if grid.channels != 1:
        raise ShapeError(f"PGM stores one channel, got {grid.channels}")
    q = np.rint(np.clip(grid.values[:, :, 0], 0.0, 1.0) * maxval)
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    header = f"P5\n{grid.width} {grid.height}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + q.astype(dtype).tobytes())


# --------------------------------------------------------------------------- #
# sparse samples


@dataclass(eq=False)
class SparseSamples:
    """Known values at scattered pixels. A zero value would mean "invalid", so values must be > 0."""

    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    shape: tuple[int, int]

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64).ravel()
        self.cols = np.asarray(self.cols, dtype=np.int64).ravel()
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        self.shape = (int(self.shape[0]), int(self.shape[1]))
        if not (len(self.rows) == len(self.cols) == len(self.values)):
            raise ShapeError("rows, cols and values must have equal length")
        problems = _validate(self.rows, self.cols, self.values, self.shape)
        if problems:
            raise SampleValidationError("; ".join(msg for _, msg in problems))

    def __len__(self) -> int:
        return len(self.values)

    @classmethod
    def empty(cls, shape) -> "SparseSamples":
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), shape)

    @classmethod
    def from_dense(cls, dense) -> "SparseSamples":
        """Every strictly positive pixel of a single-channel map becomes a sample."""
        d = as_grid(dense).values[:, :, 0]
        r, c = np.nonzero(d > 0)
        return cls(r, c, d[r, c], d.shape)

    def mask(self) -> BinaryMask:
        bits = np.zeros(self.shape, dtype=bool)
        bits[self.rows, self.cols] = True
        return BinaryMask(bits)

    def dense(self) -> np.ndarray:
        """``(H, W)`` map with sample values and zeros elsewhere."""
        d = np.zeros(self.shape)
        d[self.rows, self.cols] = self.values
        return d

    def entries(self) -> list[tuple[int, int, float]]:
        return [(int(r), int(c), float(v)) for r, c, v in zip(self.rows, self.cols, self.values)]


def _validate(rows, cols, values, shape, lines=None) -> list[tuple[int, str]]:
    problems = []
    seen: dict[tuple[int, int], int] = {}
    H, W = shape
    for k, (r, c, v) in enumerate(zip(rows, cols, values)):
        where = f"line {lines[k]}" if lines is not None else f"entry {k}"
        if not (0 <= r < H and 0 <= c < W):
            problems.append((k, f"{where}: coordinate ({r},{c}) outside {H}x{W}"))
        elif (int(r), int(c)) in seen:
            problems.append((k, f"{where}: duplicate coordinate ({r},{c})"))
        if not (np.isfinite(v) and v > 0):
            problems.append((k, f"{where}: value {v!r} must be finite and > 0"))
        seen.setdefault((int(r), int(c)), k)
    return problems


def read_samples_csv(path, shape) -> SparseSamples:
    rows, cols, values, lines = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["row", "col", "value"]:
            raise SampleValidationError(f"line 1: expected header 'row,col,value', got {header!r}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 3:
                raise SampleValidationError(f"line {lineno}: expected 3 fields, got {len(rec)}")
            try:
                rows.append(int(rec[0]))
                cols.append(int(rec[1]))
                values.append(float(rec[2]))
            except ValueError:
                raise SampleValidationError(f"line {lineno}: unparseable record {rec!r}") from None
            lines.append(lineno)
    problems = _validate(rows, cols, values, tuple(shape), lines)
    if problems:
        raise SampleValidationError("; ".join(msg for _, msg in problems))
    return SparseSamples(np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64),
                         np.array(values, dtype=np.float64), shape)


def write_samples_csv(samples: SparseSamples, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("row,col,value\n")
        for r, c, v in samples.entries():
            fh.write(f"{r},{c},{v:.17g}\n")


def sample_sparse(depth_gt, count: int, seed: int) -> SparseSamples:
    """Pick ``count`` distinct pixels uniformly among those with positive depth."""
    d = as_grid(depth_gt).values[:, :, 0]
    candidates = np.flatnonzero(d.ravel() > 0)
    if count > len(candidates):
        raise ValueError(f"asked for {count} samples but only {len(candidates)} pixels have positive depth")
    rng = np.random.default_rng(seed)
    picked = np.sort(rng.choice(candidates, size=count, replace=False))
    r, c = np.divmod(picked, d.shape[1])
    return SparseSamples(r, c, d.ravel()[picked], d.shape)


# --------------------------------------------------------------------------- #
# synthetic scenes


@dataclass(eq=False)
class SyntheticScene:
    guide: FeatureGrid
    depth_gt: FeatureGrid
    labels: np.ndarray = field(repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth_gt.height, self.depth_gt.width


def make_scene(height: int, width: int, regions: int, seed: int, channels: int = 1) -> SyntheticScene:
    """Voronoi partition with one depth and one guide color per cell.

    Depths are drawn in [0.5, 10] m and rounded to float32 so they survive a
    PFM round trip exactly; guide intensities are distinct multiples of 1/255.
    """
    if regions < 1:
        raise ValueError(f"regions must be >= 1, got {regions}")
    if regions > height * width:
        raise ValueError("more regions than pixels")
    rng = np.random.default_rng(seed)
    sites = rng.choice(height * width, size=regions, replace=False)
    sr, sc = np.divmod(sites, width)
    ii, jj = np.mgrid[0:height, 0:width]
    d2 = (ii[..., None] - sr) ** 2 + (jj[..., None] - sc) ** 2
    labels = np.argmin(d2, axis=-1)

    depths = np.zeros(0)
    while len(np.unique(depths)) != regions:
        depths = rng.uniform(0.5, 10.0, size=regions).astype(np.float32).astype(np.float64)

    levels = np.round(np.linspace(25, 230, regions)) if regions > 1 else np.array([128.0])
    if channels == 1:
        colors = rng.permutation(levels)[:, None] / 255.0
    elif channels == 3:
        colors = np.stack([rng.permutation(levels) for _ in range(3)], axis=1) / 255.0
    else:
        raise ValueError(f"guide must have 1 or 3 channels, got {channels}")

    guide = FeatureGrid(colors[labels])
    depth = FeatureGrid(depths[labels][..., None])
    return SyntheticScene(guide, depth, labels)


# --------------------------------------------------------------------------- #
# plane stacks (affinity fields, cost volumes)

STACK_INDEX = "planes.txt"


def write_stack(planes: np.ndarray, directory, labels=None, kernel_size: int | None = None) -> None:
    """Write ``planes[p]`` (each ``(H, W)``) as PFM files plus an index file naming each plane."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    planes = np.asarray(planes, dtype=np.float64)
    labels = labels if labels is not None else [str(p) for p in range(len(planes))]
    lines = [f"# planes={len(planes)}"]
    if kernel_size is not None:
        lines.append(f"# kernel_size={kernel_size}")
    for p, (plane, label) in enumerate(zip(planes, labels)):
        name = f"plane_{p:04d}.pfm"
        write_pfm(FeatureGrid(plane), directory / name)
        lines.append(f"{name} {label}")
    (directory / STACK_INDEX).write_text("\n".join(lines) + "\n")


def read_stack(directory) -> tuple[np.ndarray, list[str], dict[str, str]]:
    directory = Path(directory)
    index = directory / STACK_INDEX
    if not index.exists():
        raise FileNotFoundError(f"no {STACK_INDEX} in {directory}")
    planes, labels, meta = [], [], {}
    for line in index.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            meta[key.strip()] = val.strip()
            continue
        name, _, label = line.partition(" ")
        planes.append(read_pfm(directory / name).values[:, :, 0])
        labels.append(label)
    if not planes:
        raise ParseError(f"empty plane stack in {directory}")
    return np.stack(planes), labels, meta


def write_affinity(field_, directory) -> None:
    """One plane per window offset, labelled ``a,b``; offsets in row-major order without the center."""
    if field_.ndim != 2 or field_.channels != 1:
        raise ShapeError("only single-channel 2D affinity fields are serialized")
    labels = [",".join(str(v) for v in o) for o in field_.offsets]
    write_stack(field_.raw[..., 0], directory, labels, kernel_size=field_.kernel_size)


def read_affinity(directory):
    from .affinity import AffinityField, kernel_offsets

    planes, labels, meta = read_stack(directory)
    k = int(meta.get("kernel_size", round((len(planes) + 1) ** 0.5)))
    expect = [",".join(str(v) for v in o) for o in kernel_offsets(k, 2)]
    if labels != expect:
        raise ParseError(f"offset labels {labels} do not match k={k} order {expect}")
    return AffinityField(planes[..., None], k)


def ensure_parent(path) -> None:
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
