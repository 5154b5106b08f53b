"""Grid fields, rectangles and exact boxcar sums.

A field lives on the lattice ``[n_1] x ... x [n_d]`` (0-based here). Rectangles
are stored as ``(anchor, shape)`` where ``shape`` counts cells, so a rectangle
covers ``anchor_j <= i_j < anchor_j + shape_j`` and has ``prod(shape)`` cells.

Boxcar sums are taken from a d-dimensional prefix-sum table with a zero
border.  Window sums over a whole shape are formed by differencing the table
one axis at a time; single-rectangle sums use the same differencing on the
``2^d`` corner block, so both paths produce bit-identical results.
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.random import Generator, Philox, SeedSequence
from scipy.special import ndtri

GF_MAGIC = b"GFLD0001"
MAX_CELLS = 2**34


class FieldError(ValueError):
    """Invalid field, rectangle or grid-file content."""


def _as_dims(dims: Sequence[int]) -> tuple[int, ...]:
    dims = tuple(int(x) for x in dims)
    if len(dims) < 1:
        raise FieldError("a field needs at least one axis")
    if any(x < 1 for x in dims):
        raise FieldError(f"every grid side must be >= 1, got {dims}")
    if math.prod(dims) > MAX_CELLS:
        raise FieldError(f"grid {dims} has too many cells")
    return dims


@dataclass(frozen=True, eq=False)
class GridField:
    """Real measurements on a d-dimensional grid (read-only float64 array)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, order="C", copy=True)
        if arr.ndim == 0:
            raise FieldError("a field needs at least one axis")
        _as_dims(arr.shape)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def d(self) -> int:
        return self.data.ndim

    @property
    def flat(self) -> np.ndarray:
        """Row-major view of the values."""
        return self.data.reshape(-1)

    def side(self) -> int:
        """Common side length ``n``; raises unless the grid is ``[n]^d``."""
        if len(set(self.dims)) != 1:
            raise FieldError(f"expected a square grid [n]^d, got dims {self.dims}")
        return self.dims[0]


@dataclass(frozen=True)
class Rect:
    anchor: tuple[int, ...]
    shape: tuple[int, ...]

    def __post_init__(self):
        anchor = tuple(int(x) for x in self.anchor)
        shape = tuple(int(x) for x in self.shape)
        if len(anchor) != len(shape) or not anchor:
            raise FieldError("anchor and shape must have the same positive length")
        if any(h < 1 for h in shape):
            raise FieldError(f"rectangle shape must be positive, got {shape}")
        if any(t < 0 for t in anchor):
            raise FieldError(f"rectangle anchor must be nonnegative, got {anchor}")
        object.__setattr__(self, "anchor", anchor)
        object.__setattr__(self, "shape", shape)

    @property
    def d(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    def fits(self, dims: Sequence[int]) -> bool:
        return len(dims) == self.d and all(
            t + h <= n for t, h, n in zip(self.anchor, self.shape, dims)
        )

    def slices(self) -> tuple[slice, ...]:
        return tuple(slice(t, t + h) for t, h in zip(self.anchor, self.shape))

    def to_dict(self) -> dict:
        return {"anchor": list(self.anchor), "shape": list(self.shape)}


@dataclass(frozen=True)
class SignalSpec:
    """Signal ``mu / sqrt(|R*|)`` on every cell of ``rect`` (so ``x[R*] = mu``)."""

    rect: Rect
    mu: float

    def __post_init__(self):
        if not self.mu >= 0:
            raise FieldError(f"signal size must be nonnegative, got {self.mu}")


def _check_fits(rect: Rect, dims: Sequence[int]) -> None:
    if not rect.fits(dims):
        raise FieldError(f"rectangle {rect.anchor}+{rect.shape} does not fit grid {tuple(dims)}")


# -- simulation ------------------------------------------------------------


def white_noise(dims: Sequence[int], seed: int) -> GridField:
    """Field of iid N(0, 1) values, bit-reproducible for a given ``(dims, seed)``.

    Uniforms come from a Philox-4x64 counter generator keyed by
    ``SeedSequence(seed)``; each uniform is ``(k + 0.5) / 2^53`` for a 53-bit
    integer ``k`` and is mapped to a normal by the inverse normal CDF.
    """
    dims = _as_dims(dims)
    seed = int(seed) % 2**64
    gen = Generator(Philox(SeedSequence(seed)))
    k = gen.integers(0, 2**53, size=math.prod(dims), dtype=np.uint64)
    u = (k.astype(np.float64) + 0.5) * 2.0**-53
    return GridField(ndtri(u).reshape(dims))


def inject_signal(field: GridField, spec: SignalSpec) -> GridField:
    _check_fits(spec.rect, field.dims)
    if spec.mu == 0:
        return field
    out = field.data.copy()
    out[spec.rect.slices()] += spec.mu / math.sqrt(spec.rect.size)
    return GridField(out)


def signal_field(dims: Sequence[int], spec: SignalSpec) -> GridField:
    """Noise-free field carrying only the rectangle signal."""
    return inject_signal(GridField(np.zeros(_as_dims(dims))), spec)


# -- prefix sums -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PrefixSumTable:
    """Inclusive prefix sums with a leading zero border along every axis.

    ``cum[i_1, ..., i_d]`` is the sum of the field over ``[0, i_1) x ... x [0, i_d)``.
    """

    dims: tuple[int, ...]
    cum: np.ndarray

    @property
    def total(self) -> float:
        return float(self.cum[tuple(self.dims)])


def prefix_sums(field: GridField) -> PrefixSumTable:
    cum = np.zeros(tuple(n + 1 for n in field.dims))
    inner = field.data
    for axis in range(field.d):
        inner = np.cumsum(inner, axis=axis)
    cum[(slice(1, None),) * field.d] = inner
    cum.setflags(write=False)
    return PrefixSumTable(tuple(field.dims), cum)


def _difference(arr: np.ndarray, axis: int, h: int) -> np.ndarray:
    """``arr[.., i + h, ..] - arr[.., i, ..]`` along one axis."""
    hi = [slice(None)] * arr.ndim
    lo = [slice(None)] * arr.ndim
    hi[axis] = slice(h, None)
    lo[axis] = slice(None, arr.shape[axis] - h)
    return arr[tuple(hi)] - arr[tuple(lo)]


def window_sums(cum: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    """Sums over every window of ``shape`` from a zero-bordered prefix table.

    The result has ``cum.shape[j] - shape[j]`` entries per axis, indexed by anchor.
    """
    out = cum
    for axis, h in enumerate(shape):
        out = _difference(out, axis, h)
    return out


def rect_sum(table: PrefixSumTable, rect: Rect) -> float:
    _check_fits(rect, table.dims)
    corners = np.ix_(*[(t, t + h) for t, h in zip(rect.anchor, rect.shape)])
    block = table.cum[corners]
    return float(window_sums(block, (1,) * rect.d).reshape(()))


def zscore(table: PrefixSumTable, rect: Rect) -> float:
    return rect_sum(table, rect) / math.sqrt(rect.size)


def zscore_field(table: PrefixSumTable, shape: Sequence[int]) -> GridField:
    """Z-score of every rectangle of the given shape, indexed by anchor."""
    shape = tuple(int(h) for h in shape)
    if len(shape) != len(table.dims) or any(h < 1 for h in shape):
        raise FieldError(f"shape {shape} is not a valid shape for grid {table.dims}")
    if any(h > n for h, n in zip(shape, table.dims)):
        raise FieldError(f"shape {shape} is larger than grid {table.dims}")
    return GridField(window_sums(table.cum, shape) / math.sqrt(math.prod(shape)))


# -- file formats ----------------------------------------------------------


def write_gf01(field: GridField, path: str | Path) -> None:
    dims = field.dims
    with open(path, "wb") as fh:
        fh.write(GF_MAGIC)
        fh.write(struct.pack(f"<I{len(dims)}I", len(dims), *dims))
        fh.write(field.flat.astype("<f8").tobytes())


def read_gf01(path: str | Path) -> GridField:
    raw = Path(path).read_bytes()
    if raw[:8] != GF_MAGIC:
        raise FieldError(f"{path}: not a GF01 grid file (bad magic)")
    try:
        (d,) = struct.unpack_from("<I", raw, 8)
        if d < 1:
            raise FieldError(f"{path}: dimension must be >= 1")
        dims = struct.unpack_from(f"<{d}I", raw, 12)
    except struct.error as exc:
        raise FieldError(f"{path}: truncated header") from exc
    dims = _as_dims(dims)
    offset = 12 + 4 * d
    count = math.prod(dims)
    if len(raw) != offset + 8 * count:
        raise FieldError(f"{path}: expected {count} float64 values after the header")
    data = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
    return GridField(data.reshape(dims))


def write_csv(field: GridField, path: str | Path) -> None:
    if field.d != 2:
        raise FieldError("CSV grid files are only defined for d = 2")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in field.data:
            writer.writerow([repr(float(x)) for x in row])


def read_csv(path: str | Path) -> GridField:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or len({len(r) for r in rows}) != 1:
        raise FieldError(f"{path}: CSV grid must be a nonempty rectangular table")
    try:
        data = np.array([[float(x) for x in r] for r in rows])
    except ValueError as exc:
        raise FieldError(f"{path}: {exc}") from exc
    return GridField(data)


def load_field(path: str | Path) -> GridField:
    """Read a GF01 file, or a CSV file when the name ends in ``.csv``."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_csv(path)
    return read_gf01(path)


def save_field(field: GridField, path: str | Path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        write_csv(field, path)
    else:
        write_gf01(field, path)
