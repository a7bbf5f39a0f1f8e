"""Lattice representations of fractal sets."""

import logging
import struct
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .const import (
    GSET_MAGIC,
    MEMORY_CAP,
    SUPPORTED_DIMS,
    TRANSFORM_DILATE,
    TRANSFORM_THICKEN,
    TRANSFORM_TRANSLATE,
)
from .exceptions import FupLabFormatError, FupLabRangeError
from .models import CantorSpec, GridSet, SetTransform

_LOGGER = logging.getLogger("fuplab")

_HEADER = struct.Struct("<5sBQ")


def physical_grid(mask: np.ndarray) -> GridSet:
    """Embed a cubical bitmap into [-1, 1]^d (cell width 2/N)."""

    mask = np.ascontiguousarray(mask, dtype=bool)
    side = mask.shape[0]
    return GridSet(mask.ndim, side, mask, (-1.0,) * mask.ndim, 2.0 / side)


def frequency_grid(mask: np.ndarray) -> GridSet:
    """Embed a cubical bitmap into [-N/2, N/2]^d (cell width 1)."""

    mask = np.ascontiguousarray(mask, dtype=bool)
    side = mask.shape[0]
    return GridSet(mask.ndim, side, mask, (-side / 2.0,) * mask.ndim, 1.0)


def _check_cap(dim: int, side: int, memory_cap: int) -> None:
    if dim not in SUPPORTED_DIMS:
        raise FupLabRangeError(f"dimension {dim} is not supported")
    if side ** dim > memory_cap:
        raise FupLabRangeError(
            f"grid of {side}^{dim} cells exceeds the memory cap of {memory_cap} cells"
        )


def _digit_mask(side: int, base: int, digits: Sequence[int], depth: int) -> np.ndarray:
    remaining = np.arange(side)
    keep = np.ones(side, dtype=bool)
    for _ in range(depth):
        keep &= np.isin(remaining % base, digits)
        remaining //= base
    return keep


def gen_cantor_product(spec: CantorSpec, memory_cap: int = MEMORY_CAP, frequency: bool = False) -> GridSet:
    """Product of base-L digit Cantor sets, one digit set per axis."""

    if spec.base < 3:
        raise FupLabRangeError(f"Cantor base must be at least 3, got {spec.base}")
    if spec.depth < 1:
        raise FupLabRangeError(f"Cantor depth must be positive, got {spec.depth}")
    if len(spec.kept_digits) != spec.dim:
        raise FupLabRangeError("one digit set per axis is required")
    for digits in spec.kept_digits:
        if not digits or any(d < 0 or d >= spec.base for d in digits):
            raise FupLabRangeError(f"invalid kept digits {digits} for base {spec.base}")

    side = spec.side
    _check_cap(spec.dim, side, memory_cap)

    axes = [_digit_mask(side, spec.base, digits, spec.depth) for digits in spec.kept_digits]
    mask = np.logical_and.reduce(np.meshgrid(*axes, indexing="ij"))
    _LOGGER.debug("Generated Cantor product with %s cells on a %s^%s grid", np.count_nonzero(mask), side, spec.dim)
    return frequency_grid(mask) if frequency else physical_grid(mask)


def gen_sierpinski(depth: int, memory_cap: int = MEMORY_CAP) -> GridSet:
    """Sierpinski carpet iterate on the 3^depth grid."""

    if depth < 1:
        raise FupLabRangeError(f"carpet depth must be positive, got {depth}")
    side = 3 ** depth
    _check_cap(2, side, memory_cap)

    rows = np.arange(side)[:, None]
    cols = np.arange(side)[None, :]
    mask = np.ones((side, side), dtype=bool)
    for _ in range(depth):
        mask &= ~((rows % 3 == 1) & (cols % 3 == 1))
        rows = rows // 3
        cols = cols // 3
    return physical_grid(mask)


def gen_box_porous(dim: int, base: int, depth: int, seed: int, removed: int = 1,
                   memory_cap: int = MEMORY_CAP) -> GridSet:
    """Random multiscale set: every occupied cube loses `removed` random subcubes per level."""

    children = base ** dim
    if not 1 <= removed < children:
        raise FupLabRangeError(f"cannot remove {removed} of {children} subcubes")
    _check_cap(dim, base ** depth, memory_cap)

    rng = np.random.default_rng(seed)
    mask = np.ones((1,) * dim, dtype=bool)
    block = np.ones((base,) * dim, dtype=bool)
    for _ in range(depth):
        parents = np.argwhere(mask)
        mask = np.kron(mask, block)
        drop = np.argsort(rng.random((len(parents), children)), axis=1)[:, :removed]
        for parent, picks in zip(parents, drop):
            for pick in picks:
                child = np.unravel_index(pick, (base,) * dim)
                mask[tuple(parent * base + np.asarray(child))] = False
    return physical_grid(mask)


def set_transform(s: GridSet, op: SetTransform, memory_cap: int = MEMORY_CAP) -> GridSet:
    """Dilate, translate or thicken a grid set."""

    if op.kind == TRANSFORM_DILATE:
        return _dilate(s, Fraction(op.factor), op.resample, memory_cap)
    if op.kind == TRANSFORM_TRANSLATE:
        return _translate(s, op.vector)
    if op.kind == TRANSFORM_THICKEN:
        return _thicken(s, op.radius)
    raise FupLabRangeError(f"unknown transform {op.kind!r}")


def _dilate(s: GridSet, factor: Fraction, resample: int, memory_cap: int) -> GridSet:
    if factor <= 0:
        raise FupLabRangeError(f"dilation factor must be positive, got {factor}")
    if resample < 1:
        raise FupLabRangeError(f"resampling factor must be a positive integer, got {resample}")

    mask, side, scale = s.mask, s.side, s.scale
    if resample > 1:
        _check_cap(s.dim, side * resample, memory_cap)
        mask = np.kron(mask, np.ones((resample,) * s.dim, dtype=bool))
        side *= resample
        scale /= resample
        _LOGGER.debug("Resampled %s^%s grid by %s per axis before dilation", s.side, s.dim, resample)

    ratio = float(factor)
    offset = tuple(ratio * o for o in s.offset)
    return GridSet(s.dim, side, mask, offset, scale * ratio)


def _translate(s: GridSet, vector: Sequence[int]) -> GridSet:
    if len(vector) != s.dim:
        raise FupLabRangeError(f"translation vector needs {s.dim} components")

    out = np.zeros_like(s.mask)
    src, dst = [], []
    for shift in vector:
        shift = int(shift)
        if abs(shift) >= s.side:
            src, dst = None, None
            break
        src.append(slice(max(0, -shift), s.side - max(0, shift)))
        dst.append(slice(max(0, shift), s.side - max(0, -shift)))
    if src is not None:
        out[tuple(dst)] = s.mask[tuple(src)]

    if s.count and not out.any():
        _LOGGER.warning("Translation by %s moved every cell out of the grid", tuple(vector))
    return s._replace(mask=out)


def _thicken(s: GridSet, radius: int) -> GridSet:
    if radius < 0:
        raise FupLabRangeError(f"thickening radius must be nonnegative, got {radius}")
    if radius == 0 or not s.count:
        return s._replace(mask=s.mask.copy())
    grown = ndimage.maximum_filter(s.mask, size=2 * radius + 1, mode="constant", cval=False)
    return s._replace(mask=grown.astype(bool))


def cell_centers(s: GridSet, cells: Optional[np.ndarray] = None) -> np.ndarray:
    """Embedded coordinates of cell centres (kept cells by default)."""

    if cells is None:
        cells = s.cells
    return s.lower + s.scale * (np.asarray(cells, dtype=float) + 0.5)


def cell_index(s: GridSet, points: np.ndarray) -> np.ndarray:
    """Index of the cell holding each point; shared faces go to the lower-index cell."""

    u = (np.atleast_2d(points) - s.lower) / s.scale
    return np.where(u == 0, 0, np.ceil(u).astype(np.int64) - 1)


def contains(s: GridSet, points: np.ndarray) -> np.ndarray:
    """Membership of embedded points in the union of kept cells."""

    idx = cell_index(s, points)
    inside = np.all((idx >= 0) & (idx < s.side), axis=1)
    out = np.zeros(len(idx), dtype=bool)
    out[inside] = s.mask[tuple(idx[inside].T)]
    return out


def lebesgue_measure(s: GridSet) -> Fraction:
    """Exact Lebesgue measure of the union of kept cells."""

    width = Fraction(s.scale).limit_denominator(1 << 40)
    return Fraction(s.count) * width ** s.dim


def gridsets_equal(a: GridSet, b: GridSet) -> bool:
    return (
        a.dim == b.dim
        and a.side == b.side
        and tuple(a.offset) == tuple(b.offset)
        and a.scale == b.scale
        and np.array_equal(a.mask, b.mask)
    )


def gridset_to_bytes(s: GridSet) -> bytes:
    """Encode in the .gset format."""

    header = _HEADER.pack(GSET_MAGIC, s.dim, s.side)
    embedding = struct.pack(f"<{s.dim}d", *s.offset) + struct.pack("<d", s.scale)
    bitmap = np.packbits(np.ascontiguousarray(s.mask, dtype=bool).ravel(order="C"))
    return header + embedding + bitmap.tobytes()


def gridset_from_bytes(data: bytes) -> GridSet:
    """Decode the .gset format."""

    if len(data) < _HEADER.size:
        raise FupLabFormatError("truncated .gset header")
    magic, dim, side = _HEADER.unpack_from(data, 0)
    if magic != GSET_MAGIC:
        raise FupLabFormatError(f"bad .gset magic {magic!r}")
    if dim not in SUPPORTED_DIMS or side < 1:
        raise FupLabFormatError(f"bad .gset shape dim={dim} side={side}")

    pos = _HEADER.size
    cells = side ** dim
    expected = pos + 8 * (dim + 1) + (cells + 7) // 8
    if len(data) != expected:
        raise FupLabFormatError(f".gset payload has {len(data)} bytes, expected {expected}")

    offset = struct.unpack_from(f"<{dim}d", data, pos)
    (scale,) = struct.unpack_from("<d", data, pos + 8 * dim)
    if not scale > 0:
        raise FupLabFormatError(f"embedding scale must be positive, got {scale}")
    bits = np.frombuffer(data, dtype=np.uint8, offset=pos + 8 * (dim + 1))
    mask = np.unpackbits(bits, count=cells).astype(bool).reshape((side,) * dim)
    return GridSet(dim, side, mask, tuple(float(o) for o in offset), float(scale))


def save_gridset(s: GridSet, path: str) -> None:
    with open(path, "wb") as fp:
        fp.write(gridset_to_bytes(s))


def load_gridset(path: str) -> GridSet:
    with open(path, "rb") as fp:
        return gridset_from_bytes(fp.read())
