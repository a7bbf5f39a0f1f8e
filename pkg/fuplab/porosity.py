"""Ball, line and box porosity of grid sets."""

import logging
import math
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage, spatial

from .const import (
    EXHAUSTIVE_SIDE_LIMIT,
    LATTICE_NOTE,
    MEMORY_CAP,
    MIN_DIRECTIONS,
    MIN_RESOLVED_CELLS,
    NU_CAP,
    NU_DENOMINATOR,
    NU_STEPS,
    POROSITY_BALL,
    POROSITY_LINE,
    POWER_SEED,
    SAMPLED_POSITIONS,
    SUPERSAMPLING,
)
from .exceptions import FupLabRangeError
from .gridset import cell_centers, contains
from .models import GridSet, PorosityReport, Witness
from .sampling import line_directions, scale_ladder

_LOGGER = logging.getLogger("fuplab")

_CHUNK = 1 << 21


def _nu(j: int) -> float:
    return j / NU_DENOMINATOR


def _check_range(s: GridSet, a0: float, a1: float) -> None:
    if not a0 < a1:
        raise FupLabRangeError(f"degenerate scale range ({a0}, {a1})")
    if a0 < s.scale * (1 - 1e-12):
        raise FupLabRangeError(f"lower scale {a0} is below the cell width {s.scale}")
    if a1 > s.extent * (1 + 1e-12):
        raise FupLabRangeError(f"upper scale {a1} exceeds the set diameter {s.extent}")


def _ladder(s: GridSet, a0: float, a1: float) -> List[float]:
    # a union of closed cells is solid below a few cell widths
    start = max(a0, MIN_RESOLVED_CELLS * s.scale)
    if start >= a1:
        return [a1]
    return scale_ladder(start, a1)


def _supersample(s: GridSet, requested: Optional[int]) -> int:
    m = SUPERSAMPLING[s.dim] if requested is None else int(requested)
    if m < 1 or m % 2 == 0:
        raise FupLabRangeError(f"supersampling factor must be a positive odd integer, got {m}")
    while m > 1 and (s.side * m) ** s.dim > MEMORY_CAP:
        m -= 2
    return m


def clearance(s: GridSet, points: np.ndarray, tree: Optional[spatial.cKDTree] = None) -> np.ndarray:
    """Euclidean distance from each point to the union of kept closed cells."""

    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = s.count
    if n == 0:
        return np.full(len(points), np.inf)

    centers = cell_centers(s)
    if tree is None:
        tree = spatial.cKDTree(centers)
    half = s.scale / 2
    slack = half * math.sqrt(s.dim)

    out = np.empty(len(points))
    for start in range(0, len(points), _CHUNK // (8 * s.dim)):
        block = slice(start, start + _CHUNK // (8 * s.dim))
        todo = np.arange(len(points))[block]
        k = min(n, 2 ** (s.dim + 1))
        while todo.size:
            dist, idx = tree.query(points[todo], k=k)
            if k == 1:
                dist, idx = dist[:, None], idx[:, None]
            gap = np.maximum(np.abs(points[todo][:, None, :] - centers[idx]) - half, 0.0)
            best = np.sqrt((gap * gap).sum(axis=-1)).min(axis=1)
            # the nearest cube is among the k nearest centres once the k-th centre is far enough
            done = (k >= n) | (dist[:, -1] > best + slack)
            out[todo[done]] = best[done]
            todo = todo[~done]
            k = min(n, 4 * k)
    return out


def _node_grid(s: GridSet, m: int) -> Tuple[np.ndarray, float]:
    spacing = s.scale / m
    axes = [s.lower[a] + spacing * (np.arange(s.side * m) + 0.5) for a in range(s.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1), spacing


def node_clearance(s: GridSet, m: int) -> Tuple[np.ndarray, float]:
    """Exact clearance on the m-fold refined node lattice, with its spacing."""

    nodes, spacing = _node_grid(s, m)
    values = clearance(s, nodes).reshape((s.side * m,) * s.dim)
    return values, spacing


def _positions(s: GridSet, seed: int) -> Tuple[np.ndarray, bool]:
    """Cell multi-indices used as ball or segment centres."""

    if s.side <= EXHAUSTIVE_SIDE_LIMIT:
        return np.argwhere(np.ones(s.mask.shape, dtype=bool)), False
    rng = np.random.default_rng(seed)
    flat = rng.choice(s.side ** s.dim, size=min(SAMPLED_POSITIONS, s.side ** s.dim), replace=False)
    return np.column_stack(np.unravel_index(np.sort(flat), s.mask.shape)), True


def _empty_report(kind: str, scale_range: Tuple[float, float], directions: int) -> PorosityReport:
    return PorosityReport(kind, float(NU_CAP), scale_range, None, directions, note=LATTICE_NOTE)


def _largest_j(best: float, R: float) -> int:
    j = min(NU_STEPS, max(0, int(math.floor(best / R * NU_DENOMINATOR))))
    while j > 0 and not best >= _nu(j) * R:
        j -= 1
    while j < NU_STEPS and best >= _nu(j + 1) * R:
        j += 1
    return j


def analyze_ball_porosity(s: GridSet, a0: float, a1: float, nu: Optional[float] = None,
                          supersample: Optional[int] = None, seed: int = POWER_SEED) -> PorosityReport:
    """Largest lattice nu such that every tested ball of diameter R in [a0, a1] holds a nu*R hole.

    Balls are centred at cell centres and clipped to the bounding box; hole centres range over
    the refined node lattice. Feasibility of a given nu is decided with one Euclidean distance
    transform of the hole set.
    """

    _check_range(s, a0, a1)
    requested = float(NU_CAP if nu is None else nu)
    if not s.count:
        return _empty_report(POROSITY_BALL, (a0, a1), 0)

    m = _supersample(s, supersample)
    values, spacing = node_clearance(s, m)
    cells, sampled = _positions(s, seed)
    centre_nodes = tuple((cells * m + m // 2).T)

    worst_j, witness = NU_STEPS, None
    for R in _ladder(s, a0, a1):

        def farthest(j: int) -> Optional[np.ndarray]:
            holes = values >= _nu(j) * R
            if not holes.any():
                return None
            return ndimage.distance_transform_edt(~holes)[centre_nodes] * spacing

        lo, hi = 0, NU_STEPS
        while lo < hi:
            mid = (lo + hi + 1) // 2
            far = farthest(mid)
            if far is not None and far.max() <= R / 2:
                lo = mid
            else:
                hi = mid - 1

        _LOGGER.debug("Ball porosity at scale %.6g: nu index %s", R, lo)
        if lo < worst_j:
            worst_j = lo
            far = farthest(lo + 1)
            pick = 0 if far is None else int(np.argmax(far))
            center = cell_centers(s, cells[pick:pick + 1])[0]
            witness = Witness(POROSITY_BALL, tuple(float(c) for c in center), float(R))

    nu_max = _nu(worst_j)
    return PorosityReport(
        POROSITY_BALL,
        nu_max,
        (a0, a1),
        witness if nu_max < requested else None,
        0,
        sampled=sampled,
        samples=len(cells),
        note=LATTICE_NOTE,
    )


def _segment_best(values: np.ndarray, spacing: float, lower: np.ndarray, starts: np.ndarray,
                  direction: np.ndarray, R: float) -> np.ndarray:
    """Lower bound for the best clearance along each segment.

    Inside the grid box the bound comes from the nearest node clearance; outside it the
    set is absent, so the distance to the box is a bound as well.
    """

    step = spacing / np.max(np.abs(direction))
    K = int(math.floor(R / 2 / step))
    t = np.arange(-K, K + 1) * step
    limit = np.asarray(values.shape)
    upper = lower + spacing * limit
    best = np.full(len(starts), -np.inf)
    rows = max(1, _CHUNK // (len(t) * len(direction)))
    for start in range(0, len(starts), rows):
        p = starts[start:start + rows]
        x = p[:, None, :] + t[None, :, None] * direction
        u = np.floor((x - lower) / spacing).astype(np.int64)
        u = np.clip(u, 0, limit - 1)
        q = lower + spacing * (u + 0.5)
        bound = values[tuple(np.moveaxis(u, -1, 0))] - np.linalg.norm(x - q, axis=-1)
        outside = np.maximum(np.maximum(lower - x, x - upper), 0.0)
        bound = np.maximum(bound, np.linalg.norm(outside, axis=-1))
        best[start:start + rows] = bound.max(axis=1)
    return best


def analyze_line_porosity(s: GridSet, a0: float, a1: float, dir_count: int = MIN_DIRECTIONS,
                          nu: Optional[float] = None, supersample: Optional[int] = None,
                          seed: int = POWER_SEED) -> PorosityReport:
    """Largest lattice nu such that every tested segment of length R holds a nu*R hole.

    Segments are centred at cell centres and run along the sampled directions plus every
    axis-parallel and diagonal direction. Points of a segment outside the grid box count
    with their distance to the box.
    """

    _check_range(s, a0, a1)
    if dir_count < MIN_DIRECTIONS:
        raise FupLabRangeError(f"at least {MIN_DIRECTIONS} directions are required, got {dir_count}")
    requested = float(NU_CAP if nu is None else nu)
    directions = line_directions(s.dim, dir_count)
    if not s.count:
        return _empty_report(POROSITY_LINE, (a0, a1), len(directions))

    m = _supersample(s, supersample)
    values, spacing = node_clearance(s, m)
    cells, sampled = _positions(s, seed)
    starts = cell_centers(s, cells)
    start_clearance = values[tuple((cells * m + m // 2).T)]

    worst_j, witness = NU_STEPS, None
    for R in _ladder(s, a0, a1):
        # segments starting at cap clearance pass at every lattice nu
        active = start_clearance < float(NU_CAP) * R
        if not active.any():
            continue
        best_value, best_at = np.inf, None
        for direction in directions:
            best = _segment_best(values, spacing, s.lower, starts[active], direction, R)
            pick = int(np.argmin(best))
            if best[pick] < best_value:
                best_value, best_at = best[pick], (starts[active][pick], direction)
        j = _largest_j(best_value, R)
        _LOGGER.debug("Line porosity at scale %.6g: nu index %s", R, j)
        if j < worst_j:
            worst_j = j
            center, direction = best_at
            witness = Witness(
                POROSITY_LINE,
                tuple(float(c) for c in center),
                float(R),
                tuple(float(e) for e in direction),
            )

    nu_max = _nu(worst_j)
    return PorosityReport(
        POROSITY_LINE,
        nu_max,
        (a0, a1),
        witness if nu_max < requested else None,
        len(directions),
        sampled=sampled,
        samples=len(cells),
        note=LATTICE_NOTE,
    )


def _occupancy(mask: np.ndarray, parts: int) -> np.ndarray:
    """Kept cells whose interior meets each cube of the parts^d partition of the grid box."""

    side = mask.shape[0]
    lo = (np.arange(parts) * side) // parts
    hi = -((-(np.arange(parts) + 1) * side) // parts)

    table = np.pad(mask.astype(np.int64), [(1, 0)] * mask.ndim)
    for axis in range(mask.ndim):
        table = np.cumsum(table, axis=axis)

    counts = np.zeros((parts,) * mask.ndim, dtype=np.int64)
    for corner in np.ndindex(*(2,) * mask.ndim):
        sign = (-1) ** (mask.ndim - sum(corner))
        counts += sign * table[np.ix_(*[hi if c else lo for c in corner])]
    return counts


def check_box_porosity(s: GridSet, L: int, n: int) -> bool:
    """Every depth-n cube meeting s has an empty depth-(n+1) subcube."""

    if L < 3 or n < 0:
        raise FupLabRangeError(f"box porosity needs L >= 3 and n >= 0, got L={L} n={n}")
    parts = L ** (n + 1)
    if parts > s.side:
        raise FupLabRangeError(f"depth {n + 1} at scale {L} does not resolve on a {s.side}-cell grid")

    occupied = _occupancy(s.mask, parts) > 0
    shape = []
    for _ in range(s.dim):
        shape.extend((L ** n, L))
    full = occupied.reshape(shape).all(axis=tuple(range(1, 2 * s.dim, 2)))
    return not full.any()


def box_porosity_levels(s: GridSet, L: int) -> Dict[int, bool]:
    """check_box_porosity at every depth that resolves on the grid."""

    levels = {}
    n = 0
    while L ** (n + 1) <= s.side:
        levels[n] = check_box_porosity(s, L, n)
        n += 1
    return levels


def box_porosity_scale(nu: float, dim: int) -> int:
    """Box scale that ball porosity with parameter nu guarantees."""

    if not nu > 0:
        raise FupLabRangeError(f"nu must be positive, got {nu}")
    return int(math.ceil(math.sqrt(dim) / float(nu) - 1e-12))


def box_measure_bound(dim: int, L: int, n: int) -> Fraction:
    """Measure bound 2^d (1 - L^-d)^n for sets box porous down to depth n."""

    return Fraction(2) ** dim * (1 - Fraction(1, L ** dim)) ** n


def box_gamma(L: int, dim: int) -> float:
    """Exponent gamma with L^-gamma = 1 - L^-d."""

    return -math.log1p(-float(L) ** -dim) / math.log(L)


def segment_intersection(s: GridSet, start, end) -> float:
    """Exact length of segment [start, end] inside the union of kept cells."""

    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    length = float(np.linalg.norm(end - start))
    if length == 0 or not s.count:
        return 0.0

    u0 = (start - s.lower) / s.scale
    du = (end - start) / s.scale
    cuts = [np.array([0.0, 1.0])]
    for a in range(s.dim):
        if du[a] == 0:
            continue
        lo, hi = sorted((u0[a], u0[a] + du[a]))
        ks = np.arange(math.ceil(lo), math.floor(hi) + 1)
        t = (ks - u0[a]) / du[a]
        cuts.append(t[(t > 0) & (t < 1)])
    t = np.unique(np.concatenate(cuts))

    mids = 0.5 * (t[:-1] + t[1:])
    idx = np.floor(u0 + mids[:, None] * du).astype(np.int64)
    inside = np.all((idx >= 0) & (idx < s.side), axis=1)
    kept = np.zeros(len(mids), dtype=bool)
    kept[inside] = s.mask[tuple(idx[inside].T)]
    return float(np.diff(t)[kept].sum() * length)


def line_intersection_profile(s: GridSet, R: float, segment_count: int,
                              dir_count: int = MIN_DIRECTIONS, seed: int = POWER_SEED) -> float:
    """Max over tested segments of length R of the measure of segment ∩ s.

    The first segments of every direction are centred at the kept cell nearest the centre of mass;
    the rest are centred at random kept cells.
    """

    if not 0 < R <= s.extent * (1 + 1e-12):
        raise FupLabRangeError(f"segment length {R} outside (0, {s.extent}]")
    if segment_count < 1:
        raise FupLabRangeError(f"segment count must be positive, got {segment_count}")
    if not s.count:
        return 0.0

    centers = cell_centers(s)
    directions = line_directions(s.dim, dir_count)
    anchor = centers[int(np.argmin(np.linalg.norm(centers - centers.mean(axis=0), axis=1)))]
    rng = np.random.default_rng(seed)

    best = 0.0
    for i in range(segment_count):
        direction = directions[i % len(directions)]
        center = anchor if i < len(directions) else centers[rng.integers(len(centers))]
        half = 0.5 * R * direction
        best = max(best, segment_intersection(s, center - half, center + half))
    return best


def local_measure_profile(s: GridSet, radii: Sequence[float]) -> np.ndarray:
    """Max over balls centred at kept cells of the measure of cells with centres in the ball."""

    radii = np.asarray(radii, dtype=float)
    if not s.count:
        return np.zeros(len(radii))
    centers = cell_centers(s)
    tree = spatial.cKDTree(centers)
    volume = s.scale ** s.dim
    return np.array([
        tree.query_ball_point(centers, r=R, return_length=True).max() * volume for R in radii
    ])


def fit_scaling_exponent(radii: Sequence[float], values: Sequence[float], alpha0: float,
                         power: float) -> Tuple[float, float]:
    """Fit values ~ C R^power (alpha0/R)^gamma by log-log least squares; returns (gamma, C)."""

    radii = np.asarray(radii, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(radii) < 2 or len(radii) != len(values):
        raise FupLabRangeError("at least two matching radii and values are required")
    if np.any(values <= 0) or np.any(radii <= 0):
        raise FupLabRangeError("scaling fit needs positive radii and values")
    gamma, log_c = np.polyfit(np.log(alpha0 / radii), np.log(values / radii ** power), 1)
    return float(gamma), float(np.exp(log_c))


def fit_line_gamma(s: GridSet, radii: Sequence[float], segment_count: int,
                   dir_count: int = MIN_DIRECTIONS) -> float:
    """Decay exponent of the line-intersection profile."""

    values = [line_intersection_profile(s, R, segment_count, dir_count) for R in radii]
    if min(values) <= 0:
        _LOGGER.warning("Line-intersection profile vanishes on some scale, gamma is taken as 0")
        return 0.0
    gamma, _ = fit_scaling_exponent(radii, values, min(radii), 1.0)
    return gamma


def restrict_to_line(s: GridSet, point, direction, samples: int,
                     length: Optional[float] = None) -> GridSet:
    """One dimensional grid set of s along the line through point, centred there.

    Line cell i is kept when its midpoint lies in s.
    """

    if samples < 1:
        raise FupLabRangeError(f"sample count must be positive, got {samples}")
    point = np.asarray(point, dtype=float)
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    length = s.extent if length is None else float(length)

    width = length / samples
    t = -length / 2 + width * (np.arange(samples) + 0.5)
    mask = contains(s, point + t[:, None] * direction)
    return GridSet(1, samples, mask, (-length / 2,), width)
