"""Deterministic samples of directions, scales and points."""

from typing import List

import numpy as np
from scipy.stats import qmc

from .const import SCALE_RATIO
from .exceptions import FupLabRangeError


def scale_ladder(a0: float, a1: float, ratio: float = SCALE_RATIO) -> List[float]:
    """Geometric ladder a0, a0*ratio, ... closed by a1."""

    if not 0 < a0 < a1:
        raise FupLabRangeError(f"degenerate scale range ({a0}, {a1})")
    ladder = []
    r = a0
    while r < a1 * (1 - 1e-12):
        ladder.append(r)
        r *= ratio
    ladder.append(a1)
    return ladder


def axis_and_diagonal_directions(dim: int) -> np.ndarray:
    """Axis-parallel and diagonal unit vectors, one per antipodal pair."""

    out = []
    for entries in np.ndindex(*(3,) * dim):
        v = np.asarray(entries, dtype=float) - 1.0
        nonzero = np.flatnonzero(v)
        if nonzero.size and v[nonzero[0]] > 0:
            out.append(v / np.linalg.norm(v))
    return np.asarray(out)


def sphere_directions(dim: int, count: int, antipodal: bool = False) -> np.ndarray:
    """Equally spaced angles for d = 2, a Fibonacci lattice for d = 3.

    With antipodal=True the sample covers directions up to sign (half circle or hemisphere).
    """

    if count < 1:
        raise FupLabRangeError(f"direction count must be positive, got {count}")
    if dim == 1:
        return np.array([[1.0]]) if antipodal else np.array([[1.0], [-1.0]])
    if dim == 2:
        span = np.pi if antipodal else 2 * np.pi
        theta = span * np.arange(count) / count
        return np.column_stack([np.cos(theta), np.sin(theta)])
    if dim == 3:
        n = 2 * count if antipodal else count
        i = np.arange(n) + 0.5
        z = 1 - 2 * i / n
        phi = np.pi * (3 - np.sqrt(5.0)) * i
        rho = np.sqrt(1 - z * z)
        points = np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
        return points[z > 0] if antipodal else points
    raise FupLabRangeError(f"no direction sample for dimension {dim}")


def line_directions(dim: int, count: int) -> np.ndarray:
    """Sphere sample up to sign merged with the axis and diagonal directions."""

    merged = np.vstack([sphere_directions(dim, count, antipodal=True), axis_and_diagonal_directions(dim)])
    keep = []
    for v in merged:
        if not any(abs(abs(np.dot(v, w)) - 1) < 1e-12 for w in keep):
            keep.append(v)
    return np.asarray(keep)


def covering_angle(dim: int, count: int) -> float:
    """Upper bound for the angle from any unit vector to the sample."""

    if dim == 2:
        return np.pi / count
    if dim == 3:
        return 2.0 * np.sqrt(4.0 * np.pi / count)
    return 0.0


def halton_points(dim: int, count: int, seed: int) -> np.ndarray:
    """Scrambled Halton points in [0, 1)^dim."""

    return qmc.Halton(d=dim, scramble=True, seed=seed).random(count)
