"""Smooth nonpositive weights assembled from dyadic shells of bumps."""

import itertools
import json
import logging
import math
from typing import Any, Callable, Dict, Iterable, List, NamedTuple, Tuple, Union

import numpy as np
from scipy.integrate import trapezoid

from .const import (
    DEFAULT_S,
    GAMMA_ALPHA_SLOPE,
    GROWTH_DIRECTIONS,
    GROWTH_PANELS,
    GROWTH_RADII_PER_SHELL,
    LOWER_BOUND_FACTOR,
    POWER_SEED,
    RADIAL_PANELS,
    REGULARITY_INTERIOR_POINTS,
    UNBOUNDED_SHELL,
)
from .exceptions import FupLabFormatError, FupLabRangeError
from .gridset import cell_centers
from .jets import (
    Jet,
    add_jets,
    check_order,
    frobenius,
    radial_tensor_jet,
    zero_jet,
)
from .models import GridSet, GrowthReport, RegularityReport
from .profile import DEFAULT_PROFILE, omega_zero_jets, shell_jets, shell_support
from .quadrature import composite_rule
from .sampling import sphere_directions

_LOGGER = logging.getLogger("fuplab")

_KEY_OFFSET = 2 ** 19
_KEY_BASE = 2 ** 20

PIECE_CUBES = "cubes"
PIECE_RADIAL = "radial"

RADIAL_OMEGA_ZERO = "omega_zero"
RADIAL_SHELL = "shell"
RADIAL_INDICATOR = "indicator"


def encode_cells(m: np.ndarray) -> np.ndarray:
    """Pack integer lattice coordinates into sortable int64 keys."""

    m = np.asarray(m, dtype=np.int64) + _KEY_OFFSET
    keys = np.zeros(m.shape[0], dtype=np.int64)
    for axis in range(m.shape[1]):
        keys += m[:, axis] * _KEY_BASE ** axis
    return keys


def decode_cells(keys: np.ndarray, dim: int) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    out = np.empty((keys.size, dim), dtype=np.int64)
    for axis in range(dim):
        out[:, axis] = (keys // _KEY_BASE ** axis) % _KEY_BASE - _KEY_OFFSET
    return out


def _product_jet(factors: np.ndarray, order: int) -> Jet:
    """Jet of prod_i f(x_i) from factors[j, n, i] = f^(j)(x_i)."""

    n, dim = factors.shape[1:]
    out = [np.prod(factors[0], axis=1)]
    for a in range(1, order + 1):
        tensor = np.empty((n,) + (dim,) * a)
        for index in itertools.product(range(dim), repeat=a):
            counts = np.bincount(index, minlength=dim)
            tensor[(slice(None),) + index] = np.prod(factors[counts, :, np.arange(dim)].T, axis=1)
        out.append(tensor)
    return out


def _radii(points: np.ndarray) -> np.ndarray:
    return np.linalg.norm(points, axis=1)


class CubeShellPiece(NamedTuple):
    """amplitude * sum of lattice bumps over selected cubes of one dyadic shell.

    Cube centres are m * width / 2 for the integer vectors m whose keys are stored;
    every bump spans a cube of side `width`.
    """

    k: int
    amplitude: float
    width: float
    keys: np.ndarray
    dim: int

    @property
    def kind(self) -> str:
        return PIECE_CUBES

    @property
    def cells(self) -> np.ndarray:
        return decode_cells(self.keys, self.dim)

    @property
    def centers(self) -> np.ndarray:
        return self.cells * (self.width / 2)

    @property
    def support(self) -> Tuple[float, float]:
        if not self.keys.size:
            return (0.0, 0.0)
        r = _radii(self.centers)
        reach = self.width * math.sqrt(self.dim) / 2
        return (max(float(r.min()) - reach, 0.0), float(r.max()) + reach)

    def jet(self, points: np.ndarray, order: int) -> Jet:
        out = zero_jet(points.shape[0], self.dim, order)
        if not self.keys.size:
            return out
        lo, hi = self.support
        r = _radii(points)
        near = np.flatnonzero((r >= lo) & (r <= hi))
        if not near.size:
            return out

        half = self.width / 2
        u = points[near] / half
        base = np.floor(u).astype(np.int64)
        for corner in itertools.product((0, 1), repeat=self.dim):
            m = base + np.asarray(corner, dtype=np.int64)
            member = np.isin(encode_cells(m), self.keys, assume_unique=False)
            if not member.any():
                continue
            t = u[member] - m[member]
            factors = np.stack([DEFAULT_PROFILE.bump(t, a) / half ** a for a in range(order + 1)])
            rows = near[member]
            for a, tensor in enumerate(_product_jet(factors, order)):
                out[a][rows] += self.amplitude * tensor
        return out

    def regularity_samples(self, rng: np.random.Generator) -> np.ndarray:
        half = self.width / 2
        grid = np.asarray(list(itertools.product((-0.5, 0.0, 0.5), repeat=self.dim)))
        centers = self.centers
        fixed = (centers[:, None, :] + half * grid[None, :, :]).reshape(-1, self.dim)
        random = centers[:, None, :] + half * rng.uniform(-1, 1, (len(centers), REGULARITY_INTERIOR_POINTS, self.dim))
        return np.vstack([fixed, random.reshape(-1, self.dim)])


_RADIAL_PROFILES: Dict[str, Callable[[int, np.ndarray], np.ndarray]] = {
    RADIAL_OMEGA_ZERO: lambda k, r: omega_zero_jets(r),
    RADIAL_SHELL: lambda k, r: shell_jets(k, r),
}


class RadialPiece(NamedTuple):
    """amplitude * g(|x|) for a named closed-form profile g, zero outside [r_min, r_max]."""

    k: int
    profile: str
    amplitude: float
    dim: int
    r_min: float
    r_max: float

    @property
    def kind(self) -> str:
        return PIECE_RADIAL

    @property
    def support(self) -> Tuple[float, float]:
        return (self.r_min, self.r_max)

    def radial_jets(self, r: np.ndarray) -> np.ndarray:
        if self.profile == RADIAL_INDICATOR:
            g = np.zeros((4, r.size))
            g[0] = 1.0
        else:
            g = _RADIAL_PROFILES[self.profile](self.k, r)
        inside = (r >= self.r_min) & (r <= self.r_max)
        return self.amplitude * g * inside

    def jet(self, points: np.ndarray, order: int) -> Jet:
        return radial_tensor_jet(points, self.radial_jets(_radii(points)), order)

    def regularity_samples(self, rng: np.random.Generator) -> np.ndarray:
        top = self.r_max if math.isfinite(self.r_max) else 2 ** UNBOUNDED_SHELL
        radii = np.linspace(max(self.r_min, 1e-3), top, 32)
        dirs = sphere_directions(self.dim, 16)
        return (radii[:, None, None] * dirs[None, :, :]).reshape(-1, self.dim)


Piece = Union[CubeShellPiece, RadialPiece]


class SmoothWeight(NamedTuple):
    dim: int
    pieces: List[Any]
    params: Dict[str, Any]

    def jet(self, points, order: int = 0) -> Jet:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = zero_jet(points.shape[0], self.dim, order)
        for piece in self.pieces:
            out = add_jets(out, piece.jet(points, order))
        return out

    @property
    def all_pieces(self) -> List[Any]:
        return list(self.pieces)

    @property
    def shells(self) -> List[int]:
        return sorted({piece.k for piece in self.pieces})

    @property
    def support_radius(self) -> float:
        return max((piece.support[1] for piece in self.pieces), default=0.0)


def zero_weight(dim: int, **params) -> SmoothWeight:
    return SmoothWeight(dim, [], dict(params))


def eval_weight(w, x, a: int = 0) -> np.ndarray:
    """Value or a-th derivative tensor of a weight at a point or at rows of points."""

    check_order(a)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    values = w.jet(np.atleast_2d(x), a)[a]
    return values[0] if single else values


def shell_width(k: int, s: float, dim: int) -> float:
    """min(2^k / k^s, 2^(k-1) / sqrt(d)), small enough to keep cubes meeting A_k inside the guard annulus."""

    return min(2.0 ** k / k ** s, 2.0 ** (k - 1) / math.sqrt(dim))


def first_shell(mu: float, s: float = DEFAULT_S) -> int:
    """Smallest k >= 2 with 2^k / k^s > mu."""

    k = 2
    while 2.0 ** k / k ** s <= mu:
        k += 1
    return k


def default_alpha(gamma: float) -> float:
    return 1.0 - GAMMA_ALPHA_SLOPE * gamma


def shell_of(radii: np.ndarray) -> np.ndarray:
    """k with 2^k <= r < 2^(k+1); -1 below 1."""

    radii = np.asarray(radii, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(radii >= 1, np.floor(np.log2(np.maximum(radii, 1))), -1).astype(int)


def select_cubes(points: np.ndarray, width: float) -> np.ndarray:
    """Keys of the lattice cubes of side `width` whose closed support holds one of the points."""

    if not len(points):
        return np.zeros(0, dtype=np.int64)
    base = np.floor(points / (width / 2)).astype(np.int64)
    keys = [encode_cells(base + np.asarray(corner)) for corner in itertools.product((0, 1), repeat=points.shape[1])]
    return np.unique(np.concatenate(keys))


def build_shell_weight(dim: int, shells: Iterable[int], amplitude: Callable[[int], float], points: np.ndarray,
                       s: float = DEFAULT_S, **params) -> SmoothWeight:
    """Sum over k of amplitude(k) times the bumps of the cubes meeting points in A_k."""

    points = np.asarray(points, dtype=float).reshape(-1, dim)
    shell_index = shell_of(_radii(points))
    pieces = []
    for k in shells:
        inside = points[shell_index == k]
        if not len(inside):
            continue
        width = shell_width(k, s, dim)
        pieces.append(CubeShellPiece(k, float(amplitude(k)), width, select_cubes(inside, width), dim))
        _LOGGER.debug("shell %s: %s cubes of width %.4g", k, pieces[-1].keys.size, width)
    return SmoothWeight(dim, pieces, dict(params, s=s))


def build_damping_weight(Y: GridSet, nu: float, mu: float, alpha: float, s: float = DEFAULT_S) -> SmoothWeight:
    """Weight -2^k/k^alpha on the cubes of width W_k meeting Y in A_k, for every k >= k0."""

    if alpha <= 3 * s:
        raise FupLabRangeError(f"alpha={alpha} must exceed 3s={3 * s}")
    if alpha >= 1:
        _LOGGER.warning("alpha=%s is not below 1; the damping weight decays too fast to matter", alpha)

    k0 = first_shell(mu, s)
    points = cell_centers(Y)
    params = {"nu": float(nu), "mu": float(mu), "alpha": float(alpha), "k0": k0}
    if not len(points) or _radii(points).max() < 2.0 ** k0:
        _LOGGER.warning("Y does not reach 2^%s; returning the zero weight", k0)
        return zero_weight(Y.dim, s=float(s), **params)

    kmax = int(shell_of(_radii(points)).max())
    weight = build_shell_weight(
        Y.dim, range(k0, kmax + 1), lambda k: -(2.0 ** k) / k ** alpha, points, float(s), **params
    )
    _LOGGER.info("Damping weight on shells %s..%s with %s cubes", k0, kmax,
                 sum(piece.keys.size for piece in weight.pieces))
    return weight


def omega_zero(dim: int) -> SmoothWeight:
    """-|x| / log(2 + |x|)^2 smoothly cut off below |x| = 5."""

    piece = RadialPiece(-1, RADIAL_OMEGA_ZERO, 1.0, dim, 0.0, math.inf)
    return SmoothWeight(dim, [piece], {"profile": RADIAL_OMEGA_ZERO})


def shell_piece(k: int, dim: int, amplitude: float = 1.0) -> RadialPiece:
    lo, hi = shell_support(k)
    return RadialPiece(k, RADIAL_SHELL, amplitude, dim, lo, hi)


def damping_lower_bound_check(w: SmoothWeight, Y: GridSet) -> Tuple[bool, float, int]:
    """Check w(y) <= -|y| / (20 log(2 + |y|)^alpha) at the Y points beyond 2^k0.

    Returns (passed, largest w(y) + bound, number of points checked).
    """

    k0, alpha = w.params["k0"], w.params["alpha"]
    points = cell_centers(Y)
    r = _radii(points)
    points, r = points[r > 2.0 ** k0], r[r > 2.0 ** k0]
    if not len(points):
        return True, -math.inf, 0
    values = eval_weight(w, points)
    margin = values + LOWER_BOUND_FACTOR * r / np.log(2 + r) ** alpha
    worst = float(margin.max())
    return worst <= 0, worst, len(points)


def projection_rule(lo: float, hi: float, panels: int = RADIAL_PANELS) -> Tuple[np.ndarray, np.ndarray]:
    """Radial nodes and weights for the integral of f(t) t^-2 over [lo, hi]."""

    t, weights = composite_rule(lo, hi, panels)
    return t, weights / t ** 2


def spherical_projection(piece, direction, panels: int = RADIAL_PANELS) -> Union[float, np.ndarray]:
    """Integral over t > 0 of piece(t v) t^-2 for one unit vector v or for rows of them."""

    lo, hi = piece.support
    if lo <= 0:
        raise FupLabRangeError("spherical projection needs a piece supported away from the origin")
    if not math.isfinite(hi):
        raise FupLabRangeError("spherical projection needs a bounded piece")
    direction = np.asarray(direction, dtype=float)
    dirs = np.atleast_2d(direction)
    t, weights = projection_rule(lo, hi, panels)
    points = (t[:, None, None] * dirs[None, :, :]).reshape(-1, dirs.shape[1])
    values = piece.jet(points, 0)[0].reshape(len(t), len(dirs))
    out = weights @ values
    return float(out[0]) if direction.ndim == 1 else out


def _growth_radii(top: float) -> Tuple[np.ndarray, np.ndarray]:
    shells = max(int(math.ceil(math.log2(top))), 1)
    radii = np.unique(np.concatenate([
        np.linspace(2.0 ** j, 2.0 ** (j + 1), GROWTH_RADII_PER_SHELL + 1) for j in range(shells)
    ]))
    return radii, shell_of(radii)


def growth_function(w, points: np.ndarray) -> np.ndarray:
    """G(x) = integral over 1/2 <= s <= 2 of |w(s x)|."""

    s, weights = composite_rule(0.5, 2.0, GROWTH_PANELS)
    scaled = (s[:, None, None] * points[None, :, :]).reshape(-1, points.shape[1])
    values = np.abs(w.jet(scaled, 0)[0]).reshape(len(s), len(points))
    return weights @ values


def _increments_fail_to_decrease(values: List[float]) -> bool:
    """Later dyadic increments are on average no smaller than the earlier ones."""

    start = next((i for i, v in enumerate(values) if v > 0), len(values))
    active = values[start:]
    half = len(active) // 2
    if not half:
        return False
    return bool(np.mean(active[-half:]) >= np.mean(active[:half]))


def growth_report(w, directions: int = GROWTH_DIRECTIONS) -> GrowthReport:
    """Sampled G*(r) and the integral of G*(r) / (1 + r^2)."""

    top = w.support_radius
    unbounded = not math.isfinite(top)
    if unbounded:
        _LOGGER.warning("Weight has unbounded support; integrating up to 2^%s only", UNBOUNDED_SHELL)
        top = 2.0 ** UNBOUNDED_SHELL
    if top <= 0:
        return GrowthReport(np.zeros(0), np.zeros(0), 0.0, 0.0, False, {})

    radii, index = _growth_radii(top)
    dirs = sphere_directions(w.dim, directions)
    G_star = np.empty(len(radii))
    largest = 0.0
    for i, r in enumerate(radii):
        G = growth_function(w, r * dirs)
        G_star[i] = G.max()
        largest = max(largest, float(np.abs(w.jet(r * dirs, 0)[0]).max()))

    density = G_star / (1 + radii ** 2)
    integral_value = float(trapezoid(density, radii))
    increments = {}
    for j in np.unique(index):
        cut = (radii >= 2.0 ** j) & (radii <= 2.0 ** (j + 1))
        increments[int(j)] = float(trapezoid(density[cut], radii[cut]))

    tail_bound = math.inf if unbounded else 0.75 * largest / top
    diverged = _increments_fail_to_decrease([v for j, v in sorted(increments.items()) if 2.0 ** (j + 2) <= top])
    _LOGGER.info("Growth integral %.6g (tail %.3g), diverged=%s", integral_value, tail_bound, diverged)
    return GrowthReport(radii, G_star, integral_value, tail_bound, diverged, increments)


def regularity_scan(w, a: int, seed: int = POWER_SEED) -> RegularityReport:
    """Empirical sup of |D^a w(x)| <x>^(a-1) over piece samples, with per-shell sups of |D^a w_k| 2^((a-1)k)."""

    check_order(a)
    rng = np.random.default_rng(seed)
    per_shell: Dict[int, float] = {}
    c_reg = 0.0
    samples = 0
    for piece in w.all_pieces:
        points = piece.regularity_samples(rng)
        if not len(points):
            continue
        samples += len(points)
        own = frobenius(piece.jet(points, a)[a])
        per_shell[piece.k] = max(per_shell.get(piece.k, 0.0), float(own.max()) * 2.0 ** ((a - 1) * piece.k))
        total = frobenius(w.jet(points, a)[a])
        bracket = np.sqrt(1 + _radii(points) ** 2)
        c_reg = max(c_reg, float(np.max(total * bracket ** (a - 1))))
    return RegularityReport(a, c_reg, per_shell, samples)


def piece_to_dict(piece) -> Dict[str, Any]:
    if piece.kind == PIECE_CUBES:
        return {
            "type": PIECE_CUBES, "k": piece.k, "amplitude": piece.amplitude, "width": piece.width,
            "centers": piece.cells.tolist(),
        }
    return {
        "type": PIECE_RADIAL, "k": piece.k, "profile": piece.profile, "amplitude": piece.amplitude,
        "r_min": piece.r_min, "r_max": None if math.isinf(piece.r_max) else piece.r_max,
    }


def piece_from_dict(data: Dict[str, Any], dim: int):
    if data["type"] == PIECE_CUBES:
        cells = np.asarray(data["centers"], dtype=np.int64).reshape(-1, dim)
        return CubeShellPiece(int(data["k"]), float(data["amplitude"]), float(data["width"]),
                              np.unique(encode_cells(cells)), dim)
    if data["type"] == PIECE_RADIAL:
        r_max = math.inf if data["r_max"] is None else float(data["r_max"])
        return RadialPiece(int(data["k"]), data["profile"], float(data["amplitude"]), dim, float(data["r_min"]), r_max)
    raise FupLabFormatError(f"unknown piece type {data['type']!r}")


def weight_to_dict(w: SmoothWeight) -> Dict[str, Any]:
    return {"dim": w.dim, "params": w.params, "pieces": [piece_to_dict(piece) for piece in w.pieces]}


def weight_from_dict(data: Dict[str, Any]) -> SmoothWeight:
    try:
        dim = int(data["dim"])
        return SmoothWeight(dim, [piece_from_dict(piece, dim) for piece in data["pieces"]], dict(data["params"]))
    except (KeyError, TypeError, ValueError) as err:
        raise FupLabFormatError(f"malformed weight document: {err}") from err


def save_weight(w: SmoothWeight, path: str) -> None:
    with open(path, "w") as fp:
        json.dump(weight_to_dict(w), fp)


def load_weight(path: str) -> SmoothWeight:
    try:
        with open(path) as fp:
            data = json.load(fp)
    except ValueError as err:
        raise FupLabFormatError(f"{path} is not JSON: {err}") from err
    return weight_from_dict(data)
