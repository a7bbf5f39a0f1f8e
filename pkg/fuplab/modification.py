"""Shell-by-shell modification making spherical projections constant."""

import json
import logging
import math
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from scipy import fft

from .const import (
    ANGULAR_MAX_SAMPLES,
    ANGULAR_REFINEMENT,
    ANGULAR_SAMPLES,
    MODIFICATION_START,
    MODIFICATION_TOLERANCE,
    RADIAL_PANELS,
    TRIG_CUTOFF,
)
from .exceptions import FupLabFormatError, FupLabRangeError, FupLabResolutionError
from .jets import (
    Jet,
    add_jets,
    compose_scalar,
    compose_vector,
    multiply_tensor_jets,
    norm_jet,
    radial_tensor_jet,
    scale_jet,
    zero_jet,
)
from .profile import shell_jets, shell_support
from .quadrature import composite_rule
from .sampling import covering_angle, sphere_directions
from .weights import SmoothWeight, shell_piece, spherical_projection, weight_from_dict, weight_to_dict

_LOGGER = logging.getLogger("fuplab")

_BATCH = 64
_TRIG_BATCH = 512
_TABLE_BATCH = 1024


def _radii(points: np.ndarray) -> np.ndarray:
    return np.linalg.norm(points, axis=1)


def _shell_rows(k: int, points: np.ndarray) -> np.ndarray:
    lo, hi = shell_support(k)
    r = _radii(points)
    return np.flatnonzero((r > lo) & (r < hi))


class ShellSlice(NamedTuple):
    """The shell-k pieces of a base weight, supported in 2^(k-1) <= |x| <= 2^(k+2)."""

    k: int
    base: SmoothWeight

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def pieces(self) -> List[Any]:
        return [piece for piece in self.base.pieces if piece.k == self.k]

    @property
    def support(self) -> Tuple[float, float]:
        return (2.0 ** (self.k - 1), 2.0 ** (self.k + 2))

    def jet(self, points: np.ndarray, order: int) -> Jet:
        out = zero_jet(points.shape[0], self.dim, order)
        for piece in self.pieces:
            out = add_jets(out, piece.jet(points, order))
        return out

    def regularity_samples(self, rng: np.random.Generator) -> np.ndarray:
        samples = [piece.regularity_samples(rng) for piece in self.pieces]
        return np.vstack(samples) if samples else np.zeros((0, self.dim))


def _trig_coefficients(samples: np.ndarray) -> np.ndarray:
    """One-sided Fourier coefficients of the trigonometric interpolant, Nyquist term dropped."""

    c = fft.rfft(samples) / len(samples)
    c[1:] *= 2
    if len(samples) % 2 == 0:
        c[-1] = 0
    return c


def _significant(coefficients: np.ndarray, cutoff: float = TRIG_CUTOFF) -> np.ndarray:
    """Coefficients up to the last one above cutoff * max |c|."""

    size = np.abs(coefficients)
    if not size.max(initial=0.0):
        return coefficients[:1]
    return coefficients[:np.flatnonzero(size > cutoff * size.max())[-1] + 1]


def _trig_eval(coefficients: np.ndarray, theta: np.ndarray, order: int) -> np.ndarray:
    """Derivatives 0..order of the interpolant at theta, shape (order + 1, n)."""

    m = np.arange(len(coefficients))
    scaled = [coefficients * (1j * m) ** j for j in range(order + 1)]
    out = np.empty((order + 1, len(theta)))
    for start in range(0, len(theta), _TRIG_BATCH):
        phases = np.exp(1j * np.outer(theta[start:start + _TRIG_BATCH], m))
        for j, c in enumerate(scaled):
            out[j, start:start + _TRIG_BATCH] = np.real(phases @ c)
    return out


def _trig_grid(coefficients: np.ndarray, size: int, order: int) -> np.ndarray:
    """The same derivatives on the uniform grid of `size` angles, by inverse FFT."""

    m = np.arange(len(coefficients))
    out = []
    for j in range(order + 1):
        c = coefficients * (1j * m) ** j
        padded = np.zeros(size // 2 + 1, dtype=complex)
        padded[:len(c)] = c * size / 2
        padded[0] = c[0] * size
        out.append(fft.irfft(padded, size))
    return np.stack(out)


def _angle_jet(points: np.ndarray, order: int) -> Jet:
    """Jet of theta = arg(x_1 + i x_2) from the derivatives of log z."""

    z = points[:, 0] + 1j * points[:, 1]
    out = [np.arctan2(points[:, 1], points[:, 0])]
    for a in range(1, order + 1):
        tensor = np.empty((len(z),) + (2,) * a)
        base = (-1) ** (a - 1) * math.factorial(a - 1) / z ** a
        for index in np.ndindex(*(2,) * a):
            tensor[(slice(None),) + index] = np.imag(1j ** sum(index) * base)
        out.append(tensor)
    return out


class AngularCorrection(NamedTuple):
    """g_k(x) = psi_k(|x|) (q_k - h_k(x/|x|)) / p_k with h_k the projection of the shell slice.

    In the plane h_k is replaced by its trigonometric interpolant from `table`;
    otherwise it is recomputed by radial quadrature at every evaluation.
    """

    k: int
    p: float
    q: float
    slice: ShellSlice
    table: Optional[np.ndarray] = None

    @property
    def dim(self) -> int:
        return self.slice.dim

    @property
    def support(self) -> Tuple[float, float]:
        return shell_support(self.k)

    def angular_jet(self, points: np.ndarray, order: int) -> Jet:
        if self.table is not None:
            coefficients = _significant(_trig_coefficients(self.table))
            T = _trig_eval(coefficients, np.arctan2(points[:, 1], points[:, 0]), order)
            return compose_scalar(T, _angle_jet(points, order))
        return self._projection_jet(points, order)

    def _projection_jet(self, points: np.ndarray, order: int) -> Jet:
        lo, hi = self.slice.support
        t, weights = composite_rule(lo, hi, RADIAL_PANELS)
        r = norm_jet(points, order + 1)
        units = points / r[0][:, None]
        F = []
        for start in range(0, len(points), _BATCH):
            v = units[start:start + _BATCH]
            nodes = (t[:, None, None] * v[None, :, :]).reshape(-1, self.dim)
            jet = self.slice.jet(nodes, order)
            F.append([
                np.tensordot(weights * t ** (a - 2), tensor.reshape((len(t), len(v)) + tensor.shape[1:]), axes=(0, 0))
                for a, tensor in enumerate(jet)
            ])
        F = [np.concatenate([batch[a] for batch in F]) for a in range(order + 1)]
        return compose_vector(F, r[1:order + 2])

    def jet(self, points: np.ndarray, order: int) -> Jet:
        out = zero_jet(points.shape[0], self.dim, order)
        rows = _shell_rows(self.k, points)
        if not rows.size:
            return out
        inner = points[rows]
        psi = radial_tensor_jet(inner, shell_jets(self.k, _radii(inner)), order)
        angular = self.angular_jet(inner, order)
        gap = [self.q - angular[0]] + [-tensor for tensor in angular[1:]]
        for a, tensor in enumerate(scale_jet(multiply_tensor_jets(psi, gap), 1.0 / self.p)):
            out[a][rows] = tensor
        return out

    def regularity_samples(self, rng: np.random.Generator) -> np.ndarray:
        lo, hi = self.support
        radii = np.linspace(lo, hi, 33)[1:-1]
        dirs = sphere_directions(self.dim, 32)
        return (radii[:, None, None] * dirs[None, :, :]).reshape(-1, self.dim)


class ModifiedPiece(NamedTuple):
    """The shell-k pieces plus its correction, when there is one."""

    k: int
    slice: ShellSlice
    correction: Optional[AngularCorrection]

    @property
    def dim(self) -> int:
        return self.slice.dim

    @property
    def support(self) -> Tuple[float, float]:
        return self.slice.support

    def jet(self, points: np.ndarray, order: int) -> Jet:
        out = self.slice.jet(points, order)
        if self.correction is not None:
            out = add_jets(out, self.correction.jet(points, order))
        return out


class ModifiedWeight(NamedTuple):
    base: SmoothWeight
    corrections: Dict[int, AngularCorrection]
    q: Dict[int, float]
    p: Dict[int, float]

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def params(self) -> Dict[str, Any]:
        return self.base.params

    @property
    def support_radius(self) -> float:
        return self.base.support_radius

    @property
    def all_pieces(self) -> List[Any]:
        return self.base.all_pieces + [self.corrections[k] for k in sorted(self.corrections)]

    def jet(self, points, order: int = 0) -> Jet:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = self.base.jet(points, order)
        for k in sorted(self.corrections):
            out = add_jets(out, self.corrections[k].jet(points, order))
        return out

    def modified_piece(self, k: int) -> ModifiedPiece:
        return ModifiedPiece(k, ShellSlice(k, self.base), self.corrections.get(k))


def shell_mass(k: int, dim: int) -> float:
    """p_k, the spherical projection of psi_k."""

    return float(spherical_projection(shell_piece(k, dim), np.eye(dim)[0]))


def _planar_table(piece: ShellSlice, samples: int, refinement: int,
                  tolerance: float) -> Tuple[np.ndarray, float]:
    """Projection samples on the circle and a certified lower bound for the interpolant."""

    theta = 2 * np.pi * np.arange(samples) / samples
    table = np.concatenate([
        spherical_projection(piece, np.column_stack([np.cos(chunk), np.sin(chunk)]))
        for chunk in np.array_split(theta, max(1, samples // _TABLE_BATCH))
    ])

    size = samples * refinement
    full = _trig_grid(_trig_coefficients(table), size, 1)
    half = _trig_grid(_trig_coefficients(table[::2]), size, 0)[0]
    aliasing = float(np.max(np.abs(full[0] - half)))
    if aliasing > tolerance * max(1.0, float(np.max(np.abs(table)))):
        raise FupLabResolutionError(
            f"shell {piece.k}: {samples} directions leave an interpolation gap of {aliasing:.3g}",
            required=2 * samples,
        )
    slack = float(np.max(np.abs(full[1]))) * np.pi / size
    return table, float(full[0].min()) - slack


def _refined_planar_table(piece: ShellSlice, samples: int, max_samples: int, refinement: int,
                          tolerance: float) -> Tuple[np.ndarray, float]:
    while True:
        try:
            return _planar_table(piece, samples, refinement, tolerance)
        except FupLabResolutionError as err:
            if err.required > max_samples:
                raise
            _LOGGER.debug("shell %s: doubling the circle sample to %s", piece.k, err.required)
            samples = err.required


def _sphere_bound(piece: ShellSlice, samples: int) -> float:
    """min of the projection over the sphere sample, less a Lipschitz allowance."""

    dirs = sphere_directions(piece.dim, samples)
    correction = AngularCorrection(piece.k, 1.0, 0.0, piece)
    jet = correction.angular_jet(2.0 ** (piece.k + 1) * dirs, 1)
    radius = 2.0 ** (piece.k + 1)
    tangential = jet[1] * radius
    tangential -= np.sum(tangential * dirs, axis=1)[:, None] * dirs
    slack = float(np.max(np.linalg.norm(tangential, axis=1))) * covering_angle(piece.dim, samples)
    return float(jet[0].min()) - slack


def modify_weight(w: SmoothWeight, samples: int = ANGULAR_SAMPLES, start: int = MODIFICATION_START,
                  refinement: int = ANGULAR_REFINEMENT, tolerance: float = MODIFICATION_TOLERANCE,
                  max_samples: int = ANGULAR_MAX_SAMPLES) -> ModifiedWeight:
    """Add g_k to every shell k >= start so that each shell's spherical projection is the constant q_k.

    In the plane the circle sample starts at `samples` and doubles while the
    interpolant is unresolved; FupLabResolutionError is raised past `max_samples`.
    """

    corrections: Dict[int, AngularCorrection] = {}
    q: Dict[int, float] = {}
    p: Dict[int, float] = {}
    for k in (k for k in w.shells if k >= start):
        piece = ShellSlice(k, w)
        if not all(math.isfinite(part.support[1]) for part in piece.pieces):
            raise FupLabRangeError(f"shell {k} of the weight is unbounded")
        if w.dim == 2:
            table, bound = _refined_planar_table(piece, samples, max_samples, refinement, tolerance)
            if not np.any(table):
                continue
        else:
            table, bound = None, _sphere_bound(piece, samples)
            if bound == 0:
                continue
        p[k] = shell_mass(k, w.dim)
        q[k] = bound
        corrections[k] = AngularCorrection(k, p[k], bound, piece, table)
        _LOGGER.debug("shell %s: p=%.6g q=%.6g", k, p[k], bound)

    _LOGGER.info("Modified %s shells, sum |q_k| = %.6g", len(q), sum(abs(v) for v in q.values()))
    return ModifiedWeight(w, corrections, q, p)


def q_partial_sums(mw: ModifiedWeight) -> List[Tuple[int, float]]:
    total = 0.0
    out = []
    for k in sorted(mw.q):
        total += abs(mw.q[k])
        out.append((k, total))
    return out


def modified_to_dict(mw: ModifiedWeight) -> Dict[str, Any]:
    return {
        "base": weight_to_dict(mw.base),
        "corrections": [
            {
                "k": k, "p": c.p, "q": c.q,
                "samples": None if c.table is None else c.table.tolist(),
            }
            for k, c in sorted(mw.corrections.items())
        ],
    }


def modified_from_dict(data: Dict[str, Any]) -> ModifiedWeight:
    try:
        base = weight_from_dict(data["base"])
        corrections = {}
        for entry in data["corrections"]:
            k = int(entry["k"])
            table = None if entry["samples"] is None else np.asarray(entry["samples"], dtype=float)
            corrections[k] = AngularCorrection(k, float(entry["p"]), float(entry["q"]), ShellSlice(k, base), table)
    except (KeyError, TypeError, ValueError) as err:
        raise FupLabFormatError(f"malformed modified weight: {err}") from err
    return ModifiedWeight(
        base, corrections, {k: c.q for k, c in corrections.items()}, {k: c.p for k, c in corrections.items()}
    )


def save_any_weight(w, path: str) -> None:
    data = modified_to_dict(w) if isinstance(w, ModifiedWeight) else weight_to_dict(w)
    with open(path, "w") as fp:
        json.dump(data, fp)


def load_any_weight(path: str):
    """Load either a plain or a modified weight document."""

    try:
        with open(path) as fp:
            data = json.load(fp)
    except ValueError as err:
        raise FupLabFormatError(f"{path} is not JSON: {err}") from err
    if "base" in data:
        return modified_from_dict(data)
    return weight_from_dict(data)
