"""Poisson extension of weights to C^d, Hilbert transforms along lines and plurisubharmonicity checks.

For z = x + iy the extension is Ew(z) = integral of w(x + t y) / (1 + t^2) dt / pi. Away
from the real locus its complex Hessian is P A P / (4 |y|), where A is the integral of
D^2 w along the line through x in direction y / |y| divided by pi, and P projects
onto the orthogonal complement of y.
"""

import logging
import math
from typing import Any, Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, stats

from .const import (
    EXTENSION_TAIL_REACH,
    EXTENSION_TOLERANCE,
    FD_RELATIVE_STEP,
    GRADING_RATIO,
    HILBERT_T0_SAMPLES,
    HILBERT_TOLERANCE,
    LINE_TOLERANCE,
    LOG_SUP_FACTOR,
    OMEGA_ZERO_SCALE,
    PENCIL_ANGLES,
    PSH_TOLERANCE,
    TERM_EXTENSION,
    TERM_LOG_SUP,
    TERM_Y_BRACKET,
    TERM_Y_NORM,
)
from .exceptions import FupLabRangeError
from .jets import frobenius
from .models import ComplexPoint, ConstantScan, HermitianForm, PshCertificate, SampleSpec
from .quadrature import adaptive_rule, integrate
from .sampling import halton_points, sphere_directions
from .weights import RADIAL_OMEGA_ZERO, eval_weight, omega_zero

_LOGGER = logging.getLogger("fuplab")

# The second-derivative column of a finite-difference rule is held to this multiple of the value tolerance.
_FD_COLUMN_SLACK = 1e3

Line = Tuple[np.ndarray, np.ndarray]


class Term(NamedTuple):
    """coefficient * one summand of a plurisubharmonic candidate u."""

    kind: str
    coefficient: float = 1.0
    weight: Any = None


def as_point(z) -> ComplexPoint:
    if isinstance(z, ComplexPoint):
        return z
    z = np.asarray(z)
    return ComplexPoint(np.real(z).astype(float), np.imag(z).astype(float))


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if not norm:
        raise FupLabRangeError("a direction must be nonzero")
    return v / norm


def _line(line) -> Line:
    x0, direction = line
    return np.asarray(x0, dtype=float), _unit(direction)


def _pieces(w) -> List[Any]:
    return list(w.all_pieces) if hasattr(w, "all_pieces") else [w]


def _chord(w, x0: np.ndarray, direction: np.ndarray) -> List[Tuple[float, float]]:
    """Merged parameter intervals where x0 + s * direction meets a piece support."""

    b = float(np.dot(x0, direction))
    c2 = max(float(np.dot(x0, x0)) - b * b, 0.0)
    intervals = []
    for piece in _pieces(w):
        lo, hi = piece.support
        if hi * hi <= c2:
            continue
        outer = math.sqrt(hi * hi - c2) if math.isfinite(hi) else math.inf
        if lo * lo > c2:
            inner = math.sqrt(lo * lo - c2)
            intervals += [(-b - outer, -b - inner), (-b + inner, -b + outer)]
        else:
            intervals.append((-b - outer, -b + outer))

    merged: List[Tuple[float, float]] = []
    for a, e in sorted(intervals):
        if merged and a <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], e))
        else:
            merged.append((a, e))
    return merged


def _require_bounded(w) -> None:
    if not all(math.isfinite(piece.support[1]) for piece in _pieces(w)):
        raise FupLabRangeError("line integrals of derivatives need a weight with bounded support")


def _tail_amplitude(w) -> float:
    total = 0.0
    for piece in _pieces(w):
        if math.isfinite(piece.support[1]):
            continue
        if getattr(piece, "profile", None) != RADIAL_OMEGA_ZERO:
            raise FupLabRangeError(f"no extension tail for an unbounded {getattr(piece, 'profile', piece)} piece")
        total += piece.amplitude
    return total


def _graded_edges(a: float, b: float) -> np.ndarray:
    """a, b and the points 0, +-ratio^j (j >= 0) between them."""

    top = max(abs(a), abs(b), 1.0)
    marks = GRADING_RATIO ** np.arange(int(math.ceil(math.log(top, GRADING_RATIO))) + 1)
    inner = np.concatenate([-marks, [0.0], marks])
    inner = np.sort(inner[(inner > a) & (inner < b)])
    return np.concatenate([[a], inner, [b]])


class ExtensionRule(NamedTuple):
    """Nodes t and weights for the integral of w(x + t y) / (pi (1 + t^2)), chosen at one point.

    `tail` multiplies |y| and stands for the unbounded ends past the reach. Applying
    the same rule at nearby points gives an extension that is smooth in z, which is
    what finite-difference stencils need.
    """

    t: np.ndarray
    weights: np.ndarray
    tail: float

    def apply(self, w, z: ComplexPoint) -> float:
        value = self.tail * z.y_norm
        if self.t.size:
            points = z.x[None, :] + self.t[:, None] * z.y[None, :]
            value += float(self.weights @ w.jet(points, 0)[0])
        return value


def extension_rule(w, z, tolerance: float = EXTENSION_TOLERANCE, order: int = 0) -> ExtensionRule:
    """Graded Gauss rule for Ew at z; order=2 also resolves the second derivatives along the line."""

    z = as_point(z)
    r = z.y_norm
    if not r:
        raise FupLabRangeError("the extension rule needs y != 0")
    direction = z.y / r
    reach = EXTENSION_TAIL_REACH / r
    tail_amplitude = _tail_amplitude(w)

    segments = []
    tail = 0.0
    for lo, hi in _chord(w, z.x, direction):
        a, b = lo / r, hi / r
        for end in (a, b):
            if not math.isfinite(end):
                tail -= tail_amplitude / (np.pi * math.log(EXTENSION_TAIL_REACH))
        a, b = max(a, -reach), min(b, reach)
        edges = _graded_edges(a, b)
        segments += list(zip(edges[:-1], edges[1:]))
    share = tolerance / max(len(segments), 1)

    def integrand(t):
        kernel = 1.0 / (np.pi * (1 + t ** 2))
        jet = w.jet(z.x[None, :] + t[:, None] * z.y[None, :], order)
        if order < 2:
            return jet[0] * kernel
        curvature = frobenius(jet[2]) * (t * r) ** 2 / _FD_COLUMN_SLACK
        return np.column_stack([jet[0], curvature]) * kernel[:, None]

    nodes, weights = [np.zeros(0)], [np.zeros(0)]
    for a, b in segments:
        if b <= a:
            continue
        _, (t, wt) = adaptive_rule(integrand, a, b, share)
        nodes.append(t)
        weights.append(wt / (np.pi * (1 + t ** 2)))
    return ExtensionRule(np.concatenate(nodes), np.concatenate(weights), tail)


def poisson_extend(w, z, tolerance: float = EXTENSION_TOLERANCE) -> float:
    """Ew(x + iy); equal to w(x) on the real locus."""

    z = as_point(z)
    if not z.y_norm:
        return float(eval_weight(w, z.x))
    return extension_rule(w, z, tolerance).apply(w, z)


def omega_zero_extension(z, scale: float = OMEGA_ZERO_SCALE) -> float:
    """u_0 = scale * E(omega_0) + |y| / 4."""

    z = as_point(z)
    return scale * poisson_extend(omega_zero(len(z.x)), z) + z.y_norm / 4


def _slope_along(w, x0: np.ndarray, direction: np.ndarray, t: np.ndarray) -> np.ndarray:
    flat = np.ravel(t)
    points = x0[None, :] + flat[:, None] * direction[None, :]
    return (w.jet(points, 1)[1] @ direction).reshape(np.shape(t))


def hilbert_restriction(w, line, t0: float = 0.0, tolerance: float = HILBERT_TOLERANCE) -> float:
    """H[f](t0) for f the derivative of s -> w(x0 + s direction), by symmetric pairing around t0."""

    x0, direction = _line(line)
    _require_bounded(w)
    chord = _chord(w, x0, direction)
    if not chord:
        return 0.0
    reach = max(abs(chord[0][0] - t0), abs(chord[-1][1] - t0))

    def integrand(t):
        return (_slope_along(w, x0, direction, t0 - t) - _slope_along(w, x0, direction, t0 + t)) / (np.pi * t)

    value, _ = integrate(integrand, 0.0, reach, tolerance)
    return float(value)


def hilbert_sup(w, line, samples: int = HILBERT_T0_SAMPLES, tolerance: float = HILBERT_TOLERANCE) -> float:
    """max |H[f](t0)| over `samples` equally spaced t0 across the chord of the line."""

    x0, direction = _line(line)
    _require_bounded(w)
    chord = _chord(w, x0, direction)
    if not chord:
        return 0.0
    lo, hi = chord[0][0], chord[-1][1]
    t0 = np.linspace(lo, hi, samples)

    def integrand(t):
        minus = _slope_along(w, x0, direction, t0[None, :] - t[:, None])
        plus = _slope_along(w, x0, direction, t0[None, :] + t[:, None])
        return (minus - plus) / (np.pi * t[:, None])

    values, _ = integrate(integrand, 0.0, hi - lo, tolerance)
    return float(np.max(np.abs(values)))


def line_hessian_integral(w, x0, direction, tolerance: float = LINE_TOLERANCE) -> np.ndarray:
    """Integral over s of D^2 w(x0 + s direction), without the 1/pi."""

    x0, direction = _line((x0, direction))
    _require_bounded(w)
    dim = len(x0)
    total = np.zeros((dim, dim))
    for a, b in _chord(w, x0, direction):
        value, _ = integrate(lambda s: w.jet(x0[None, :] + s[:, None] * direction[None, :], 2)[2], a, b, tolerance)
        total += value
    return total


def second_deriv_line_integral(w, x0, direction, v, tolerance: float = LINE_TOLERANCE) -> float:
    direction, v = _unit(direction), _unit(v)
    if abs(float(np.dot(direction, v))) > 1e-12:
        raise FupLabRangeError("v must be orthogonal to the line direction")
    return float(v @ line_hessian_integral(w, x0, direction, tolerance) @ v)


def _check_log_sup(z: ComplexPoint) -> None:
    if np.any(z.z == 0):
        raise FupLabRangeError("log|z|_inf is only sampled off the coordinate hyperplanes")


def _term_hessian(term: Term, z: ComplexPoint, tolerance: float) -> np.ndarray:
    dim = len(z.x)
    r = z.y_norm
    if term.kind in (TERM_EXTENSION, TERM_Y_NORM):
        if not r:
            raise FupLabRangeError(f"the {term.kind} term is singular on the real locus")
        direction = z.y / r
        P = np.eye(dim) - np.outer(direction, direction)
        if term.kind == TERM_Y_NORM:
            return P / (4 * r)
        A = line_hessian_integral(term.weight, z.x, direction, tolerance) / np.pi
        return P @ A @ P / (4 * r)
    if term.kind == TERM_Y_BRACKET:
        return ((1 + r * r) * np.eye(dim) - np.outer(z.y, z.y)) / (4 * (1 + r * r) ** 1.5)
    if term.kind == TERM_LOG_SUP:
        _check_log_sup(z)
        return np.zeros((dim, dim))
    raise FupLabRangeError(f"unknown term {term.kind}")


def complex_hessian(u_spec: Sequence[Term], z, tolerance: float = LINE_TOLERANCE) -> HermitianForm:
    """Closed-form matrix of d^2 u / dz_j d conj(z_k) for u the sum of the terms."""

    z = as_point(z)
    dim = len(z.x)
    total = np.zeros((dim, dim), dtype=complex)
    for term in u_spec:
        if term.coefficient:
            total += term.coefficient * _term_hessian(term, z, tolerance)
    return HermitianForm(total)


def _term_value(term: Term, z: ComplexPoint, rule: Optional[ExtensionRule], tolerance: float) -> float:
    r = z.y_norm
    if term.kind == TERM_EXTENSION:
        return rule.apply(term.weight, z) if rule is not None else poisson_extend(term.weight, z, tolerance)
    if term.kind == TERM_Y_NORM:
        return r
    if term.kind == TERM_Y_BRACKET:
        return math.sqrt(1 + r * r) - 1
    if term.kind == TERM_LOG_SUP:
        _check_log_sup(z)
        return math.log(z.sup_norm)
    raise FupLabRangeError(f"unknown term {term.kind}")


def evaluate_u(u_spec: Sequence[Term], z, tolerance: float = EXTENSION_TOLERANCE) -> float:
    z = as_point(z)
    return sum(term.coefficient * _term_value(term, z, None, tolerance) for term in u_spec if term.coefficient)


def hessian_finite_difference(u_spec: Sequence[Term], z, step: Optional[float] = None,
                              tolerance: float = EXTENSION_TOLERANCE) -> HermitianForm:
    """Central second differences in the 2d real coordinates, assembled as
    H_jk = (u_xjxk + u_yjyk) / 4 + i (u_xjyk - u_yjxk) / 4.

    Extension terms are evaluated with one rule frozen at z.
    """

    z = as_point(z)
    dim = len(z.x)
    h = step if step is not None else FD_RELATIVE_STEP * max(1.0, z.norm)
    rules: Dict[int, ExtensionRule] = {
        i: extension_rule(term.weight, z, tolerance, order=2)
        for i, term in enumerate(u_spec)
        if term.kind == TERM_EXTENSION and term.coefficient
    }

    def u(q: np.ndarray) -> float:
        point = ComplexPoint(q[:dim], q[dim:])
        return sum(
            term.coefficient * _term_value(term, point, rules.get(i), tolerance)
            for i, term in enumerate(u_spec)
            if term.coefficient
        )

    q0 = np.concatenate([z.x, z.y])
    steps = np.eye(2 * dim) * h
    center = u(q0)
    D = np.zeros((2 * dim, 2 * dim))
    for p in range(2 * dim):
        D[p, p] = (u(q0 + steps[p]) - 2 * center + u(q0 - steps[p])) / h ** 2
        for q in range(p + 1, 2 * dim):
            D[p, q] = D[q, p] = (
                u(q0 + steps[p] + steps[q]) - u(q0 + steps[p] - steps[q])
                - u(q0 - steps[p] + steps[q]) + u(q0 - steps[p] - steps[q])
            ) / (4 * h ** 2)

    xx, yy = D[:dim, :dim], D[dim:, dim:]
    xy, yx = D[:dim, dim:], D[dim:, :dim]
    return HermitianForm((xx + yy) / 4 + 1j * (xy - yx) / 4)


def _shells(w) -> List[int]:
    return list(w.shells) if hasattr(w, "shells") else list(w.base.shells)


def _sample_radius(w, spec: SampleSpec) -> float:
    if spec.radius is not None:
        return float(spec.radius)
    top = w.support_radius
    return float(top) if math.isfinite(top) and top > 0 else 1.0


def _perpendicular(v: np.ndarray) -> Optional[np.ndarray]:
    if len(v) == 1:
        return None
    if len(v) == 2:
        return np.array([-v[1], v[0]])
    axis = np.eye(len(v))[int(np.argmin(np.abs(v)))]
    return _unit(np.cross(v, axis))


def sample_points(w, spec: SampleSpec = SampleSpec()) -> List[ComplexPoint]:
    """Halton points with |x| <= R and log-uniform |y| in [y_min, y_max], then the adversarial points.

    Adversarial points sit on the shell boundaries 2^k, 2^(k+1), 2^(k+2) with y
    parallel and perpendicular to x, and on the lines through the origin.
    """

    dim = w.dim
    radius = _sample_radius(w, spec)
    raw = halton_points(2 * dim + 1, 4 * spec.count + 16, spec.seed)
    raw = np.clip(raw, 1e-12, 1 - 1e-12)
    x = radius * (2 * raw[:, :dim] - 1)
    inside = np.linalg.norm(x, axis=1) <= radius
    gauss = stats.norm.ppf(raw[:, dim:2 * dim])
    directions = gauss / np.linalg.norm(gauss, axis=1)[:, None]
    lengths = spec.y_min * (spec.y_max / spec.y_min) ** raw[:, -1]
    y = directions * lengths[:, None]
    points = [ComplexPoint(x[i], y[i]) for i in np.flatnonzero(inside)[:spec.count]]

    if spec.adversarial:
        for k in _shells(w):
            for v in sphere_directions(dim, 4):
                for scale in (2.0 ** k, 2.0 ** (k + 1), 2.0 ** (k + 2)):
                    for size in (1e-2, 1.0):
                        points.append(ComplexPoint(scale * v, size * v))
                        normal = _perpendicular(v)
                        if normal is not None:
                            points.append(ComplexPoint(scale * v, size * normal))
        for v in sphere_directions(dim, 8, antipodal=True):
            for size in (0.1, 1.0, 10.0):
                points.append(ComplexPoint(np.zeros(dim), size * v))

    points += [as_point(z) for z in spec.extra]
    return points


def _sample_lines(points: Iterable[ComplexPoint]) -> List[Line]:
    return [(z.x, z.y / z.y_norm) for z in points if z.y_norm]


def _random_lines(dim: int, radius: float, count: int, seed: int) -> List[Line]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        x = rng.standard_normal(dim)
        x *= radius * rng.uniform() ** (1 / dim) / np.linalg.norm(x)
        out.append((x, _unit(rng.standard_normal(dim))))
    return out


def scan_constants(w, spec: SampleSpec = SampleSpec()) -> ConstantScan:
    """C1 = max Hilbert sup over the certificate's lines plus `extra_lines` random lines;
    C2 = max(0, -min over lines of the smallest transverse eigenvalue of A).
    """

    lines = _sample_lines(sample_points(w, spec))
    hilbert_lines = lines[:spec.hilbert_lines] + _random_lines(
        w.dim, _sample_radius(w, spec), spec.extra_lines, spec.seed
    )
    C1 = max((hilbert_sup(w, line) for line in hilbert_lines), default=0.0)

    lows, highs = [], []
    for x0, direction in lines:
        Q = linalg.null_space(direction[None, :])
        if not Q.shape[1]:
            continue
        A = line_hessian_integral(w, x0, direction) / np.pi
        eig = linalg.eigvalsh(Q.T @ A @ Q)
        lows.append(float(eig[0]))
        highs.append(float(eig[-1]))
    line_min = min(lows, default=0.0)
    line_max = max(highs, default=0.0)
    C2 = max(0.0, -line_min)
    _LOGGER.info("Constants over %s lines: C1=%.6g C2=%.6g", len(lines), C1, C2)
    return ConstantScan(C1, C2, line_min, line_max, len(lines))


def psh_certificate(w, C: float, spec: SampleSpec = SampleSpec(),
                    tolerance: float = PSH_TOLERANCE) -> PshCertificate:
    """Smallest eigenvalue of the complex Hessian of Ew + C|y| at the sample points off the real locus,
    with C - max Hilbert sup over the sample lines as the real-locus margin.
    """

    if C < 0:
        raise FupLabRangeError(f"C must be nonnegative, got {C}")
    points = sample_points(w, spec)
    u_spec = [Term(TERM_EXTENSION, 1.0, w), Term(TERM_Y_NORM, C)]
    kept, mins = [], []
    for z in points:
        if not z.y_norm:
            continue
        kept.append(z)
        mins.append(complex_hessian(u_spec, z).min_eig())
    global_min = min(mins, default=0.0)

    lines = _sample_lines(points)[:spec.hilbert_lines]
    margin = C - max((hilbert_sup(w, line) for line in lines), default=0.0)
    witness = kept[int(np.argmin(mins))] if global_min < -tolerance else None
    if witness is not None:
        _LOGGER.info("Negative eigenvalue %.3g at x=%s y=%s", global_min, witness.x, witness.y)
    return PshCertificate(kept, mins, global_min, C, tolerance, margin, witness)


def pencil_bound(w, point, angles: int = PENCIL_ANGLES) -> float:
    """max over a pencil of lines through the point of |integral of <D^2 w v, v>| / pi, in the plane."""

    if w.dim != 2:
        raise FupLabRangeError("the pencil bound is planar")
    best = 0.0
    for theta in np.pi * np.arange(angles) / angles:
        direction = np.array([math.cos(theta), math.sin(theta)])
        normal = np.array([-direction[1], direction[0]])
        best = max(best, abs(second_deriv_line_integral(w, point, direction, normal)) / np.pi)
    return best


def shell_hilbert_sum(mw, line) -> float:
    """Sum over shells of |H[(w_k restricted to the line)'](0)| for the modified pieces w_k."""

    return sum(abs(hilbert_restriction(mw.modified_piece(k), line)) for k in mw.base.shells)


def phi_kappa(z, w, rho: float, dim: int, C: float = 0.0) -> Tuple[float, float]:
    """phi = 2u + 20d log|z|_inf + rho u_0 + rho/2 (<y> - 1) with u = Ew + C|y|, and kappa = rho/8 <y>^-3."""

    z = as_point(z)
    if rho <= 0:
        raise FupLabRangeError(f"rho must be positive, got {rho}")
    if len(z.x) != dim:
        raise FupLabRangeError(f"point of dimension {len(z.x)} for d={dim}")
    if not z.sup_norm:
        raise FupLabRangeError("phi is -inf at the origin")
    r = z.y_norm
    bracket = math.sqrt(1 + r * r)
    u = poisson_extend(w, z) + C * r
    phi = (
        2 * u + LOG_SUP_FACTOR * dim * math.log(z.sup_norm)
        + rho * omega_zero_extension(z) + rho / 2 * (bracket - 1)
    )
    return phi, rho / 8 * bracket ** -3
