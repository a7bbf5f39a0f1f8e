"""Discrete fractal uncertainty norms on Z_N^d."""

import csv
import json
import logging
import math
import os
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import fft, linalg

from .const import (
    DENSE_ORACLE_LIMIT,
    MIN_FIT_POINTS,
    POWER_MAX_ITERATIONS,
    POWER_SEED,
    POWER_TOLERANCE,
    RESIDUAL_TOLERANCE,
    THREADS_ENV,
)
from .exceptions import FupLabConvergenceError, FupLabFormatError, FupLabRangeError
from .gridset import gen_cantor_product
from .models import CantorSpec, FupScan, GridSet, ScanEntry

_LOGGER = logging.getLogger("fuplab")

Family = Union[CantorSpec, Callable[[int], Tuple[GridSet, GridSet]]]


def fft_workers() -> int:
    """Transform threads taken from the environment, 1 when unset."""

    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        _LOGGER.warning("Ignoring non-integer %s=%r", THREADS_ENV, os.environ.get(THREADS_ENV))
        return 1


def _check_pair(X: GridSet, Y: GridSet, N: Optional[int]) -> int:
    if not X.same_grid(Y):
        raise FupLabRangeError(f"X lives on {X.side}^{X.dim} but Y on {Y.side}^{Y.dim}")
    if N is not None and N != X.side:
        raise FupLabRangeError(f"grid side {X.side} does not match N={N}")
    return X.side


def power_iteration(X: GridSet, Y: GridSet, N: Optional[int] = None, tolerance: float = POWER_TOLERANCE,
                    max_iterations: int = POWER_MAX_ITERATIONS, seed: int = POWER_SEED,
                    workers: Optional[int] = None) -> ScanEntry:
    """Top singular value of 1_X F^-1 1_Y by power iteration on the normal operator.

    Mask indices are read as elements of Z_N; any cyclic relabelling of X or Y is a
    translation or modulation and leaves the norm unchanged.
    """

    N = _check_pair(X, Y, N)
    if not X.count or not Y.count:
        return ScanEntry(N, 0.0, 0, 0.0)

    workers = fft_workers() if workers is None else workers
    in_x = X.mask
    in_y = Y.mask

    def normal(v: np.ndarray) -> np.ndarray:
        f = fft.ifftn(v, norm="ortho", workers=workers)
        f[~in_x] = 0
        g = fft.fftn(f, norm="ortho", workers=workers)
        g[~in_y] = 0
        return g

    rng = np.random.default_rng(seed)
    v = rng.standard_normal(in_y.shape) + 1j * rng.standard_normal(in_y.shape)
    v[~in_y] = 0
    v /= np.linalg.norm(v)

    rayleigh, previous, residual = 0.0, -np.inf, np.inf
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        w = normal(v)
        rayleigh = float(np.real(np.vdot(v, w)))
        residual = float(np.linalg.norm(w - rayleigh * v))
        size = np.linalg.norm(w)
        if size == 0 or abs(rayleigh - previous) < tolerance:
            break
        previous = rayleigh
        v = w / size
    else:
        _LOGGER.warning("Power iteration on N=%s stopped after %s iterations, residual %.3g",
                        N, max_iterations, residual)

    norm = math.sqrt(max(rayleigh, 0.0))
    _LOGGER.debug("N=%s: norm %.12f after %s iterations (residual %.3g)", N, norm, iterations, residual)
    return ScanEntry(N, norm, iterations, residual)


def fup_norm(X: GridSet, Y: GridSet, N: Optional[int] = None, **kwargs) -> float:
    """Largest singular value of (restrict to X) F^-1 (restrict to Y)."""

    return power_iteration(X, Y, N, **kwargs).norm


def dft_matrix(N: int, dim: int) -> np.ndarray:
    """Unitary DFT on Z_N^dim as a dense Kronecker product."""

    one = linalg.dft(N, scale="sqrtn")
    out = np.ones((1, 1), dtype=complex)
    for _ in range(dim):
        out = np.kron(out, one)
    return out


def dense_fup_norm(X: GridSet, Y: GridSet) -> float:
    """Dense oracle for fup_norm on small grids."""

    N = _check_pair(X, Y, None)
    if N ** X.dim > DENSE_ORACLE_LIMIT:
        raise FupLabRangeError(f"dense oracle is limited to {DENSE_ORACLE_LIMIT} points, got {N ** X.dim}")
    if not X.count or not Y.count:
        return 0.0
    inverse = dft_matrix(N, X.dim).conj().T
    block = inverse[np.ix_(np.flatnonzero(X.mask.ravel()), np.flatnonzero(Y.mask.ravel()))]
    return float(linalg.svdvals(block)[0])


def trivial_bound(delta_sum: float, d: int, h: float) -> float:
    """min(1, h^((d - delta_sum)/2))."""

    if not 0 < h < 1:
        raise FupLabRangeError(f"h must lie in (0, 1), got {h}")
    return min(1.0, h ** ((d - delta_sum) / 2))


def cantor_dimension(spec: CantorSpec) -> float:
    """Sum over axes of log|digits| / log L."""

    return float(sum(math.log(len(digits)) / math.log(spec.base) for digits in spec.kept_digits))


def cantor_family(spec: CantorSpec) -> Callable[[int], Tuple[GridSet, GridSet]]:
    """X = Y = the Cantor product of depth n on the N = L^n grid."""

    def build(N: int) -> Tuple[GridSet, GridSet]:
        depth = round(math.log(N) / math.log(spec.base))
        if spec.base ** depth != N:
            raise FupLabRangeError(f"N={N} is not a power of {spec.base}")
        s = gen_cantor_product(spec._replace(depth=depth), frequency=True)
        return s, s

    return build


def gridset_family(sets: Sequence[GridSet]) -> Callable[[int], Tuple[GridSet, GridSet]]:
    """X = Y = the stored set whose grid side is N."""

    by_side = {s.side: s for s in sets}
    if len(by_side) != len(sets):
        raise FupLabRangeError(f"stored sets repeat a grid size: {sorted(s.side for s in sets)}")

    def build(N: int) -> Tuple[GridSet, GridSet]:
        try:
            s = by_side[N]
        except KeyError:
            raise FupLabRangeError(f"no stored set on the N={N} grid, have {sorted(by_side)}") from None
        return s, s

    return build


def default_fit_window(count: int) -> Tuple[int, int]:
    """Drop the smallest N when at least four entries exist."""

    return (1, count) if count > MIN_FIT_POINTS else (0, count)


def fit_power_law(N_values: Sequence[int], norms: Sequence[float],
                  window: Optional[Tuple[int, int]] = None) -> Tuple[float, float, float]:
    """Least-squares fit of log norm = log C - beta log N; returns (beta, C, max log residual)."""

    N_values = np.asarray(N_values, dtype=float)
    norms = np.asarray(norms, dtype=float)
    start, stop = default_fit_window(len(norms)) if window is None else window
    logN = np.log(N_values[start:stop])
    if len(logN) < MIN_FIT_POINTS:
        raise FupLabRangeError(f"fit window {start}:{stop} holds fewer than {MIN_FIT_POINTS} points")
    values = norms[start:stop]
    if np.any(values <= 0):
        raise FupLabRangeError("power-law fit needs positive norms")

    slope, intercept = np.polyfit(logN, np.log(values), 1)
    residual = float(np.max(np.abs(intercept + slope * logN - np.log(values))))
    return float(-slope), float(np.exp(intercept)), residual


def fup_scan(family: Family, N_list: Sequence[int], window: Optional[Tuple[int, int]] = None,
             residual_tolerance: float = RESIDUAL_TOLERANCE, **kwargs) -> FupScan:
    """fup_norm over a family of grids with a power-law fit of the decay."""

    N_list = [int(N) for N in N_list]
    if len(N_list) < MIN_FIT_POINTS:
        raise FupLabRangeError(f"a scan needs at least {MIN_FIT_POINTS} grid sizes")
    if any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise FupLabRangeError(f"grid sizes must be ascending, got {N_list}")
    build = cantor_family(family) if isinstance(family, CantorSpec) else family

    entries: List[ScanEntry] = []
    dim = 0
    for N in N_list:
        X, Y = build(N)
        dim = X.dim
        entry = power_iteration(X, Y, N, **kwargs)
        if entry.residual > residual_tolerance:
            _LOGGER.warning("Residual %.3g at N=%s exceeds %.3g", entry.residual, N, residual_tolerance)
        entries.append(entry)
        _LOGGER.info("N=%s norm=%.10f iterations=%s", N, entry.norm, entry.iterations)

    fit_window = default_fit_window(len(entries)) if window is None else tuple(window)
    beta, C, residual = fit_power_law(N_list, [e.norm for e in entries], fit_window)
    if not math.isfinite(beta):
        raise FupLabConvergenceError(f"non-finite exponent fitted from {[e.norm for e in entries]}")
    return FupScan(dim, entries, beta, C, fit_window, residual)


def _footer_path(path: str) -> str:
    return os.path.splitext(path)[0] + ".fit.json"


def write_entries_csv(entries: Sequence[ScanEntry], path: str) -> None:
    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["N", "norm", "iterations", "residual"])
        for entry in entries:
            writer.writerow([entry.N, repr(entry.norm), entry.iterations, repr(entry.residual)])


def read_entries_csv(path: str) -> List[ScanEntry]:
    try:
        with open(path, newline="") as fp:
            return [
                ScanEntry(int(row["N"]), float(row["norm"]), int(row["iterations"]), float(row["residual"]))
                for row in csv.DictReader(fp)
            ]
    except (KeyError, ValueError) as err:
        raise FupLabFormatError(f"malformed scan file {path}: {err}") from err


def write_scan_csv(scan: FupScan, path: str) -> List[str]:
    """Write the scan table and its JSON footer; returns both paths."""

    write_entries_csv(scan.entries, path)

    footer = _footer_path(path)
    with open(footer, "w") as fp:
        json.dump({
            "dim": scan.dim,
            "beta": scan.beta,
            "C_fit": scan.C_fit,
            "fit_window": list(scan.fit_window),
            "fit_residual": scan.fit_residual,
        }, fp, indent=2)
    return [path, footer]


def read_scan_csv(path: str) -> FupScan:
    """Read a scan written by write_scan_csv."""

    entries = read_entries_csv(path)
    try:
        with open(_footer_path(path)) as fp:
            footer = json.load(fp)
    except ValueError as err:
        raise FupLabFormatError(f"malformed scan file {path}: {err}") from err
    return FupScan(
        footer["dim"], entries, footer["beta"], footer["C_fit"], tuple(footer["fit_window"]), footer["fit_residual"]
    )
