"""Polynomial smoothsteps, lattice bumps and radial shell profiles."""

import functools
import math
from fractions import Fraction
from typing import List, Tuple

import numpy as np
from numpy.polynomial import Polynomial
from scipy.special import comb

from .const import MAX_DERIVATIVE, OMEGA_ZERO_INNER, OMEGA_ZERO_OUTER, SMOOTHSTEP_ORDER
from .exceptions import FupLabRangeError


@functools.lru_cache(maxsize=None)
def smoothstep_coefficients(order: int = SMOOTHSTEP_ORDER) -> Tuple[Fraction, ...]:
    """Exact monomial coefficients of the odd-degree smoothstep.

    The polynomial of degree 2n + 1 rises from 0 to 1 on [0, 1] with its first n
    derivatives vanishing at both ends.
    """

    if order % 2 == 0 or order < 2 * MAX_DERIVATIVE + 1:
        raise FupLabRangeError(
            f"smoothstep order must be odd and at least {2 * MAX_DERIVATIVE + 1}, got {order}"
        )
    n = (order - 1) // 2
    coefficients = [Fraction(0)] * (order + 1)
    for k in range(n + 1):
        value = int(comb(n + k, k, exact=True)) * int(comb(order, n - k, exact=True))
        coefficients[n + 1 + k] = Fraction((-1) ** k * value)
    return tuple(coefficients)


class BumpProfile:
    """Smoothstep S and the lattice bump phi(t) = S(t + 1) - S(t).

    Translates of phi by the integers sum to one on the whole line.
    """

    def __init__(self, order: int = SMOOTHSTEP_ORDER):
        self.order = order
        self.coefficients = smoothstep_coefficients(order)
        base = Polynomial([float(c) for c in self.coefficients])
        self._polys = [base.deriv(a) if a else base for a in range(MAX_DERIVATIVE + 1)]

    def __repr__(self) -> str:
        return f"BumpProfile(order={self.order})"

    def step(self, t, a: int = 0) -> np.ndarray:
        """a-th derivative of S."""

        t = np.asarray(t, dtype=float)
        inside = self._polys[a](np.clip(t, 0.0, 1.0))
        outside = 1.0 if a == 0 else 0.0
        return np.where(t <= 0, 0.0, np.where(t >= 1, outside, inside))

    def bump(self, t, a: int = 0) -> np.ndarray:
        """a-th derivative of phi, supported on [-1, 1]."""

        t = np.asarray(t, dtype=float)
        return self.step(t + 1, a) - self.step(t, a)

    def exact_step(self, t: Fraction) -> Fraction:
        if t <= 0:
            return Fraction(0)
        if t >= 1:
            return Fraction(1)
        return sum((c * t ** i for i, c in enumerate(self.coefficients)), Fraction(0))

    def exact_partition(self, t: Fraction) -> Fraction:
        """Sum over n of phi(t - n) in rational arithmetic."""

        low = math.floor(t) - 2
        return sum((self.exact_step(t - n + 1) - self.exact_step(t - n) for n in range(low, low + 5)), Fraction(0))

    @functools.lru_cache(maxsize=None)
    def derivative_sup(self, a: int) -> float:
        """sup over t of |phi^(a)(t)|, read off a fine grid."""

        t = np.linspace(-1.0, 1.0, 20001)
        return float(np.max(np.abs(self.bump(t, a))))


DEFAULT_PROFILE = BumpProfile()


def radial_jets(values: List[np.ndarray]) -> np.ndarray:
    """Stack g, g', g'', g''' into a (4, n) array."""

    return np.stack([np.asarray(v, dtype=float) for v in values])


def rising_jets(r, start: float, width: float, profile: BumpProfile = DEFAULT_PROFILE) -> np.ndarray:
    """Jets of r -> S((r - start) / width)."""

    t = (np.asarray(r, dtype=float) - start) / width
    return radial_jets([profile.step(t, a) / width ** a for a in range(MAX_DERIVATIVE + 1)])


def shell_jets(k: int, r, profile: BumpProfile = DEFAULT_PROFILE) -> np.ndarray:
    """Jets of the dyadic shell function psi_k.

    sigma_k(r) = S(r / 2^k - 1); psi_0 = 1 - sigma_1 and psi_k = sigma_k - sigma_{k+1},
    so psi_k lives on [2^k, 2^(k+2)] and the psi_k sum to one.
    """

    if k < 0:
        raise FupLabRangeError(f"shell index must be nonnegative, got {k}")
    upper = rising_jets(r, 2.0 ** (k + 1), 2.0 ** (k + 1), profile)
    if k == 0:
        lower = np.zeros_like(upper)
        lower[0] = 1.0
    else:
        lower = rising_jets(r, 2.0 ** k, 2.0 ** k, profile)
    return lower - upper


def shell_support(k: int) -> Tuple[float, float]:
    return (0.0 if k == 0 else 2.0 ** k, 2.0 ** (k + 2))


def multiply_jets(f: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Leibniz rule for one-variable jets."""

    out = np.zeros_like(f)
    for n in range(f.shape[0]):
        for j in range(n + 1):
            out[n] += comb(n, j) * f[j] * g[n - j]
    return out


def omega_zero_jets(r) -> np.ndarray:
    """Jets of -S((r - 5)/5) r / log(2 + r)^2, the logarithmically damped background weight."""

    r = np.asarray(r, dtype=float)
    cut = rising_jets(r, OMEGA_ZERO_INNER, OMEGA_ZERO_OUTER - OMEGA_ZERO_INNER)
    L = np.log(2.0 + r)
    u = 1.0 / (2.0 + r)
    # q = r L^-2 and its derivatives in closed form
    q0 = r / L ** 2
    q1 = 1.0 / L ** 2 - 2.0 * r * u / L ** 3
    q2 = -4.0 * u / L ** 3 + 2.0 * r * u ** 2 / L ** 3 + 6.0 * r * u ** 2 / L ** 4
    q3 = (
        6.0 * u ** 2 / L ** 3 + 18.0 * u ** 2 / L ** 4
        - 4.0 * r * u ** 3 / L ** 3 - 18.0 * r * u ** 3 / L ** 4 - 24.0 * r * u ** 3 / L ** 5
    )
    return -multiply_jets(cut, radial_jets([q0, q1, q2, q3]))
