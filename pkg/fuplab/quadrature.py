"""Composite Gauss-Legendre rules with panel doubling."""

import functools
from typing import Callable, Tuple

import numpy as np
from scipy.special import roots_legendre

from .const import CONFIRMING_PASSES, GAUSS_NODES, QUAD_MAX_PANELS, QUAD_START_PANELS
from .exceptions import FupLabConvergenceError

Rule = Tuple[np.ndarray, np.ndarray]


@functools.lru_cache(maxsize=None)
def gauss_legendre(nodes: int = GAUSS_NODES) -> Rule:
    x, w = roots_legendre(nodes)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def composite_rule(a: float, b: float, panels: int, nodes: int = GAUSS_NODES) -> Rule:
    """Nodes and weights of `panels` equal Gauss panels on [a, b]."""

    x, w = gauss_legendre(nodes)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    t = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return t, weights


def apply_rule(fun: Callable[[np.ndarray], np.ndarray], rule: Rule) -> np.ndarray:
    t, w = rule
    if not t.size:
        return np.zeros(())
    return np.tensordot(w, fun(t), axes=(0, 0))


def adaptive_rule(fun: Callable[[np.ndarray], np.ndarray], a: float, b: float, tolerance: float,
                  start: int = QUAD_START_PANELS, max_panels: int = QUAD_MAX_PANELS) -> Tuple[np.ndarray, Rule]:
    """Double the panels on [a, b] until two successive doublings both change the value by less than tolerance.

    fun maps a node array of shape (n,) to values of shape (n, ...). Returns the
    value and the rule that met the tolerance; raises FupLabConvergenceError once
    max_panels is exhausted.
    """

    panels = start
    previous = apply_rule(fun, composite_rule(a, b, panels))
    agreed, change = 0, np.inf
    while panels < max_panels:
        panels *= 2
        finer = composite_rule(a, b, panels)
        value = apply_rule(fun, finer)
        change = float(np.max(np.abs(value - previous), initial=0.0))
        agreed = agreed + 1 if change < tolerance else 0
        if agreed == CONFIRMING_PASSES:
            return value, finer
        previous = value
    raise FupLabConvergenceError(
        f"quadrature on [{a:.6g}, {b:.6g}] changed by {change:.3g} > {tolerance:.1e} at {panels} panels"
    )


def integrate(fun: Callable[[np.ndarray], np.ndarray], a: float, b: float, tolerance: float,
              start: int = QUAD_START_PANELS, max_panels: int = QUAD_MAX_PANELS) -> Tuple[np.ndarray, int]:
    """Integrate fun over [a, b]; returns the value and the panel count that met the tolerance."""

    if b <= a:
        return np.zeros(()), 0
    value, rule = adaptive_rule(fun, a, b, tolerance, start, max_panels)
    return value, len(rule[0]) // GAUSS_NODES
