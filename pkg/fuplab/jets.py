"""Derivative tensors up to order three for products and compositions.

A jet is a list [f, Df, D^2 f, D^3 f] of arrays of shapes (n,), (n, d), (n, d, d)
and (n, d, d, d), possibly truncated to a lower order.
"""

from typing import List, Sequence

import numpy as np

from .const import MAX_DERIVATIVE
from .exceptions import FupLabRangeError

Jet = List[np.ndarray]


def zero_jet(n: int, dim: int, order: int) -> Jet:
    return [np.zeros((n,) + (dim,) * a) for a in range(order + 1)]


def add_jets(f: Jet, g: Jet) -> Jet:
    return [a + b for a, b in zip(f, g)]


def scale_jet(f: Jet, factor) -> Jet:
    factor = np.asarray(factor, dtype=float)
    return [a * factor.reshape(factor.shape + (1,) * (a.ndim - factor.ndim)) for a in f]


def frobenius(tensor: np.ndarray) -> np.ndarray:
    """Pointwise Frobenius norm over the tensor axes."""

    if tensor.ndim == 1:
        return np.abs(tensor)
    return np.sqrt(np.sum(tensor.reshape(tensor.shape[0], -1) ** 2, axis=1))


def _sym3(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (
        np.einsum("nij,nk->nijk", A, b)
        + np.einsum("nik,nj->nijk", A, b)
        + np.einsum("njk,ni->nijk", A, b)
    )


def _assemble_radial(points: np.ndarray, H: Sequence[np.ndarray], order: int) -> List[np.ndarray]:
    """Tensors of f(|x|) from H_1 = f'/r and H_(m+1) = H_m' / r."""

    dim = points.shape[1]
    eye = np.eye(dim)
    x = points
    out = []
    if order >= 1:
        out.append(H[0][:, None] * x)
    if order >= 2:
        out.append(H[0][:, None, None] * eye + H[1][:, None, None] * np.einsum("ni,nj->nij", x, x))
    if order >= 3:
        dx = (
            np.einsum("ij,nk->nijk", eye, x)
            + np.einsum("ik,nj->nijk", eye, x)
            + np.einsum("jk,ni->nijk", eye, x)
        )
        out.append(H[1][:, None, None, None] * dx + H[2][:, None, None, None] * np.einsum("ni,nj,nk->nijk", x, x, x))
    if order >= 4:
        dd = (
            np.einsum("ij,kl->ijkl", eye, eye)
            + np.einsum("ik,jl->ijkl", eye, eye)
            + np.einsum("il,jk->ijkl", eye, eye)
        )
        xx = np.einsum("ni,nj->nij", x, x)
        dxx = sum(
            np.einsum(spec, eye, xx)
            for spec in ("ij,nkl->nijkl", "ik,njl->nijkl", "il,njk->nijkl",
                         "jk,nil->nijkl", "jl,nik->nijkl", "kl,nij->nijkl")
        )
        out.append(
            H[1][:, None, None, None, None] * dd
            + H[2][:, None, None, None, None] * dxx
            + H[3][:, None, None, None, None] * np.einsum("nij,nkl->nijkl", xx, xx)
        )
    return out


def _safe_radius(points: np.ndarray) -> np.ndarray:
    return np.maximum(np.linalg.norm(points, axis=1), 1e-12)


def radial_tensor_jet(points: np.ndarray, g: np.ndarray, order: int) -> Jet:
    """Jet of x -> g(|x|) from the one-variable jets g = (g, g', g'', g''') evaluated at |x|."""

    r = _safe_radius(points)
    H1 = g[1] / r
    H2 = (g[2] - H1) / r ** 2
    H3 = (g[3] - 3 * g[2] / r + 3 * g[1] / r ** 2) / r ** 3
    return [g[0]] + _assemble_radial(points, (H1, H2, H3), order)


def norm_jet(points: np.ndarray, order: int) -> Jet:
    """Jet of |x| up to order four."""

    r = _safe_radius(points)
    H = (1 / r, -1 / r ** 3, 3 / r ** 5, -15 / r ** 7)
    return [r] + _assemble_radial(points, H, order)


def multiply_tensor_jets(f: Jet, g: Jet) -> Jet:
    order = min(len(f), len(g)) - 1
    out = [f[0] * g[0]]
    if order >= 1:
        out.append(f[1] * g[0][:, None] + f[0][:, None] * g[1])
    if order >= 2:
        out.append(
            f[2] * g[0][:, None, None] + f[0][:, None, None] * g[2]
            + np.einsum("ni,nj->nij", f[1], g[1]) + np.einsum("ni,nj->nij", g[1], f[1])
        )
    if order >= 3:
        out.append(
            f[3] * g[0][:, None, None, None] + f[0][:, None, None, None] * g[3]
            + _sym3(f[2], g[1]) + _sym3(g[2], f[1])
        )
    return out


def compose_scalar(T: np.ndarray, inner: Jet) -> Jet:
    """Jet of x -> T(theta(x)) from T's one-variable derivatives at theta(x)."""

    order = len(inner) - 1
    out = [T[0]]
    if order >= 1:
        out.append(T[1][:, None] * inner[1])
    if order >= 2:
        out.append(T[2][:, None, None] * np.einsum("ni,nj->nij", inner[1], inner[1]) + T[1][:, None, None] * inner[2])
    if order >= 3:
        out.append(
            T[3][:, None, None, None] * np.einsum("ni,nj,nk->nijk", inner[1], inner[1], inner[1])
            + T[2][:, None, None, None] * _sym3(inner[2], inner[1])
            + T[1][:, None, None, None] * inner[3]
        )
    return out


def compose_vector(F: Jet, N: Jet) -> Jet:
    """Jet of x -> F(N(x)) where F is a jet in v and N = (N, DN, D^2 N, D^3 N) with DN[n, a, i] = d_i N_a."""

    order = len(F) - 1
    out = [F[0]]
    if order >= 1:
        out.append(np.einsum("na,nai->ni", F[1], N[1]))
    if order >= 2:
        out.append(
            np.einsum("nab,nai,nbj->nij", F[2], N[1], N[1]) + np.einsum("na,naij->nij", F[1], N[2])
        )
    if order >= 3:
        mixed = (
            np.einsum("nab,naij,nbk->nijk", F[2], N[2], N[1])
            + np.einsum("nab,naik,nbj->nijk", F[2], N[2], N[1])
            + np.einsum("nab,najk,nbi->nijk", F[2], N[2], N[1])
        )
        out.append(
            np.einsum("nabc,nai,nbj,nck->nijk", F[3], N[1], N[1], N[1])
            + mixed
            + np.einsum("na,naijk->nijk", F[1], N[3])
        )
    return out


def check_order(order: int) -> None:
    if not 0 <= order <= MAX_DERIVATIVE:
        raise FupLabRangeError(f"derivative order must lie in 0..{MAX_DERIVATIVE}, got {order}")
