"""Orthonormal Hermite polynomial basis for the propensity link expansion.

The basis functions are probabilists' Hermite polynomials normalized by
1/sqrt(m!), orthonormal (up to the constant sqrt(2*pi)) under the weight
exp(-w^2/2) on the whole real line.  Everything here is a pure function;
the only cached state is the Gauss-Hermite rule table, which is safe for
concurrent reads after first use.
"""

from __future__ import annotations

import functools

import numpy as np

__all__ = ["eval_basis", "eval_basis_deriv", "gram_check", "gauss_hermite_rule"]

MAX_GRAM_ORDER = 40


def _check_order(order_count) -> int:
    k = int(order_count)
    if k != order_count or k < 1:
        raise ValueError(f"order_count must be a positive integer, got {order_count!r}")
    return k


def _check_points(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if not np.all(np.isfinite(w)):
        raise ValueError("basis evaluation requires finite query points")
    return w


def eval_basis(w, order_count) -> np.ndarray:
    """Evaluate the normalized Hermite basis of degrees 0..k-1 at ``w``.

    Entry ``j`` (0-based) equals ``He_j(w) / sqrt(j!)``.  The values are
    computed with the normalized three-term recurrence

        h_{m+1}(w) = (w * h_m(w) - sqrt(m) * h_{m-1}(w)) / sqrt(m + 1),

    which never forms a raw factorial and is stable for hundreds of terms.

    Parameters
    ----------
    w : float or array_like
        Finite query point(s).
    order_count : int
        Number of basis functions ``k >= 1``.

    Returns
    -------
    ndarray of shape ``w.shape + (k,)``; for scalar ``w`` a 1-d vector.
    """
    k = _check_order(order_count)
    w = _check_points(w)
    out = np.empty(w.shape + (k,), dtype=float)
    out[..., 0] = 1.0
    if k > 1:
        out[..., 1] = w
    for m in range(1, k - 1):
        out[..., m + 1] = (w * out[..., m] - np.sqrt(m) * out[..., m - 1]) / np.sqrt(m + 1)
    return out


def eval_basis_deriv(w, order_count) -> np.ndarray:
    """First derivatives of the normalized Hermite basis at ``w``.

    Uses the exact identity ``h_m'(w) = sqrt(m) * h_{m-1}(w)``; the degree-0
    entry is identically zero.
    """
    k = _check_order(order_count)
    w = _check_points(w)
    vals = eval_basis(w, k)
    out = np.zeros_like(vals)
    if k > 1:
        out[..., 1:] = np.sqrt(np.arange(1, k)) * vals[..., :-1]
    return out


@functools.lru_cache(maxsize=32)
def gauss_hermite_rule(node_count: int):
    """Gauss-Hermite nodes and weights (weight exp(-x^2)), cached per count."""
    n = int(node_count)
    if n < 1:
        raise ValueError("node_count must be a positive integer")
    nodes, weights = np.polynomial.hermite.hermgauss(n)
    nodes.flags.writeable = False
    weights.flags.writeable = False
    return nodes, weights


def gram_check(m: int, n: int, quadrature_nodes: int) -> float:
    """Quadrature value of the Gram integral of basis degrees ``m`` and ``n``.

    Approximates ``int h_m(w) h_n(w) exp(-w^2/2) dw`` by Gauss-Hermite
    quadrature after the substitution ``w = sqrt(2) * x``; the exact value
    is ``sqrt(2*pi)`` when ``m == n`` and zero otherwise.
    """
    m, n = int(m), int(n)
    if m < 0 or n < 0 or max(m, n) > MAX_GRAM_ORDER:
        raise ValueError(f"orders must lie in [0, {MAX_GRAM_ORDER}], got ({m}, {n})")
    required = 2 * max(m, n) + 10
    if quadrature_nodes < required:
        raise ValueError(
            f"need at least {required} quadrature nodes for orders ({m}, {n}), "
            f"got {quadrature_nodes}"
        )
    x, wq = gauss_hermite_rule(quadrature_nodes)
    h = eval_basis(np.sqrt(2.0) * x, max(m, n) + 1)
    return float(np.sqrt(2.0) * np.sum(wq * h[:, m] * h[:, n]))
