"""Independent reference implementations used to pin expected test values.

These deliberately avoid the code paths they check: the transport oracle is
an exact linear program (scipy/HiGHS), kernels are evaluated straight from
the formula, and gradients come from central finite differences of the
recomputed scalar loss.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import linprog


def lp_transport_cost(mu: np.ndarray, nu: np.ndarray, cost: np.ndarray) -> float:
    """Exact optimal transport cost via the standard LP formulation."""
    n = len(mu)
    c = cost.reshape(-1)
    rows = []
    rhs = []
    for i in range(n):
        a = np.zeros((n, n))
        a[i, :] = 1.0
        rows.append(a.reshape(-1))
        rhs.append(mu[i])
    for j in range(n):
        a = np.zeros((n, n))
        a[:, j] = 1.0
        rows.append(a.reshape(-1))
        rhs.append(nu[j])
    res = linprog(c, A_eq=np.array(rows), b_eq=np.array(rhs), bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"LP oracle failed: {res.message}")
    return float(res.fun)


def gaussian_kernel_value(dx: float, dy: float, sigma: float) -> float:
    """Unnormalized isotropic Gaussian evaluated straight from the formula."""
    return math.exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma))


def central_difference(f, x: np.ndarray, h: float, indices=None) -> np.ndarray:
    """Central finite differences of scalar f at x.

    indices: optional flat coordinate subset; defaults to every coordinate.
    Returns a flat array of derivatives for the chosen coordinates.
    """
    flat = x.reshape(-1).astype(np.float64)
    if indices is None:
        indices = range(flat.size)
    grads = []
    for k in indices:
        xp = flat.copy()
        xm = flat.copy()
        xp[k] += h
        xm[k] -= h
        grads.append((f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2.0 * h))
    return np.asarray(grads)


def relative_errors(analytic: np.ndarray, reference: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    r = np.asarray(reference, dtype=np.float64).reshape(-1)
    return np.abs(a - r) / np.maximum(np.abs(r), floor)
