"""Entropic optimal transport between density maps on a common grid.

The counting loss treats the normalized ground-truth and predicted density
maps as discrete distributions over grid cells and measures the quadratic
transport cost between them. The solver is a log-domain Sinkhorn iteration
in the measure-weighted (soft-min) form, which keeps the dual potentials
finite even at zero-mass cells; that matters because both ReLU predictions
and smoothed ground truth contain exact zeros.

The loss gradient with respect to the *unnormalized* prediction follows the
envelope convention: the converged potentials are treated as constants and
only the normalization quotient is differentiated.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class OTParams:
    """Solver knobs. eps is the entropic regularization on the [0,1]-scaled cost."""

    eps: float = 1e-2
    max_iter: int = 500
    tol: float = 1e-6


@dataclass(frozen=True)
class CostMatrix:
    """Quadratic transport cost between cell centers, scaled into [0, 1).

    cost[i][j] = ((ri-rj)^2 + (ci-cj)^2) / (h^2 + w^2) for cells flattened
    row-major; the normalization keeps one eps default usable across grid
    sizes.
    """

    cost: np.ndarray
    grid_shape: tuple[int, int]
    normalization: float

    @property
    def n(self) -> int:
        return self.cost.shape[0]


@functools.lru_cache(maxsize=32)
def build_cost_matrix(grid_shape: tuple[int, int]) -> CostMatrix:
    h, w = grid_shape
    if h < 1 or w < 1:
        raise ValueError(f"grid shape must be positive, got {grid_shape}")
    rows, cols = np.indices((h, w))
    r = rows.reshape(-1).astype(np.float64)
    c = cols.reshape(-1).astype(np.float64)
    norm = float(h * h + w * w)
    cost = ((r[:, None] - r[None, :]) ** 2 + (c[:, None] - c[None, :]) ** 2) / norm
    cost.flags.writeable = False
    return CostMatrix(cost=cost, grid_shape=(h, w), normalization=norm)


@dataclass
class OTResult:
    cost_value: float  # <plan, C>
    alpha: np.ndarray  # dual potential paired with mu
    beta: np.ndarray  # dual potential paired with nu (mean-centered)
    plan: np.ndarray
    iterations: int
    converged: bool
    marginal_err: float
    dual_value: float  # <alpha, mu> + <beta, nu>


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.exp(a - m).sum(axis=axis)) + m.squeeze(axis)


def sinkhorn(
    mu: np.ndarray,
    nu: np.ndarray,
    C: CostMatrix,
    eps: float = 1e-2,
    max_iter: int = 500,
    tol: float = 1e-6,
) -> OTResult:
    """Solve eps-regularized transport between two simplex vectors.

    Returns converged=False (never raises) when the marginal violation is
    still above tol after max_iter; callers decide what to do with that.
    """
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    nu = np.asarray(nu, dtype=np.float64).reshape(-1)
    n = C.n
    if mu.shape != (n,) or nu.shape != (n,):
        raise ValueError(f"marginals must have length {n}, got {mu.shape} and {nu.shape}")
    if np.any(mu < 0) or np.any(nu < 0):
        raise ValueError("marginals must be non-negative")
    if abs(mu.sum() - 1.0) > 1e-9 or abs(nu.sum() - 1.0) > 1e-9:
        raise ValueError(f"marginals must sum to 1 (got {mu.sum()!r}, {nu.sum()!r})")
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")

    with np.errstate(divide="ignore"):
        logmu = np.log(mu)
        lognu = np.log(nu)
    cost = C.cost
    K = -cost / eps  # exponent core, fixed across iterations
    f = np.zeros(n)
    g = np.zeros(n)
    it = 0
    err = np.inf
    converged = False
    # The marginals are only checked every few iterations: forming the plan
    # costs as much as an update, and the extra iterations are harmless.
    check_every = 4
    plan = np.exp(K + logmu[:, None] + lognu[None, :])
    for it in range(1, max_iter + 1):
        f = -eps * _logsumexp(K + (lognu + g / eps)[None, :], axis=1)
        u = logmu + f / eps
        g = -eps * _logsumexp(K + u[:, None], axis=0)
        if it % check_every == 0 or it == max_iter:
            plan = np.exp(K + u[:, None] + (lognu + g / eps)[None, :])
            err = max(
                float(np.abs(plan.sum(axis=1) - mu).max()),
                float(np.abs(plan.sum(axis=0) - nu).max()),
            )
            if err <= tol:
                converged = True
                break

    # The dual is invariant to (alpha + c, beta - c): pin the gauge by
    # centering beta so potentials (and downstream gradients) are unique.
    shift = float(g.mean())
    g = g - shift
    f = f + shift

    cost_value = float((plan * cost).sum())
    dual_value = float(f @ mu + g @ nu)
    # Weak duality with the entropy correction; equality at exact convergence.
    # Away from convergence the gap is bounded by the marginal residuals
    # paired with the potentials, hence the err-proportional slack.
    kl = float((plan * (f[:, None] + g[None, :] - cost)).sum()) / eps
    slack = n * err * (float(np.abs(f).max()) + float(np.abs(g).max())) + 1e-9
    if dual_value > cost_value + eps * max(kl, 0.0) + slack:
        raise RuntimeError(
            f"weak duality violated: dual {dual_value} > primal {cost_value} + eps*KL {eps * kl}"
        )
    return OTResult(
        cost_value=cost_value,
        alpha=f,
        beta=g,
        plan=plan,
        iterations=it,
        converged=converged,
        marginal_err=err,
        dual_value=dual_value,
    )


def ot_loss_and_grad(
    y, yhat, C: CostMatrix | None = None, eps: float = 1e-2, max_iter: int = 500, tol: float = 1e-6
) -> tuple[float, np.ndarray, OTResult]:
    """Transport loss between normalized maps and its gradient in yhat.

    loss = <alpha, y/||y||_1> + <beta, yhat/||yhat||_1>; the gradient with
    respect to the unnormalized yhat entries applies the quotient rule to
    the normalization while holding the potentials fixed:

        d loss / d yhat_k = beta_k / m - <beta, yhat> / m^2,   m = ||yhat||_1.

    Returns (loss, grad, solver diagnostics). Raises on zero-mass inputs;
    callers gate those images out before calling.
    """
    y = np.asarray(getattr(y, "grid", y), dtype=np.float64)
    yhat = np.asarray(getattr(yhat, "grid", yhat), dtype=np.float64)
    if y.shape != yhat.shape:
        raise ValueError(f"shape mismatch: y {y.shape} vs yhat {yhat.shape}")
    if C is None:
        if y.ndim != 2:
            raise ValueError("grid-shaped inputs required when no cost matrix is given")
        C = build_cost_matrix(y.shape)
    mass_y = float(y.sum())
    mass_hat = float(yhat.sum())
    if mass_y <= 0.0 or mass_hat <= 0.0:
        raise ValueError(f"zero-mass input (||y||={mass_y}, ||yhat||={mass_hat})")
    mu = (y / mass_y).reshape(-1)
    nu = (yhat / mass_hat).reshape(-1)
    res = sinkhorn(mu, nu, C, eps=eps, max_iter=max_iter, tol=tol)
    loss = res.dual_value
    grad = (res.beta - res.beta @ nu) / mass_hat
    return loss, grad.reshape(yhat.shape), res
