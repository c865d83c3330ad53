"""Variational E-step machinery for robust likelihood weighting.

Each training sample carries a probability ``pi_i`` of being clean.  The
objective couples the weighted loss ``sum_i pi_i * l_i`` with the KL
divergence of the per-sample Bernoulli weights from a shared Bernoulli
prior whose mean is optimized out in closed form (the optimal corruption
level is ``1 - mean(pi)``).  Minimizing over the weights at fixed losses
reduces to a one-dimensional fixed point in the mean weight, solved here
by damped-free sweeps of the stationarity map.

All functions are pure and operate on plain numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, logit, xlogy

# Weights are kept inside the open unit interval so logs stay finite.
# The lower clip is the smallest positive normal double: underflow of the
# logistic for extreme losses is reported as "0-adjacent", never exact 0.
_PI_MIN = np.finfo(float).tiny
_PI_MAX = np.nextafter(1.0, 0.0)

# Mean-weight band outside of which the solve is declared degenerate.
DEGENERACY_MARGIN = 1e-6

__all__ = [
    "DEGENERACY_MARGIN",
    "FixedPointConfig",
    "EStepResult",
    "EStepConvergenceError",
    "DualSolverError",
    "negative_elbo",
    "kl_bernoulli",
    "estimate_epsilon",
    "estep_sweep",
    "fixed_point_estep",
    "capped_estep",
    "stationarity_residual",
    "select_tau",
    "truncate",
    "constrained_estep",
]


@dataclass(frozen=True)
class FixedPointConfig:
    """Iteration budget and tolerances for the fixed-point E-step.

    ``tolerance`` is the sup-norm change of the weight vector between
    consecutive sweeps; ``init_mean`` seeds the iteration when no warm
    start is supplied.  The all-ones vector is itself a fixed point of the
    sweep map, so the default start is uniform at ``init_mean``.
    """

    max_iterations: int = 1000
    tolerance: float = 1e-10
    init_mean: float = 0.9

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if not 0.0 < self.init_mean < 1.0:
            raise ValueError("init_mean must lie in (0, 1)")


@dataclass
class EStepResult:
    """Converged (or boundary-stopped) weights plus diagnostics.

    ``epsilon_hat`` always equals ``estimate_epsilon(weights)``.
    ``dual_lambda`` is set only by :func:`constrained_estep`.
    """

    weights: np.ndarray
    epsilon_hat: float
    objective: float
    iterations: int
    degenerate: bool
    dual_lambda: Optional[float] = None


class EStepConvergenceError(RuntimeError):
    """Sweep budget exhausted; ``result`` carries the last iterate."""

    def __init__(self, message: str, result: EStepResult):
        super().__init__(message)
        self.result = result


class DualSolverError(RuntimeError):
    """Bracketing of the constraint dual variable failed."""


def _as_loss_array(losses) -> np.ndarray:
    arr = np.asarray(losses, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("losses must be a nonempty 1-D sequence")
    if not np.all(np.isfinite(arr)):
        raise ValueError("losses must be finite")
    return arr


def negative_elbo(losses, weights) -> float:
    """Weighted loss plus closed-form KL against the optimal Bernoulli prior.

    Computes ``sum_i pi_i l_i + pi_i ln(pi_i / m) + (1 - pi_i) ln((1 - pi_i)
    / (1 - m))`` with ``m = mean(pi)``.  Endpoint weights hit by rounding
    contribute via the ``0 * ln 0 = 0`` convention.
    """
    l = _as_loss_array(losses)
    pi = np.asarray(weights, dtype=float)
    if pi.shape != l.shape:
        raise ValueError("losses and weights must have matching length")
    if np.any(pi < 0.0) or np.any(pi > 1.0):
        raise ValueError("weights must lie in [0, 1]")
    m = pi.mean()
    loss_term = float(np.dot(pi, l))
    if m <= 0.0 or m >= 1.0:
        # Uniform boundary weights: entropy and cross-entropy cancel.
        kl = float(np.sum(xlogy(pi, pi)) + np.sum(xlogy(1.0 - pi, 1.0 - pi)))
        kl -= float(np.sum(xlogy(pi, m)) + np.sum(xlogy(1.0 - pi, 1.0 - m)))
        return loss_term + kl
    kl = np.sum(xlogy(pi, pi) - pi * np.log(m))
    kl += np.sum(xlogy(1.0 - pi, 1.0 - pi) - (1.0 - pi) * np.log1p(-m))
    return loss_term + float(kl)


def kl_bernoulli(weights, epsilon: float) -> float:
    """KL divergence of independent Bernoulli(pi_i) from Bernoulli(1 - eps).

    ``sum_i pi_i ln(pi_i / (1 - eps)) + (1 - pi_i) ln((1 - pi_i) / eps)``.
    Minimizing over ``eps`` gives ``eps = 1 - mean(pi)``, which recovers the
    KL term of :func:`negative_elbo`.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie strictly inside (0, 1)")
    pi = np.asarray(weights, dtype=float)
    if np.any(pi < 0.0) or np.any(pi > 1.0):
        raise ValueError("weights must lie in [0, 1]")
    val = np.sum(xlogy(pi, pi) - pi * np.log1p(-epsilon))
    val += np.sum(xlogy(1.0 - pi, 1.0 - pi) - (1.0 - pi) * np.log(epsilon))
    return float(val)


def estimate_epsilon(weights) -> float:
    """Optimal corruption level for given weights: ``1 - mean(pi)``, clamped."""
    pi = np.asarray(weights, dtype=float)
    if pi.size == 0:
        raise ValueError("weights must be nonempty")
    return float(min(1.0, max(0.0, 1.0 - pi.mean())))


def estep_sweep(losses, mean_weight: float) -> np.ndarray:
    """One application of the stationarity map at a fixed mean weight.

    ``pi_j = sigma(logit(m) - l_j)``, the log-domain form of the fixed-point
    update.  Evaluating through the logistic avoids overflow of ``exp(l_j)``
    for large losses; results are clipped to the open unit interval.
    """
    l = np.asarray(losses, dtype=float)
    t = logit(mean_weight)
    return np.clip(expit(t - l), _PI_MIN, _PI_MAX)


def _init_weights(n: int, warm_start, config: FixedPointConfig) -> np.ndarray:
    if warm_start is None:
        return np.full(n, config.init_mean)
    pi = np.asarray(warm_start, dtype=float)
    if pi.shape != (n,):
        raise ValueError("warm_start length must match losses")
    if np.any(pi < 0.0) or np.any(pi > 1.0):
        raise ValueError("warm_start weights must lie in [0, 1]")
    return pi.copy()


def fixed_point_estep(
    losses,
    warm_start=None,
    config: FixedPointConfig = FixedPointConfig(),
) -> EStepResult:
    """Solve the weight stationarity system by mean-refreshed sweeps.

    Each sweep recomputes every weight from the current mean via
    :func:`estep_sweep` and then refreshes the mean.  The iteration stops
    when a sweep would move no weight by more than ``config.tolerance``
    (so the returned vector satisfies the stationarity system to that
    sup-norm), or when the mean weight leaves the interval
    ``(DEGENERACY_MARGIN, 1 - DEGENERACY_MARGIN)``, in which case the
    result is flagged ``degenerate`` instead of silently returning
    boundary garbage.  Losses that are uniformly positive have no interior
    stationary point and always end degenerate: every sweep strictly
    lowers the mean.

    Raises :class:`EStepConvergenceError` (carrying the last iterate) if
    the sweep budget runs out first.
    """
    l = _as_loss_array(losses)
    pi = _init_weights(l.size, warm_start, config)

    iterations = 0
    degenerate = False
    for _ in range(config.max_iterations):
        iterations += 1
        m = pi.mean()
        if not DEGENERACY_MARGIN < m < 1.0 - DEGENERACY_MARGIN:
            degenerate = True
            break
        new = estep_sweep(l, m)
        if np.max(np.abs(new - pi)) <= config.tolerance:
            # Current iterate already satisfies the system to tolerance.
            return _finish(l, pi, iterations, degenerate=False)
        pi = new
    else:
        last = _finish(l, pi, iterations, degenerate=False)
        raise EStepConvergenceError(
            f"fixed-point E-step did not converge in {config.max_iterations} sweeps",
            last,
        )
    return _finish(l, pi, iterations, degenerate=degenerate)


def _finish(losses, pi, iterations, degenerate) -> EStepResult:
    return EStepResult(
        weights=pi,
        epsilon_hat=estimate_epsilon(pi),
        objective=negative_elbo(losses, pi),
        iterations=iterations,
        degenerate=degenerate,
    )


def capped_estep(
    losses,
    warm_start=None,
    config: FixedPointConfig = FixedPointConfig(),
) -> EStepResult:
    """Like :func:`fixed_point_estep` but budget exhaustion is not an error.

    Stochastic consumers (per-batch and per-epoch weight updates) run a
    deliberately short sweep budget: nonnegative loss vectors have no
    interior stationary point, and a truncated sweep keeps the weight
    scale usable while already separating high-loss samples.  The last
    iterate is returned in place of the convergence error.
    """
    try:
        return fixed_point_estep(losses, warm_start, config)
    except EStepConvergenceError as err:
        return err.result


def stationarity_residual(losses, weights) -> float:
    """Sup-norm violation of the stationarity system at given weights."""
    l = _as_loss_array(losses)
    pi = np.asarray(weights, dtype=float)
    return float(np.max(np.abs(pi - estep_sweep(l, pi.mean()))))


def select_tau(weights, bound: float = 0.05) -> float:
    """Smallest truncation threshold with bounded expected false-clean mass.

    Candidates are the observed weight values.  A threshold ``tau`` keeps
    samples with ``pi_i >= tau``; it is feasible when the kept samples'
    expected corrupted mass ``sum (1 - pi_i) 1[pi_i >= tau]`` is at most
    ``bound`` times the total expected corrupted mass ``sum (1 - pi_i)``.
    The smallest feasible candidate maximizes the number of retained
    samples subject to the bound.  With no corrupted mass the threshold is
    0 (nothing to guard against); with no feasible candidate the returned
    value exceeds ``max(pi)`` so that truncation removes everything.

    Sorting plus suffix sums: O(n log n).
    """
    if not 0.0 < bound < 1.0:
        raise ValueError("bound must lie strictly inside (0, 1)")
    pi = np.asarray(weights, dtype=float)
    if pi.size == 0:
        raise ValueError("weights must be nonempty")
    if np.any(pi < 0.0) or np.any(pi > 1.0):
        raise ValueError("weights must lie in [0, 1]")
    total = float(np.sum(1.0 - pi))
    if total <= 0.0:
        return 0.0
    ascending = np.sort(pi)
    # suffix[i] = false-clean mass if the threshold equals ascending[i]
    suffix = np.cumsum((1.0 - ascending)[::-1])[::-1]
    for i in range(ascending.size):
        if i > 0 and ascending[i] == ascending[i - 1]:
            continue
        if suffix[i] / total <= bound:
            return float(ascending[i])
    return float(ascending[-1]) + 1e-12


def truncate(weights, tau: float) -> np.ndarray:
    """Zero all weights strictly below ``tau``; others pass through."""
    if tau < 0.0:
        raise ValueError("tau must be nonnegative")
    pi = np.asarray(weights, dtype=float)
    return np.where(pi < tau, 0.0, pi)


def constrained_estep(
    losses,
    n0: float,
    config: FixedPointConfig = FixedPointConfig(),
    warm_start=None,
) -> EStepResult:
    """E-step with a floor on the total weight: ``sum(pi) >= n0``.

    Guards weighted fits of unbounded likelihoods (covariance estimation)
    against rank-deficient collapse by forcing at least ``n0`` effective
    samples.  Runs the unconstrained solve first; if it already satisfies
    the floor the constraint is inactive and the result is returned with a
    zero dual variable.  Otherwise the active-constraint weights are
    ``pi_i = sigma(logit(n0/n) + lambda - l_i)`` with the dual ``lambda >
    0`` chosen by bisection so that ``sum(pi) = n0`` to within ``1e-9 * n``
    (the total is strictly increasing in ``lambda``); the upper bracket is
    doubled geometrically until it straddles ``n0``.
    """
    l = _as_loss_array(losses)
    n = l.size
    if not 0.0 < n0 < n:
        raise ValueError("n0 must lie strictly between 0 and the sample count")

    unconstrained = fixed_point_estep(l, warm_start, config)
    if float(np.sum(unconstrained.weights)) >= n0:
        unconstrained.dual_lambda = 0.0
        return unconstrained

    base = logit(n0 / n)
    tol = 1e-9 * n

    def total(lam: float) -> float:
        return float(np.sum(np.clip(expit(base + lam - l), _PI_MIN, _PI_MAX)))

    if total(0.0) >= n0:
        # Map at the floor already meets it; constraint binds with lambda -> 0.
        lam = 0.0
    else:
        hi = max(1.0, float(np.max(l)) + abs(base) + 1.0)
        for _ in range(200):
            if total(hi) >= n0:
                break
            hi *= 2.0
        else:
            raise DualSolverError("failed to bracket the dual variable")
        lo, lam = 0.0, hi
        for _ in range(500):
            lam = 0.5 * (lo + hi)
            t = total(lam)
            if abs(t - n0) <= tol:
                break
            if t < n0:
                lo = lam
            else:
                hi = lam
        else:
            raise DualSolverError("dual bisection failed to reach tolerance")

    pi = np.clip(expit(base + lam - l), _PI_MIN, _PI_MAX)
    return EStepResult(
        weights=pi,
        epsilon_hat=estimate_epsilon(pi),
        objective=negative_elbo(l, pi),
        iterations=unconstrained.iterations,
        degenerate=False,
        dual_lambda=float(lam),
    )
