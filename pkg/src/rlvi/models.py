"""Per-sample negative log-likelihoods and weighted M-steps.

Four model families sit behind one small contract (:class:`RobustModel`):
evaluate per-sample losses at given parameters, refit parameters from
weighted data, and measure a parameter distance for outer-loop stopping.
Samples with zero weight are dropped before factorization so they have no
influence, not even through summation order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np
from scipy.special import expit

SIGMA2_FLOOR = 1e-12

__all__ = [
    "SIGMA2_FLOOR",
    "RobustModel",
    "LinRegParams",
    "LogRegParams",
    "PcaParams",
    "GaussParams",
    "SingularFitError",
    "FitError",
    "linreg_loss",
    "linreg_grad",
    "wls_fit",
    "logreg_loss",
    "logreg_grad",
    "logreg_fit",
    "pca_loss",
    "pca_grad",
    "pca_fit",
    "gauss_loss",
    "gauss_grad",
    "gauss_fit",
    "LinearRegressionModel",
    "LogisticRegressionModel",
    "PcaModel",
    "GaussianModel",
]


class SingularFitError(RuntimeError):
    """Weighted design matrix is rank deficient."""


class FitError(RuntimeError):
    """Iterative fit failed to converge; ``params`` holds the last iterate."""

    def __init__(self, message: str, params=None):
        super().__init__(message)
        self.params = params


@runtime_checkable
class RobustModel(Protocol):
    def n_samples(self, data) -> int: ...

    def per_sample_loss(self, data, params) -> np.ndarray: ...

    def weighted_fit(self, data, weights): ...

    def param_distance(self, a, b) -> float: ...


@dataclass
class LinRegParams:
    theta: np.ndarray
    sigma2: float


@dataclass
class LogRegParams:
    theta: np.ndarray  # intercept is the last coordinate


@dataclass
class PcaParams:
    theta: np.ndarray  # unit leading direction
    sigma2: float
    mu: np.ndarray  # weighted center the fit was built around


@dataclass
class GaussParams:
    mu: np.ndarray
    sigma: np.ndarray


def _weights_like(weights, n: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError("weights length must match the sample count")
    if np.any(w < 0.0):
        raise ValueError("weights must be nonnegative")
    return w


# ---------------------------------------------------------------------------
# linear regression


def linreg_loss(x: np.ndarray, y: np.ndarray, params: LinRegParams) -> np.ndarray:
    """Gaussian negative log-likelihood per sample.

    ``l_i = (y_i - x_i . theta)^2 / (2 sigma^2) + ln(2 pi sigma^2) / 2``.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ValueError("x must be (n, d) and y (n,)")
    if x.shape[1] != params.theta.shape[0]:
        raise ValueError("feature dimension does not match theta")
    if not params.sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    r = y - x @ params.theta
    return r * r / (2.0 * params.sigma2) + 0.5 * np.log(2.0 * np.pi * params.sigma2)


def linreg_grad(x, y, params: LinRegParams, weights):
    """Gradient of the weighted loss sum w.r.t. (theta, sigma2)."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    w = _weights_like(weights, x.shape[0])
    r = y - x @ params.theta
    g_theta = -(x.T @ (w * r)) / params.sigma2
    g_sigma2 = float(
        np.sum(w * (-r * r / (2.0 * params.sigma2**2) + 0.5 / params.sigma2))
    )
    return g_theta, g_sigma2


def wls_fit(x: np.ndarray, y: np.ndarray, weights) -> LinRegParams:
    """Weighted least squares with jointly estimated noise variance.

    Solves the weighted normal equations through a rank-revealing
    least-squares factorization of the sqrt-weight scaled design; raises
    :class:`SingularFitError` on column rank deficiency.  ``sigma2`` is the
    weighted mean squared residual, floored at ``SIGMA2_FLOOR``.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    w = _weights_like(weights, x.shape[0])
    keep = w > 0.0
    xk, yk, wk = x[keep], y[keep], w[keep]
    sw = np.sqrt(wk)
    theta, _, rank, _ = np.linalg.lstsq(xk * sw[:, None], yk * sw, rcond=None)
    if rank < x.shape[1]:
        raise SingularFitError(
            f"weighted design has rank {rank} < {x.shape[1]} columns"
        )
    r = yk - xk @ theta
    sigma2 = max(float(np.sum(wk * r * r) / np.sum(wk)), SIGMA2_FLOOR)
    return LinRegParams(theta=theta, sigma2=sigma2)


# ---------------------------------------------------------------------------
# logistic regression


def _augment(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, float)
    return np.hstack([x, np.ones((x.shape[0], 1))])


def logreg_loss(x: np.ndarray, y: np.ndarray, params: LogRegParams) -> np.ndarray:
    """Per-sample cross entropy, stable softplus form.

    A constant-one feature is appended internally; the intercept is the
    last coordinate of ``theta``.
    """
    y = np.asarray(y, float)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("labels must be binary 0/1")
    xa = _augment(x)
    if xa.shape[1] != params.theta.shape[0]:
        raise ValueError("feature dimension (plus intercept) does not match theta")
    s = xa @ params.theta
    # softplus(s) - y*s == y*softplus(-s) + (1-y)*softplus(s)
    return np.logaddexp(0.0, s) - y * s


def logreg_grad(x, y, params: LogRegParams, weights) -> np.ndarray:
    """Gradient of the weighted cross-entropy sum w.r.t. theta."""
    xa = _augment(x)
    y = np.asarray(y, float)
    w = _weights_like(weights, xa.shape[0])
    s = xa @ params.theta
    return xa.T @ (w * (expit(s) - y))


def logreg_fit(
    x,
    y,
    weights,
    grad_tol: float = 1e-8,
    max_iterations: int = 100,
    ridge: float = 1e-8,
) -> LogRegParams:
    """Damped Newton (weighted IRLS) for the weighted cross entropy.

    Stops when the gradient sup-norm drops to ``grad_tol``.  A small ridge
    keeps the Hessian solvable on separable data, where theta grows until
    the ridge binds; the stopping contract is on the gradient, not theta.
    Weights are rescaled to unit mean internally so the absolute gradient
    tolerance is meaningful regardless of the incoming weight scale (the
    minimizer is unchanged).  Zero-weight samples are dropped.
    """
    xa = _augment(x)
    y = np.asarray(y, float)
    w = _weights_like(weights, xa.shape[0])
    keep = w > 0.0
    xa, y, w = xa[keep], y[keep], w[keep]
    if w.size == 0 or np.sum(w) <= 0:
        raise ValueError("need positive total weight")
    w = w / w.mean()

    d = xa.shape[1]
    theta = np.zeros(d)

    def objective(t):
        s = xa @ t
        return float(np.sum(w * (np.logaddexp(0.0, s) - y * s)))

    f = objective(theta)
    for _ in range(max_iterations):
        s = xa @ theta
        p = expit(s)
        g = xa.T @ (w * (p - y))
        if np.max(np.abs(g)) <= grad_tol:
            return LogRegParams(theta=theta)
        h = xa.T @ (xa * (w * p * (1.0 - p))[:, None]) + ridge * np.eye(d)
        step = np.linalg.solve(h, g)
        decrease = float(g @ step)
        t = 1.0
        for _ in range(60):
            cand = theta - t * step
            f_cand = objective(cand)
            if f_cand <= f - 1e-4 * t * decrease:
                break
            t *= 0.5
        else:
            raise FitError("line search stalled", LogRegParams(theta=theta))
        theta, f = theta - t * step, f_cand
    s = xa @ theta
    g = xa.T @ (w * (expit(s) - y))
    if np.max(np.abs(g)) <= grad_tol:
        return LogRegParams(theta=theta)
    raise FitError(
        f"IRLS did not reach gradient tolerance in {max_iterations} iterations",
        LogRegParams(theta=theta),
    )


# ---------------------------------------------------------------------------
# principal direction (one component)


def pca_loss(z: np.ndarray, params: PcaParams) -> np.ndarray:
    """Gaussian residual off the fitted one-dimensional subspace.

    Data are centered by the fit's weighted mean; the loss per sample is
    ``|r_i|^2 / (2 sigma^2) + (d - 1) ln(2 pi sigma^2) / 2`` where ``r_i``
    is the component of the centered sample orthogonal to the direction.
    """
    z = np.asarray(z, float)
    th = np.asarray(params.theta, float)
    if abs(np.linalg.norm(th) - 1.0) > 1e-9:
        raise ValueError("direction must be unit norm")
    if not params.sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    zc = z - params.mu
    resid = zc - np.outer(zc @ th, th)
    r2 = np.sum(resid * resid, axis=1)
    d = z.shape[1]
    return r2 / (2.0 * params.sigma2) + 0.5 * (d - 1) * np.log(
        2.0 * np.pi * params.sigma2
    )


def pca_grad(z, params: PcaParams, weights):
    """Gradient of the weighted residual loss w.r.t. (theta, sigma2).

    Derivative of the loss formula as written, valid off the unit sphere
    too (finite-difference checks perturb theta freely).
    """
    z = np.asarray(z, float)
    th = np.asarray(params.theta, float)
    w = _weights_like(weights, z.shape[0])
    zc = z - params.mu
    proj = zc @ th
    resid = zc - np.outer(proj, th)
    coef = w / params.sigma2
    slack = 1.0 - float(th @ th)
    g_theta = -(resid.T @ (coef * proj)) - slack * (zc.T @ (coef * proj))
    r2 = np.sum(resid * resid, axis=1)
    d = z.shape[1]
    g_sigma2 = float(
        np.sum(w * (-r2 / (2.0 * params.sigma2**2) + 0.5 * (d - 1) / params.sigma2))
    )
    return g_theta, g_sigma2


def pca_fit(z: np.ndarray, weights) -> PcaParams:
    """Leading eigenvector of the weighted covariance about the weighted mean.

    The sign is fixed so the first nonzero coordinate is positive.
    ``sigma2`` is the weighted mean residual power per orthogonal dimension.
    """
    z = np.asarray(z, float)
    w = _weights_like(weights, z.shape[0])
    sw = float(np.sum(w))
    if sw <= 0:
        raise ValueError("need positive total weight")
    keep = w > 0.0
    zk, wk = z[keep], w[keep]
    mu = (wk @ zk) / sw
    zc = zk - mu
    cov = (zc * wk[:, None]).T @ zc / sw
    _, vecs = np.linalg.eigh(cov)
    theta = vecs[:, -1]
    nonzero = np.nonzero(theta)[0]
    if nonzero.size and theta[nonzero[0]] < 0:
        theta = -theta
    resid = zc - np.outer(zc @ theta, theta)
    d = z.shape[1]
    denom = sw * max(d - 1, 1)
    sigma2 = max(float(np.sum(wk * np.sum(resid * resid, axis=1)) / denom), SIGMA2_FLOOR)
    return PcaParams(theta=theta, sigma2=sigma2, mu=mu)


# ---------------------------------------------------------------------------
# Gaussian mean / covariance


def gauss_loss(z: np.ndarray, params: GaussParams) -> np.ndarray:
    """Full Gaussian negative log-likelihood via Cholesky factorization.

    Rejects covariance matrices that are asymmetric or have an eigenvalue
    at or below 1e-12: near-singular covariances make the likelihood
    unbounded, which is exactly the degenerate-solution hazard the
    constrained E-step exists to prevent.
    """
    z = np.asarray(z, float)
    mu = np.asarray(params.mu, float)
    sig = np.asarray(params.sigma, float)
    d = z.shape[1]
    if sig.shape != (d, d) or mu.shape != (d,):
        raise ValueError("parameter shapes do not match the data dimension")
    if np.max(np.abs(sig - sig.T)) > 1e-12 * max(1.0, np.max(np.abs(sig))):
        raise ValueError("covariance must be symmetric")
    if np.min(np.linalg.eigvalsh(sig)) <= 1e-12:
        raise ValueError("covariance is not positive-definite")
    chol = np.linalg.cholesky(sig)
    sol = np.linalg.solve(chol, (z - mu).T)
    mahal = np.sum(sol * sol, axis=0)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return 0.5 * (mahal + logdet + d * np.log(2.0 * np.pi))


def gauss_grad(z, params: GaussParams, weights):
    """Gradient of the weighted loss sum w.r.t. (mu, sigma).

    The covariance gradient is the matrix derivative at a symmetric point;
    directional derivatives along symmetric perturbations E are
    ``<G, E>`` in the Frobenius inner product.
    """
    z = np.asarray(z, float)
    w = _weights_like(weights, z.shape[0])
    mu = np.asarray(params.mu, float)
    prec = np.linalg.inv(params.sigma)
    zc = z - mu
    g_mu = -prec @ (w @ zc)
    scatter = (zc * w[:, None]).T @ zc
    g_sigma = 0.5 * (float(np.sum(w)) * prec - prec @ scatter @ prec)
    return g_mu, g_sigma


def gauss_fit(z: np.ndarray, weights) -> GaussParams:
    """Weighted mean and weighted covariance, symmetrized.

    Rank-deficient output is allowed here; the guard against it lives in
    the constrained E-step of the caller.
    """
    z = np.asarray(z, float)
    w = _weights_like(weights, z.shape[0])
    sw = float(np.sum(w))
    if sw <= 0:
        raise ValueError("need positive total weight")
    keep = w > 0.0
    zk, wk = z[keep], w[keep]
    mu = (wk @ zk) / sw
    zc = zk - mu
    sig = (zc * wk[:, None]).T @ zc / sw
    return GaussParams(mu=mu, sigma=0.5 * (sig + sig.T))


# ---------------------------------------------------------------------------
# RobustModel adapters consumed by the EM driver and the benchmark harness


class LinearRegressionModel:
    """data = (x, y)"""

    def n_samples(self, data):
        return np.asarray(data[1]).shape[0]

    def per_sample_loss(self, data, params):
        return linreg_loss(data[0], data[1], params)

    def weighted_fit(self, data, weights):
        return wls_fit(data[0], data[1], weights)

    def weighted_grad(self, data, params, weights):
        return linreg_grad(data[0], data[1], params, weights)

    def param_distance(self, a, b):
        return float(
            np.linalg.norm(
                np.concatenate([a.theta, [a.sigma2]])
                - np.concatenate([b.theta, [b.sigma2]])
            )
        )


class LogisticRegressionModel:
    """data = (x, y) with binary labels; intercept handled internally."""

    def n_samples(self, data):
        return np.asarray(data[1]).shape[0]

    def per_sample_loss(self, data, params):
        return logreg_loss(data[0], data[1], params)

    def weighted_fit(self, data, weights):
        return logreg_fit(data[0], data[1], weights)

    def weighted_grad(self, data, params, weights):
        return logreg_grad(data[0], data[1], params, weights)

    def param_distance(self, a, b):
        return float(np.linalg.norm(a.theta - b.theta))


class PcaModel:
    """data = z, the raw sample matrix."""

    def n_samples(self, data):
        return np.asarray(data).shape[0]

    def per_sample_loss(self, data, params):
        return pca_loss(data, params)

    def weighted_fit(self, data, weights):
        return pca_fit(data, weights)

    def param_distance(self, a, b):
        # sign-invariant direction distance
        return float(1.0 - abs(float(a.theta @ b.theta)))


class GaussianModel:
    """data = z, the raw sample matrix."""

    def n_samples(self, data):
        return np.asarray(data).shape[0]

    def per_sample_loss(self, data, params):
        return gauss_loss(data, params)

    def weighted_fit(self, data, weights):
        return gauss_fit(data, weights)

    def param_distance(self, a, b):
        return float(
            np.linalg.norm(a.mu - b.mu) + np.linalg.norm(a.sigma - b.sigma)
        )
