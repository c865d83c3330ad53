"""Shared independent oracles for the test suite.

Everything here recomputes expected values from first principles:
grid search over the weight objective, scans for interior stationary
points, central finite differences.  Nothing imports from the solver
paths it certifies.
"""

import numpy as np
from scipy.special import expit


def group_objective(pa, pb, na, nb, la, lb):
    """Weight objective for two equal-loss groups, vectorized over grids.

    The optimum of the full objective is constant on equal-loss groups, so
    an n-dimensional instance with two distinct loss values reduces to two
    group weights.
    """
    n = na + nb
    m = (na * pa + nb * pb) / n
    def rel_entropy(p):
        return p * (np.log(p) - np.log(m)) + (1.0 - p) * (
            np.log1p(-p) - np.log1p(-m)
        )
    return na * (pa * la + rel_entropy(pa)) + nb * (pb * lb + rel_entropy(pb))


def grid_minimize_two_groups(na, nb, la, lb, coarse_step=2e-3, refinements=3):
    """Brute-force minimizer over the open box, coarse grid plus refinement.

    Returns (pa, pb, interior): ``interior`` is False when the coarse
    argmin sits on the box edge, meaning the true optimum is a boundary
    point and no interior comparison is meaningful.
    """
    lo_a, hi_a = 1e-3, 1.0 - 1e-3
    lo_b, hi_b = 1e-3, 1.0 - 1e-3
    step = coarse_step
    best_a = best_b = None
    for level in range(refinements):
        ga = np.linspace(lo_a, hi_a, max(int(round((hi_a - lo_a) / step)) + 1, 5))
        gb = np.linspace(lo_b, hi_b, max(int(round((hi_b - lo_b) / step)) + 1, 5))
        va, vb = np.meshgrid(ga, gb, indexing="ij")
        values = group_objective(va, vb, na, nb, la, lb)
        i, j = np.unravel_index(np.argmin(values), values.shape)
        best_a, best_b = float(ga[i]), float(gb[j])
        if level == 0 and (
            i in (0, len(ga) - 1) or j in (0, len(gb) - 1)
        ):
            return best_a, best_b, False
        lo_a, hi_a = max(best_a - step, 1e-6), min(best_a + step, 1 - 1e-6)
        lo_b, hi_b = max(best_b - step, 1e-6), min(best_b + step, 1 - 1e-6)
        step /= 20.0
    return best_a, best_b, True


def has_interior_attractor(losses, grid=4001):
    """Scan for a stable interior fixed point of the mean-weight map.

    The map in logit coordinates is t -> logit(mean sigma(t - l)); a
    stable fixed point is a downward crossing of phi(t) = mean
    sigma(t - l) - sigma(t).  Independent of the solver implementation.
    """
    t = np.linspace(-12.0, 12.0, grid)
    phi = expit(t[:, None] - np.asarray(losses)[None, :]).mean(axis=1) - expit(t)
    sign = np.sign(phi)
    down = np.flatnonzero((sign[:-1] > 0) & (sign[1:] < 0))
    return down.size > 0


def central_difference(f, x0, step=1e-5):
    """Central finite-difference gradient of a scalar function of a vector."""
    x0 = np.asarray(x0, float)
    grad = np.zeros_like(x0)
    for i in range(x0.size):
        delta = np.zeros_like(x0)
        delta[i] = step
        grad[i] = (f(x0 + delta) - f(x0 - delta)) / (2.0 * step)
    return grad


def assert_grad_close(analytic, numeric, rel=1e-4):
    analytic = np.asarray(analytic, float).ravel()
    numeric = np.asarray(numeric, float).ravel()
    scale = 1.0 + np.abs(numeric)
    worst = np.max(np.abs(analytic - numeric) / scale)
    assert worst <= rel, f"gradient mismatch {worst:.3e} > {rel:.0e}"
