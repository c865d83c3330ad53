"""Seeded synthetic data with controlled contamination.

Every generator is a pure function of its arguments: identical seeds give
bitwise-identical datasets.  Randomness runs through the counter-based
Philox generator seeded via ``SeedSequence`` spawn keys, so parallel
Monte-Carlo streams are reproducible and independent.

The clean/corrupted distributional choices are pinned here (and only
here); each generator documents its own.  Downstream comparisons depend
only on orderings that are robust to moderate changes of these knobs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np

__all__ = [
    "CorruptionSpec",
    "RegressionData",
    "ClassificationData",
    "PcaData",
    "GaussData",
    "BlobData",
    "StreamBatch",
    "make_rng",
    "gen_linreg",
    "gen_logreg",
    "gen_pca",
    "gen_gauss",
    "gen_blobs",
    "pert_sample",
    "gen_stream",
    "flip_labels",
]


def make_rng(seed: int, stream: Tuple[int, ...] = ()) -> np.random.Generator:
    """Philox generator for (seed, stream); distinct streams are independent."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=stream))
    )


@dataclass(frozen=True)
class CorruptionSpec:
    """How a dataset is contaminated.

    ``epsilon`` is the fixed corrupted fraction; alternatively ``pert``
    gives (min, mode, max) of a PERT distribution for per-batch levels.
    """

    kind: str  # regression-outlier | label-flip-symmetric | label-flip-positive-only | pairflip
    epsilon: Optional[float] = None
    pert: Optional[Tuple[float, float, float]] = None
    seed: int = 0

    _KINDS = (
        "regression-outlier",
        "label-flip-symmetric",
        "label-flip-positive-only",
        "pairflip",
    )

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown corruption kind {self.kind!r}")
        if self.epsilon is not None and not 0.0 <= self.epsilon < 1.0:
            raise ValueError("epsilon must lie in [0, 1)")
        if self.pert is not None:
            lo, mode, hi = self.pert
            if not lo <= mode <= hi:
                raise ValueError("PERT parameters must satisfy min <= mode <= max")
        if self.epsilon is None and self.pert is None:
            raise ValueError("either epsilon or pert must be given")


@dataclass
class RegressionData:
    x: np.ndarray
    y: np.ndarray
    theta_star: np.ndarray
    corrupted: np.ndarray  # boolean ground-truth mask


@dataclass
class ClassificationData:
    x: np.ndarray
    y: np.ndarray
    theta_star: np.ndarray  # feature direction plus intercept (last)
    corrupted: np.ndarray


@dataclass
class PcaData:
    z: np.ndarray
    axis_star: np.ndarray
    corrupted: np.ndarray


@dataclass
class GaussData:
    z: np.ndarray
    mu_star: np.ndarray
    sigma_star: np.ndarray
    corrupted: np.ndarray


@dataclass
class BlobData:
    x: np.ndarray
    y: np.ndarray
    centers: np.ndarray


@dataclass
class StreamBatch:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    epsilon: float  # flip level drawn for this batch
    n_flipped: int


def gen_linreg(
    n: int = 40,
    d: int = 10,
    eps: float = 0.2,
    seed: int = 0,
    noise_sigma: float = 0.1,
    outlier_offset: float = 10.0,
) -> RegressionData:
    """Linear regression with response outliers.

    Features are standard normal, the true coefficient vector is a random
    unit vector, clean responses add Gaussian noise of scale
    ``noise_sigma``.  ``floor(eps * n)`` rows, chosen uniformly without
    replacement, have their response shifted by ``+- outlier_offset``
    (random sign).
    """
    rng = make_rng(seed, (0,))
    x = rng.standard_normal((n, d))
    theta = rng.standard_normal(d)
    theta /= np.linalg.norm(theta)
    y = x @ theta + noise_sigma * rng.standard_normal(n)
    k = int(eps * n)
    mask = np.zeros(n, dtype=bool)
    if k > 0:
        idx = rng.choice(n, size=k, replace=False)
        y[idx] += outlier_offset * rng.choice([-1.0, 1.0], size=k)
        mask[idx] = True
    return RegressionData(x=x, y=y, theta_star=theta, corrupted=mask)


def gen_logreg(
    n: int = 100,
    d: int = 3,
    eps: float = 0.05,
    seed: int = 0,
    intercept_scale: float = 0.3,
) -> ClassificationData:
    """Binary labels from a hyperplane, flips on the most confident samples.

    ``d`` counts total parameters including the intercept, so features are
    ``(d - 1)``-dimensional standard normal.  The true feature direction
    is unit norm with a small Gaussian intercept (``intercept_scale``);
    labels are the deterministic side of the hyperplane.  The
    ``floor(eps * n)`` samples farthest from the boundary (largest |score|,
    the far side of the margin) get their labels flipped.
    """
    if d < 2:
        raise ValueError("need at least one feature plus intercept")
    rng = make_rng(seed, (1,))
    x = rng.standard_normal((n, d - 1))
    w = rng.standard_normal(d - 1)
    w /= np.linalg.norm(w)
    b = intercept_scale * rng.standard_normal()
    theta = np.concatenate([w, [b]])
    score = x @ w + b
    y = (score >= 0).astype(float)
    k = int(eps * n)
    mask = np.zeros(n, dtype=bool)
    if k > 0:
        idx = np.argsort(-np.abs(score))[:k]
        y[idx] = 1.0 - y[idx]
        mask[idx] = True
    return ClassificationData(x=x, y=y, theta_star=theta, corrupted=mask)


def gen_pca(
    n: int = 40,
    d: int = 2,
    eps: float = 0.2,
    seed: int = 0,
    axis_ratio: float = 5.0,
    outlier_offset: float = 6.0,
    outlier_sigma: float = 1.0,
) -> PcaData:
    """Anisotropic cloud plus an isotropic off-axis cluster.

    Clean samples are a zero-mean Gaussian whose leading axis (a random
    unit vector) has ``axis_ratio`` times the standard deviation of the
    remaining axes (ratio 5:1 by default).  Corrupted samples form an
    isotropic cluster of scale ``outlier_sigma`` centered
    ``outlier_offset`` away in a random direction.  The default offset is
    deliberately moderate: a very distant cluster can capture the pooled
    leading direction so completely that residual losses never separate.
    """
    rng = make_rng(seed, (2,))
    axis = rng.standard_normal(d)
    axis /= np.linalg.norm(axis)
    basis = np.column_stack([axis, rng.standard_normal((d, d - 1))])
    q, _ = np.linalg.qr(basis)
    if q[:, 0] @ axis < 0:
        q[:, 0] = -q[:, 0]
    stds = np.array([axis_ratio] + [1.0] * (d - 1))
    z = ((q * stds) @ rng.standard_normal((d, n))).T
    k = int(eps * n)
    mask = np.zeros(n, dtype=bool)
    if k > 0:
        idx = rng.choice(n, size=k, replace=False)
        u = rng.standard_normal(d)
        u /= np.linalg.norm(u)
        z[idx] = outlier_offset * u + outlier_sigma * rng.standard_normal((k, d))
        mask[idx] = True
    return PcaData(z=z, axis_star=axis, corrupted=mask)


def gen_gauss(
    n: int = 50,
    d: int = 2,
    eps: float = 0.2,
    seed: int = 0,
    outlier_offset: float = 10.0,
    outlier_sigma: float = 0.5,
) -> GaussData:
    """Gaussian cloud for mean/covariance estimation, plus a far cluster.

    Clean samples are zero-mean with a randomly rotated covariance of
    eigenvalues (3, 1, ..., 1).  Corrupted samples are a tight isotropic
    cluster at distance ``outlier_offset`` in a random direction.
    """
    rng = make_rng(seed, (3,))
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    eigs = np.array([3.0] + [1.0] * (d - 1))
    sigma_star = (q * eigs) @ q.T
    mu_star = np.zeros(d)
    chol = np.linalg.cholesky(sigma_star)
    z = (chol @ rng.standard_normal((d, n))).T
    k = int(eps * n)
    mask = np.zeros(n, dtype=bool)
    if k > 0:
        idx = rng.choice(n, size=k, replace=False)
        u = rng.standard_normal(d)
        u /= np.linalg.norm(u)
        z[idx] = outlier_offset * u + outlier_sigma * rng.standard_normal((k, d))
        mask[idx] = True
    return GaussData(z=z, mu_star=mu_star, sigma_star=sigma_star, corrupted=mask)


def gen_blobs(
    n: int = 3000,
    d: int = 10,
    n_classes: int = 3,
    seed: int = 0,
    spread: float = 6.0,
    centers: Optional[np.ndarray] = None,
) -> BlobData:
    """Well-separated unit-variance Gaussian blobs for classification.

    Class centers are random directions rescaled to norm ``spread``
    (pass ``centers`` to reuse a previous draw, e.g. for a matching test
    set).  Labels are uniform over classes.
    """
    rng = make_rng(seed, (4,))
    if centers is None:
        centers = rng.standard_normal((n_classes, d))
        centers *= spread / np.linalg.norm(centers, axis=1, keepdims=True)
    labels = rng.integers(0, centers.shape[0], size=n)
    x = centers[labels] + rng.standard_normal((n, centers.shape[1]))
    return BlobData(x=x, y=labels, centers=centers)


def pert_sample(
    minimum: float, mode: float, maximum: float, rng: np.random.Generator
) -> float:
    """Draw from the PERT distribution on [minimum, maximum] with given mode.

    A Beta draw with the standard PERT shape constant 4:
    ``alpha = 1 + 4 (mode - min) / (max - min)``,
    ``beta = 1 + 4 (max - mode) / (max - min)``, rescaled to the interval.
    A degenerate interval returns ``minimum`` without consuming entropy.
    """
    if not minimum <= mode <= maximum:
        raise ValueError("PERT parameters must satisfy min <= mode <= max")
    if maximum == minimum:
        return float(minimum)
    span = maximum - minimum
    alpha = 1.0 + 4.0 * (mode - minimum) / span
    beta = 1.0 + 4.0 * (maximum - mode) / span
    return float(minimum + span * rng.beta(alpha, beta))


def gen_stream(
    n_batches: int,
    b: int = 100,
    pert: Tuple[float, float, float] = (0.0, 0.1, 0.3),
    seed: int = 0,
    d: int = 5,
    separation: float = 1.0,
) -> Iterator[StreamBatch]:
    """Binary-classification batches with per-batch label-flip levels.

    A fixed pair of Gaussian classes (means at ``+- separation`` along a
    seed-dependent unit direction, unit covariance) stands in for a
    sensor-style activity stream.  Each iteration draws a flip level from
    the PERT distribution, synthesizes ``2 b`` labeled samples, and flips
    ``floor(level * #positives)`` positive labels in the train half only;
    the test half is untouched.
    """
    rng = make_rng(seed, (5,))
    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)
    lo, mode, hi = pert
    for _ in range(n_batches):
        level = pert_sample(lo, mode, hi, rng)
        labels = rng.integers(0, 2, size=2 * b).astype(float)
        x = rng.standard_normal((2 * b, d)) + (
            separation * (2.0 * labels - 1.0)
        )[:, None] * direction
        train_y = labels[:b].copy()
        positives = np.flatnonzero(train_y == 1.0)
        k = int(level * positives.size)
        if k > 0:
            flip = rng.choice(positives, size=k, replace=False)
            train_y[flip] = 0.0
        yield StreamBatch(
            train_x=x[:b],
            train_y=train_y,
            test_x=x[b:],
            test_y=labels[b:],
            epsilon=level,
            n_flipped=k,
        )


def flip_labels(
    labels: np.ndarray,
    n_classes: int,
    kind: str,
    eps: float,
    seed: int = 0,
):
    """Flip exactly ``floor(eps * n)`` labels; returns (labels, mask).

    ``symmetric`` replaces each selected label uniformly among the other
    classes (never itself); ``pairflip`` maps class c to (c + 1) mod C.
    """
    if kind not in ("symmetric", "pairflip"):
        raise ValueError(f"unknown flip kind {kind!r}")
    if not 0.0 <= eps < 1.0:
        raise ValueError("eps must lie in [0, 1)")
    labels = np.asarray(labels)
    n = labels.shape[0]
    rng = make_rng(seed, (6,))
    k = int(eps * n)
    flipped = labels.copy()
    mask = np.zeros(n, dtype=bool)
    if k == 0:
        return flipped, mask
    idx = rng.choice(n, size=k, replace=False)
    mask[idx] = True
    if kind == "pairflip":
        flipped[idx] = (labels[idx] + 1) % n_classes
    else:
        # uniform over the other C-1 classes via a shifted draw
        shift = rng.integers(1, n_classes, size=k)
        flipped[idx] = (labels[idx] + shift) % n_classes
    return flipped, mask
