"""Stochastic variant: per-batch weight updates plus weighted gradient steps.

For data arriving in batches with a corruption level that changes batch to
batch, the M-step becomes a single weighted gradient update and the
weights are recomputed from scratch on every batch (a warm start would
leak the previous batch's corruption level).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional

import numpy as np

from .core import FixedPointConfig, capped_estep

logger = logging.getLogger(__name__)

__all__ = [
    "SgdConfig",
    "StepResult",
    "OnlineMetrics",
    "NonFiniteGradientError",
    "rlvi_sgd_step",
    "online_run",
]


def _default_stream_estep() -> FixedPointConfig:
    # Bounded sweep budget: nonnegative batch losses have no interior
    # stationary point, so a full solve would collapse the weight scale
    # and zero the gradient step.  A handful of sweeps separates high-loss
    # samples while keeping clean weights O(1).
    return FixedPointConfig(max_iterations=5, tolerance=1e-10, init_mean=0.9)


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.05
    batch_size: int = 100
    estep: FixedPointConfig = field(default_factory=_default_stream_estep)
    steps_per_batch: int = 1

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.steps_per_batch < 1:
            raise ValueError("steps_per_batch must be positive")


@dataclass
class StepResult:
    params: object
    weights: np.ndarray
    epsilon_hat: float
    fallback: bool  # degenerate E-step replaced by all-ones weights


class NonFiniteGradientError(RuntimeError):
    """Gradient had non-finite entries; parameters were left unchanged."""


@dataclass
class OnlineMetrics:
    """Per-batch records for the robust run and its plain-SGD twin."""

    epsilon_true: List[float] = field(default_factory=list)
    epsilon_hat: List[float] = field(default_factory=list)
    accuracy: List[float] = field(default_factory=list)
    recall: List[float] = field(default_factory=list)
    sgd_accuracy: List[float] = field(default_factory=list)
    sgd_recall: List[float] = field(default_factory=list)


def rlvi_sgd_step(model, params, batch, config: SgdConfig = SgdConfig()) -> StepResult:
    """One weighted gradient update on a batch.

    Evaluates per-sample losses at the current parameters, computes fresh
    weights on the batch (no cross-batch warm start), and applies
    ``theta - alpha * sum_i pi_i grad l_i``.  A degenerate E-step (uniform
    losses collapsing the mean) falls back to all-ones weights for this
    batch: dropping the whole batch would bias the stream.  A non-finite
    gradient rejects the step and raises, leaving parameters unchanged.
    """
    x, y = batch
    if len(y) == 0:
        raise ValueError("batch must be nonempty")
    losses = np.asarray(model.per_sample_loss(batch, params), dtype=float)
    res = capped_estep(losses, None, config.estep)
    weights = res.weights
    fallback = False
    if res.degenerate:
        weights = np.ones_like(losses)
        fallback = True
        logger.warning("degenerate batch E-step; using unweighted step")
    grad = model.weighted_grad(batch, params, weights)
    grad_arr = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad_arr)):
        raise NonFiniteGradientError("non-finite gradient; step rejected")
    new_theta = params.theta - config.learning_rate * grad_arr
    new_params = type(params)(theta=new_theta)
    return StepResult(
        params=new_params,
        weights=weights,
        epsilon_hat=float(1.0 - weights.mean()),
        fallback=fallback,
    )


def _binary_metrics(model, params, x, y):
    scores = np.hstack([x, np.ones((len(y), 1))]) @ params.theta
    pred = (scores > 0).astype(float)
    acc = float(np.mean(pred == y))
    positives = y == 1.0
    if not positives.any():
        return acc, float("nan")
    recall = float(np.mean(pred[positives] == 1.0))
    return acc, recall


def online_run(
    stream: Iterable,
    model,
    config: SgdConfig = SgdConfig(),
    initial_params=None,
    run_plain_twin: bool = True,
) -> OnlineMetrics:
    """Sequentially learn from train/test batch pairs, recording metrics.

    Each arriving batch contributes ``config.steps_per_batch`` weighted
    gradient updates on its train half, then accuracy and recall on its
    untouched test half.  When ``run_plain_twin`` is set, a plain SGD
    model (all weights one) is advanced from the same initialization on
    the same batches for comparison.  Stream exhaustion is normal
    termination.
    """
    metrics = OnlineMetrics()
    params = initial_params
    twin = initial_params

    for batch in stream:
        if params is None:
            d = batch.train_x.shape[1]
            from .models import LogRegParams

            params = LogRegParams(theta=np.zeros(d + 1))
            twin = LogRegParams(theta=np.zeros(d + 1))

        train = (batch.train_x, batch.train_y)
        eps_hat = float("nan")
        for _ in range(config.steps_per_batch):
            step = rlvi_sgd_step(model, params, train, config)
            params = step.params
            eps_hat = step.epsilon_hat

        acc, rec = _binary_metrics(model, params, batch.test_x, batch.test_y)
        metrics.epsilon_true.append(float(batch.epsilon))
        metrics.epsilon_hat.append(eps_hat)
        metrics.accuracy.append(acc)
        metrics.recall.append(rec)

        if run_plain_twin:
            for _ in range(config.steps_per_batch):
                grad = model.weighted_grad(
                    train, twin, np.ones(len(batch.train_y))
                )
                twin = type(twin)(theta=twin.theta - config.learning_rate * grad)
            acc, rec = _binary_metrics(model, twin, batch.test_x, batch.test_y)
            metrics.sgd_accuracy.append(acc)
            metrics.sgd_recall.append(rec)

    return metrics
