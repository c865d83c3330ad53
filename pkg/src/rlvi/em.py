"""Block EM: alternate the fixed-point E-step with weighted M-steps.

The outer loop follows the standard scheme: evaluate per-sample losses at
the current parameters, update the clean-sample weights, refit parameters
with those weights, stop when the parameters stop moving.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .core import (
    EStepResult,
    FixedPointConfig,
    constrained_estep,
    fixed_point_estep,
)
from .models import RobustModel

logger = logging.getLogger(__name__)

__all__ = ["EmConfig", "EmTrace", "DegenerateEStepError", "ml_fit", "rlvi_em"]


@dataclass(frozen=True)
class EmConfig:
    param_tolerance: float = 1e-8
    max_outer_iterations: int = 100
    estep: FixedPointConfig = field(default_factory=FixedPointConfig)

    def __post_init__(self):
        if not self.param_tolerance > 0:
            raise ValueError("param_tolerance must be positive")
        if self.max_outer_iterations < 1:
            raise ValueError("max_outer_iterations must be positive")


@dataclass
class EmTrace:
    """Per-iteration diagnostics plus the final E-step result."""

    objectives: List[float] = field(default_factory=list)
    epsilons: List[float] = field(default_factory=list)
    param_distances: List[float] = field(default_factory=list)
    degenerate_steps: List[bool] = field(default_factory=list)
    final_estep: Optional[EStepResult] = None
    converged: bool = False
    iterations: int = 0


class DegenerateEStepError(RuntimeError):
    """E-step collapsed with no usable ordering information."""


def ml_fit(model: RobustModel, data):
    """Plain maximum likelihood: the weighted fit with all-ones weights."""
    return model.weighted_fit(data, np.ones(model.n_samples(data)))


def _usable_collapse(losses: np.ndarray, weights: np.ndarray) -> bool:
    # A collapse toward zero still orders samples by loss unless the losses
    # carry no spread at all; scale does not matter to the weighted fits.
    spread = float(np.max(losses) - np.min(losses))
    total = float(np.sum(weights))
    return spread > 1e-12 and total > 0.0 and bool(np.all(np.isfinite(weights)))


def rlvi_em(
    model: RobustModel,
    data,
    config: EmConfig = EmConfig(),
    n0: Optional[float] = None,
):
    """Robust parameter estimation by alternating weight and parameter updates.

    Starts from the plain ML fit (all samples trusted).  Each outer
    iteration evaluates losses at the current parameters, solves the
    E-step (warm-started from the previous weights when those came from a
    non-degenerate solve), and refits with the resulting weights.  Stops
    when the model's parameter distance falls below
    ``config.param_tolerance``; exhausting the outer budget returns the
    last iterate with ``trace.converged = False`` rather than raising, so
    Monte-Carlo harnesses always get an estimate.

    Degenerate E-steps are resolved by collapse direction: an all-clean
    collapse means the data give no reason to distrust any sample, so the
    M-step runs with all-ones weights (plain ML); an all-corrupted
    collapse keeps the collapsed weights when they still order the samples
    (weighted fits are scale-invariant) and raises
    :class:`DegenerateEStepError` only when the losses carry no spread.

    ``n0`` switches the E-step to the constrained variant enforcing
    ``sum(pi) >= n0`` (unbounded-likelihood guard).
    """
    n = model.n_samples(data)
    if n < 2:
        raise ValueError("need at least two samples")

    params = ml_fit(model, data)
    trace = EmTrace()
    warm: Optional[np.ndarray] = None

    for k in range(1, config.max_outer_iterations + 1):
        losses = np.asarray(model.per_sample_loss(data, params), dtype=float)
        if n0 is None:
            estep = fixed_point_estep(losses, warm, config.estep)
        else:
            estep = constrained_estep(losses, n0, config.estep, warm)

        weights = estep.weights
        if estep.degenerate:
            warm = None
            if float(np.mean(weights)) >= 0.5:
                # all-clean collapse: fall back to plain ML for this step
                weights = np.ones(n)
                estep.weights = weights
                estep.epsilon_hat = 0.0
            elif not _usable_collapse(losses, weights):
                raise DegenerateEStepError(
                    "all-corrupted collapse on uniform losses: nothing to learn from"
                )
            else:
                logger.debug(
                    "E-step collapsed at outer iteration %d; continuing with "
                    "collapsed weights (loss ordering intact)",
                    k,
                )
        else:
            warm = weights

        new_params = model.weighted_fit(data, weights)
        dist = model.param_distance(new_params, params)

        trace.objectives.append(estep.objective)
        trace.epsilons.append(estep.epsilon_hat)
        trace.param_distances.append(dist)
        trace.degenerate_steps.append(estep.degenerate)
        trace.final_estep = estep
        trace.iterations = k

        params = new_params
        if dist <= config.param_tolerance:
            trace.converged = True
            break

    return params, trace
