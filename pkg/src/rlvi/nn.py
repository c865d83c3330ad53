"""Robust training of a small MLP with per-epoch weight updates.

Desk-scale stand-in for robust deep-network training: a single hidden
layer with a smooth nonlinearity, softmax cross entropy, minibatch SGD
with momentum.  Per-sample losses observed during each epoch are buffered;
once per epoch the clean-sample weights are recomputed from the buffer,
and after overfitting onset low-weight samples are truncated out of the
gradient under a non-decreasing threshold.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .core import FixedPointConfig, capped_estep, select_tau, truncate

logger = logging.getLogger(__name__)

__all__ = [
    "Mlp",
    "NnConfig",
    "TrainState",
    "EpochRecord",
    "forward_backward",
    "detect_overfit",
    "train_rlvi",
]


def _default_nn_estep() -> FixedPointConfig:
    # One sweep from a high anchor, fresh each epoch.  Chained or long
    # sweeps ratchet the mean weight toward zero on nonnegative
    # cross-entropy losses, and a lower anchor makes the bounded-type-II
    # threshold infeasible (clean samples would each carry too much
    # residual corrupted mass).
    return FixedPointConfig(max_iterations=1, tolerance=1e-10, init_mean=0.99)


@dataclass
class Mlp:
    """One-hidden-layer perceptron with tanh units and softmax output."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, n_features: int, n_hidden: int, n_classes: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        return cls(
            w1=rng.standard_normal((n_features, n_hidden)) / np.sqrt(n_features),
            b1=np.zeros(n_hidden),
            w2=rng.standard_normal((n_hidden, n_classes)) / np.sqrt(n_hidden),
            b2=np.zeros(n_classes),
        )

    def forward(self, x: np.ndarray):
        hidden = np.tanh(x @ self.w1 + self.b1)
        return hidden, hidden @ self.w2 + self.b2

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        _, logits = self.forward(x)
        shifted = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(shifted)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, x: np.ndarray) -> np.ndarray:
        _, logits = self.forward(x)
        return logits.argmax(axis=1)


@dataclass(frozen=True)
class NnConfig:
    epochs: int = 60
    batch_size: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9
    estep: FixedPointConfig = field(default_factory=_default_nn_estep)
    truncation: bool = True
    tau_bound: float = 0.05
    shuffle_seed: int = 0


@dataclass
class TrainState:
    """Weight vector, loss buffer and truncation state across epochs."""

    pi: np.ndarray
    loss_buffer: np.ndarray
    tau: float = 0.0
    overfit: bool = False
    val_acc_history: List[float] = field(default_factory=list)


@dataclass
class EpochRecord:
    epoch: int
    val_accuracy: float
    test_accuracy: float
    epsilon_hat: float
    tau: float
    tau_star: float  # nan when no feasible threshold exists this epoch
    corrupted_below_tau: float
    clean_below_tau: float
    corrupted_below_tau_star: float
    clean_below_tau_star: float


def _cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.sum(np.exp(logits - m), axis=1))
    return lse - logits[np.arange(len(labels)), labels]


def forward_backward(mlp: Mlp, x: np.ndarray, labels: np.ndarray, weights: np.ndarray):
    """Per-sample cross-entropy losses and the gradient of their weighted sum.

    Backpropagation by hand; the returned gradient is of
    ``sum_i w_i * loss_i`` with respect to each parameter array.
    """
    hidden, logits = mlp.forward(x)
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite activations in forward pass")
    losses = _cross_entropy(logits, labels)

    shifted = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(shifted)
    p /= p.sum(axis=1, keepdims=True)
    delta = p
    delta[np.arange(len(labels)), labels] -= 1.0
    delta = delta * np.asarray(weights, float)[:, None]

    grads = {
        "w2": hidden.T @ delta,
        "b2": delta.sum(axis=0),
    }
    dhidden = (delta @ mlp.w2.T) * (1.0 - hidden * hidden)
    grads["w1"] = x.T @ dhidden
    grads["b1"] = dhidden.sum(axis=0)
    return losses, grads


def detect_overfit(val_acc_history: Sequence[float]) -> bool:
    """Accuracy dropped below the mean of its two previous values.

    Needs at least three entries before a positive detection is possible.
    """
    if len(val_acc_history) < 3:
        return False
    return val_acc_history[-1] < (val_acc_history[-2] + val_acc_history[-3]) / 2.0


def _accuracy(mlp: Mlp, x, labels) -> float:
    return float(np.mean(mlp.predict(x) == labels))


def _flag_fractions(pi, thresh, mask):
    if mask is None or not np.isfinite(thresh):
        return float("nan"), float("nan")
    corrupted = float(np.mean(pi[mask] < thresh)) if mask.any() else float("nan")
    clean = float(np.mean(pi[~mask] < thresh)) if (~mask).any() else float("nan")
    return corrupted, clean


def train_rlvi(
    mlp: Mlp,
    train_set,
    noisy_val_set,
    config: NnConfig = NnConfig(),
    test_set=None,
    corrupted_mask: Optional[np.ndarray] = None,
    robust: bool = True,
):
    """Epoch loop with buffered losses, per-epoch weight updates, truncation.

    Per epoch: minibatches over a shuffled partition of the training set,
    storing each visited sample's loss into the buffer and stepping with
    the current weights (momentum SGD, batch-mean scaling of the weighted
    gradient); then one weight update from the full buffer; then, once the
    noisy-validation accuracy has dropped (``detect_overfit``, never
    unset), the truncation threshold is recomputed, ratcheted upward, and
    applied.  An infeasible threshold (the truncate-everything sentinel)
    does not ratchet: zeroing every weight would kill training outright;
    the previous threshold still applies.  Weights zeroed by truncation can
    re-enter at a later epoch if their recomputed weight clears the
    threshold.

    ``robust=False`` runs the plain-SGD twin (all weights one, no
    truncation) over the identical batch order.  Supplying
    ``corrupted_mask`` adds identification diagnostics to the records.
    """
    x_train, y_train = train_set
    n = len(y_train)
    state = TrainState(pi=np.ones(n), loss_buffer=np.zeros(n))
    velocity = {k: 0.0 for k in ("w1", "b1", "w2", "b2")}
    order_rng = np.random.default_rng(config.shuffle_seed)
    records: List[EpochRecord] = []

    for epoch in range(1, config.epochs + 1):
        perm = order_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            losses, grads = forward_backward(
                mlp, x_train[idx], y_train[idx], state.pi[idx]
            )
            state.loss_buffer[idx] = losses
            scale = config.learning_rate / len(idx)
            for key in velocity:
                velocity[key] = config.momentum * velocity[key] - scale * grads[key]
                setattr(mlp, key, getattr(mlp, key) + velocity[key])

        val_acc = _accuracy(mlp, *noisy_val_set)
        state.val_acc_history.append(val_acc)
        tau_star = float("nan")

        if robust:
            update = capped_estep(state.loss_buffer, None, config.estep)
            if update.degenerate:
                logger.warning("degenerate epoch E-step; keeping previous weights")
            else:
                state.pi = update.weights
            if state.overfit:
                candidate = select_tau(state.pi, config.tau_bound)
                feasible = candidate <= float(np.max(state.pi))
                tau_star = candidate if feasible else float("nan")
                if config.truncation and feasible:
                    state.tau = max(state.tau, candidate)
                state.pi = truncate(state.pi, state.tau)
            else:
                state.overfit = detect_overfit(state.val_acc_history)

        test_acc = _accuracy(mlp, *test_set) if test_set is not None else float("nan")
        corr_tau, clean_tau = _flag_fractions(state.pi, state.tau, corrupted_mask)
        corr_star, clean_star = _flag_fractions(state.pi, tau_star, corrupted_mask)
        records.append(
            EpochRecord(
                epoch=epoch,
                val_accuracy=val_acc,
                test_accuracy=test_acc,
                epsilon_hat=float(1.0 - state.pi.mean()),
                tau=state.tau,
                tau_star=tau_star,
                corrupted_below_tau=corr_tau,
                clean_below_tau=clean_tau,
                corrupted_below_tau_star=corr_star,
                clean_below_tau_star=clean_star,
            )
        )

    return mlp, state, records
