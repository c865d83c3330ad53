import math

import numpy as np
import pytest

from rlvi.core import capped_estep
from rlvi.nn import (
    EpochRecord,
    Mlp,
    NnConfig,
    detect_overfit,
    forward_backward,
    train_rlvi,
)
from rlvi.synth import flip_labels, gen_blobs

from conftest import assert_grad_close


def test_zero_weights_zero_gradient():
    mlp = Mlp.init(3, 4, 2, seed=0)
    x = np.random.default_rng(0).standard_normal((6, 3))
    y = np.array([0, 1, 0, 1, 1, 0])
    _, grads = forward_backward(mlp, x, y, np.zeros(6))
    for g in grads.values():
        np.testing.assert_array_equal(g, 0.0)


def test_uniform_logits_loss_is_log_classes():
    mlp = Mlp.init(2, 2, 3, seed=1)
    mlp.w2[:] = 0.0
    mlp.b2[:] = 0.0
    x = np.random.default_rng(1).standard_normal((5, 2))
    losses, _ = forward_backward(mlp, x, np.array([0, 1, 2, 0, 1]), np.ones(5))
    np.testing.assert_allclose(losses, math.log(3.0), atol=1e-12)


def test_mlp_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    mlp = Mlp.init(2, 2, 2, seed=2)
    x = rng.standard_normal((5, 2))
    y = np.array([0, 1, 1, 0, 1])
    w = rng.uniform(0.2, 1.0, size=5)
    _, grads = forward_backward(mlp, x, y, w)

    step = 1e-5
    for key in ("w1", "b1", "w2", "b2"):
        base = getattr(mlp, key).copy()
        numeric = np.zeros_like(base)
        it = np.nditer(base, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            pert = base.copy()
            pert[idx] += step
            setattr(mlp, key, pert)
            up = float(w @ forward_backward(mlp, x, y, w)[0])
            pert[idx] -= 2 * step
            setattr(mlp, key, pert)
            down = float(w @ forward_backward(mlp, x, y, w)[0])
            numeric[idx] = (up - down) / (2 * step)
            it.iternext()
        setattr(mlp, key, base)
        assert_grad_close(grads[key], numeric)


def test_forward_probabilities_sum_to_one():
    mlp = Mlp.init(4, 8, 3, seed=3)
    x = np.random.default_rng(3).standard_normal((10, 4))
    p = mlp.predict_proba(x)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(p >= 0)


def test_non_finite_activations_raise():
    mlp = Mlp.init(2, 2, 2, seed=4)
    mlp.w2[:] = np.inf
    with pytest.raises(FloatingPointError):
        forward_backward(mlp, np.ones((1, 2)), np.array([0]), np.ones(1))


def test_detect_overfit_cases():
    assert not detect_overfit([0.80, 0.82, 0.83])
    assert detect_overfit([0.80, 0.84, 0.81])  # 0.81 < 0.82
    assert not detect_overfit([0.5, 0.5])


def test_zero_loss_buffer_update_is_anchor():
    cfg = NnConfig()
    update = capped_estep(np.zeros(10), None, cfg.estep)
    np.testing.assert_allclose(update.weights, cfg.estep.init_mean, atol=1e-15)


def _toy_sets(seed, n=600, eps=0.4):
    pool = gen_blobs(n=n + n // 10, d=5, n_classes=3, seed=seed, spread=6.0)
    test = gen_blobs(n=300, d=5, n_classes=3, seed=seed + 1, centers=pool.centers)
    noisy, mask = flip_labels(pool.y, 3, "symmetric", eps, seed=seed)
    train = (pool.x[:n], noisy[:n])
    val = (pool.x[n:], noisy[n:])
    return train, val, (test.x, test.y), mask[:n]


def test_tau_monotone_and_weights_partition():
    train, val, test, mask = _toy_sets(seed=0)
    mlp = Mlp.init(5, 32, 3, seed=0)
    config = NnConfig(epochs=25, shuffle_seed=0)
    _, state, records = train_rlvi(
        mlp, train, val, config, test_set=test, corrupted_mask=mask
    )
    taus = [r.tau for r in records]
    assert all(b >= a for a, b in zip(taus, taus[1:]))
    # after truncation epochs, weights are 0 or >= tau
    assert np.all((state.pi == 0.0) | (state.pi >= state.tau))
    assert len(records) == config.epochs
    assert isinstance(records[0], EpochRecord)


def test_clean_blobs_match_plain_twin():
    gaps = []
    for seed in range(3):
        train, val, test, _ = _toy_sets(seed=seed, eps=0.0)
        config = NnConfig(epochs=30, shuffle_seed=seed)
        mlp_r = Mlp.init(5, 32, 3, seed=seed)
        _, _, rec_r = train_rlvi(mlp_r, train, val, config, test_set=test)
        mlp_s = Mlp.init(5, 32, 3, seed=seed)
        _, _, rec_s = train_rlvi(
            mlp_s, train, val, config, test_set=test, robust=False
        )
        gaps.append(abs(rec_r[-1].test_accuracy - rec_s[-1].test_accuracy))
    assert float(np.mean(gaps)) <= 0.02


def test_truncation_keeps_identification_from_decaying():
    train, val, test, mask = _toy_sets(seed=2, n=900)
    config_on = NnConfig(epochs=40, shuffle_seed=2)
    config_off = NnConfig(epochs=40, shuffle_seed=2, truncation=False)
    mlp_a = Mlp.init(5, 32, 3, seed=2)
    _, _, rec_on = train_rlvi(
        mlp_a, train, val, config_on, test_set=test, corrupted_mask=mask
    )
    mlp_b = Mlp.init(5, 32, 3, seed=2)
    _, _, rec_off = train_rlvi(
        mlp_b, train, val, config_off, test_set=test, corrupted_mask=mask
    )

    def last_identified(records):
        values = [
            r.corrupted_below_tau_star
            for r in records
            if np.isfinite(r.corrupted_below_tau_star)
        ]
        return values[-1] if values else float("nan")

    identified_on = last_identified(rec_on)
    identified_off = last_identified(rec_off)
    assert np.isfinite(identified_on)
    # without truncation the network memorizes flipped labels, so the
    # fraction of corrupted samples under the would-be threshold decays
    assert identified_off <= identified_on
