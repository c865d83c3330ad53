import numpy as np
import pytest

from rlvi.synth import (
    CorruptionSpec,
    flip_labels,
    gen_blobs,
    gen_gauss,
    gen_linreg,
    gen_logreg,
    gen_pca,
    gen_stream,
    make_rng,
    pert_sample,
)


def test_exact_corruption_counts():
    assert gen_linreg(n=40, eps=0.2, seed=0).corrupted.sum() == 8
    assert gen_logreg(n=100, eps=0.05, seed=0).corrupted.sum() == 5
    assert gen_pca(n=40, eps=0.2, seed=0).corrupted.sum() == 8
    data = gen_gauss(n=50, eps=0.2, seed=0)
    assert data.corrupted.sum() == 10
    assert (~data.corrupted).sum() == 40


def test_eps_zero_masks_clean():
    assert not gen_linreg(eps=0.0, seed=1).corrupted.any()
    assert not gen_logreg(eps=0.0, seed=1).corrupted.any()
    assert not gen_pca(eps=0.0, seed=1).corrupted.any()
    assert not gen_gauss(eps=0.0, seed=1).corrupted.any()


def test_determinism_bitwise():
    a = gen_linreg(seed=42)
    b = gen_linreg(seed=42)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.theta_star, b.theta_star)
    c = gen_linreg(seed=43)
    assert not np.array_equal(a.y, c.y)


def test_generators_are_stream_independent():
    # the same master seed drives every generator through distinct streams
    lin = gen_linreg(seed=7)
    log = gen_logreg(seed=7)
    assert lin.x.shape != log.x.shape or not np.allclose(
        lin.x[: log.x.shape[0], : log.x.shape[1]], log.x
    )


def test_logreg_labels_consistent_with_hyperplane():
    data = gen_logreg(n=200, eps=0.0, seed=3)
    scores = data.x @ data.theta_star[:-1] + data.theta_star[-1]
    np.testing.assert_array_equal(data.y, (scores >= 0).astype(float))


def test_logreg_flips_most_confident():
    data = gen_logreg(n=100, eps=0.05, seed=4)
    scores = np.abs(data.x @ data.theta_star[:-1] + data.theta_star[-1])
    flipped_scores = scores[data.corrupted]
    clean_scores = scores[~data.corrupted]
    assert flipped_scores.min() >= clean_scores.max() - 1e-12


def test_pca_clean_anisotropy():
    data = gen_pca(n=4000, eps=0.0, seed=5)
    along = data.z @ data.axis_star
    perp = np.array([-data.axis_star[1], data.axis_star[0]])
    across = data.z @ perp
    ratio = along.std() / across.std()
    assert 4.0 <= ratio <= 6.0


def test_gauss_truth_shapes():
    data = gen_gauss(seed=6)
    assert data.sigma_star.shape == (2, 2)
    eigs = np.linalg.eigvalsh(data.sigma_star)
    np.testing.assert_allclose(sorted(eigs), [1.0, 3.0], atol=1e-9)


def test_pert_sample_moments_and_support():
    rng = make_rng(0, (99,))
    draws = np.array([pert_sample(0.0, 0.1, 0.3, rng) for _ in range(100_000)])
    assert np.all((draws >= 0.0) & (draws <= 0.3))
    expected_mean = (0.0 + 4 * 0.1 + 0.3) / 6.0
    assert abs(draws.mean() - expected_mean) <= 0.01
    # histogram peak sits near the mode
    hist, edges = np.histogram(draws, bins=30, range=(0.0, 0.3))
    peak = 0.5 * (edges[np.argmax(hist)] + edges[np.argmax(hist) + 1])
    assert 0.05 <= peak <= 0.15


def test_pert_degenerate_interval():
    rng = make_rng(0, (98,))
    assert pert_sample(0.2, 0.2, 0.2, rng) == 0.2


def test_pert_rejects_bad_params():
    rng = make_rng(0, (97,))
    with pytest.raises(ValueError):
        pert_sample(0.3, 0.1, 0.2, rng)


def test_stream_protocol():
    batches = list(gen_stream(30, b=50, seed=8))
    assert len(batches) == 30
    for batch in batches:
        assert batch.train_x.shape == (50, 5)
        assert batch.test_x.shape == (50, 5)
        # flip count equals floor(level * original positive count)
        positives_now = int(np.sum(batch.train_y == 1.0))
        original_positives = positives_now + batch.n_flipped
        assert batch.n_flipped == int(batch.epsilon * original_positives)
        assert 0.0 <= batch.epsilon <= 0.3


def test_stream_no_flips_when_pert_zero():
    for batch in gen_stream(20, pert=(0.0, 0.0, 0.0), seed=9):
        assert batch.n_flipped == 0
        assert batch.epsilon == 0.0


def test_stream_determinism():
    a = list(gen_stream(5, seed=10))
    b = list(gen_stream(5, seed=10))
    for ba, bb in zip(a, b):
        np.testing.assert_array_equal(ba.train_x, bb.train_x)
        np.testing.assert_array_equal(ba.train_y, bb.train_y)
        np.testing.assert_array_equal(ba.test_y, bb.test_y)


def test_flip_labels_identity_at_zero():
    labels = np.array([0, 1, 2, 1, 0])
    flipped, mask = flip_labels(labels, 3, "symmetric", 0.0, seed=0)
    np.testing.assert_array_equal(flipped, labels)
    assert not mask.any()


def test_flip_labels_pairflip_rule():
    labels = np.arange(9) % 3
    flipped, mask = flip_labels(labels, 3, "pairflip", 0.67, seed=1)
    assert mask.sum() == 6
    np.testing.assert_array_equal(flipped[mask], (labels[mask] + 1) % 3)
    np.testing.assert_array_equal(flipped[~mask], labels[~mask])
    # the cyclic rule itself: 0,1,2 -> 1,2,0
    np.testing.assert_array_equal((np.array([0, 1, 2]) + 1) % 3, [1, 2, 0])


def test_flip_labels_symmetric_never_self():
    labels = np.repeat(np.arange(4), 50)
    for seed in range(5):
        flipped, mask = flip_labels(labels, 4, "symmetric", 0.5, seed=seed)
        assert mask.sum() == 100
        assert np.all(flipped[mask] != labels[mask])
        np.testing.assert_array_equal(flipped[~mask], labels[~mask])


def test_flip_labels_rejects_bad_args():
    with pytest.raises(ValueError):
        flip_labels(np.zeros(3, int), 3, "asymmetric", 0.2)
    with pytest.raises(ValueError):
        flip_labels(np.zeros(3, int), 3, "symmetric", 1.0)


def test_blobs_center_reuse_and_determinism():
    a = gen_blobs(n=100, d=4, n_classes=3, seed=11)
    b = gen_blobs(n=100, d=4, n_classes=3, seed=11)
    np.testing.assert_array_equal(a.x, b.x)
    test = gen_blobs(n=50, d=4, n_classes=3, seed=12, centers=a.centers)
    np.testing.assert_array_equal(test.centers, a.centers)
    np.testing.assert_allclose(np.linalg.norm(a.centers, axis=1), 6.0, atol=1e-12)


def test_corruption_spec_validation():
    CorruptionSpec(kind="pairflip", epsilon=0.2)
    CorruptionSpec(kind="label-flip-positive-only", pert=(0.0, 0.1, 0.3))
    with pytest.raises(ValueError):
        CorruptionSpec(kind="bogus", epsilon=0.2)
    with pytest.raises(ValueError):
        CorruptionSpec(kind="pairflip", epsilon=1.0)
    with pytest.raises(ValueError):
        CorruptionSpec(kind="pairflip", pert=(0.3, 0.1, 0.2))
    with pytest.raises(ValueError):
        CorruptionSpec(kind="pairflip")
