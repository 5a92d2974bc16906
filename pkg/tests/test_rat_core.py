import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from attacks import AttackConfig, pgd, pgd_invocations, reset_pgd_invocations
from dataset_utils import SyntheticSpec, gen_synthetic
from model import get_model
from optimizer import SgdState
from rat_core import (RatConfig, RatConfigError, TrainingStreams, ars_sample, dls_beta, dls_label,
                      rat_train_step, sample_direction, sample_perturbed, sat_train_step, st_train_step)

DEFAULT_SCALES = tuple(round(0.1 * i, 10) for i in range(21))


def streams(seed):
    return TrainingStreams(attack=np.random.default_rng([seed, 0]), ars=np.random.default_rng([seed, 1]))


def moons_batches(n_batches, batch_size=16, seed=0):
    data = gen_synthetic(SyntheticSpec('two_moons', n_batches * batch_size, 0.1, seed=seed))
    return [(data.inputs[i:i + batch_size], data.labels[i:i + batch_size])
            for i in range(0, len(data), batch_size)]


def test_sample_direction_endpoints():
    x_f = np.array([[0.1, 0.2]])
    x_e = np.array([[0.3, 0.6]])
    assert np.array_equal(sample_direction(x_f, x_e, None, lam=1.0)[0], x_f)
    assert np.array_equal(sample_direction(x_f, x_e, None, lam=0.0)[0], x_e)
    x_bar, lam = sample_direction(x_e, x_e, np.random.default_rng(0))
    assert np.array_equal(x_bar, x_e)
    assert 0 <= lam[0] < 1


def test_sample_direction_stays_on_segment():
    rng = np.random.default_rng(1)
    x_f, x_e = rng.uniform(size=(100, 3)), rng.uniform(size=(100, 3))
    x_bar, lam = sample_direction(x_f, x_e, rng)
    np.testing.assert_allclose(x_bar, lam[:, None] * x_f + (1 - lam[:, None]) * x_e, atol=1e-12)


def test_sample_perturbed_examples():
    x = np.array([[0.2, 0.4]])
    x_bar = np.array([[0.3, 0.5]])
    assert np.array_equal(sample_perturbed(x, x_bar, 0.5, None, None, scale=0.0).x_hat, x)
    np.testing.assert_allclose(sample_perturbed(x, x_bar, 0.5, None, None, scale=1.0).x_hat, x_bar, atol=1e-12)
    clipped = sample_perturbed(np.full((1, 4), 0.9), np.full((1, 4), 1.1), 0.5, None, None, scale=2.0)
    assert np.array_equal(clipped.x_hat, np.ones((1, 4)))
    assert clipped.clipped.tolist() == [True]


def test_sample_perturbed_draws_from_scale_set():
    cfg = RatConfig(scale_set=(0.5, 1.0, 1.5))
    rng = np.random.default_rng(2)
    x = rng.uniform(0.3, 0.7, size=(200, 2))
    sample = sample_perturbed(x, x + 0.01, 0.5, cfg, rng)
    assert set(sample.scale.tolist()) == {0.5, 1.0, 1.5}


def test_dls_beta_examples():
    cfg = RatConfig(scale_set=DEFAULT_SCALES, beta_max=1.0, beta_min=0.1)
    assert dls_beta(0.0, cfg) == 1.0
    assert dls_beta(2.0, cfg) == pytest.approx(0.1)
    assert dls_beta(1.0, cfg) == pytest.approx(0.55)
    constant = RatConfig(scale_set=DEFAULT_SCALES, beta_max=0.8, beta_min=0.8)
    assert dls_beta(1.3, constant) == pytest.approx(0.8)
    with pytest.raises(RatConfigError):
        dls_beta(2.5, cfg)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 2.0), st.floats(0.0, 2.0))
def test_dls_beta_is_non_increasing(a, b, s1, s2):
    beta_min, beta_max = sorted((a, b))
    if beta_max == 0:
        return
    cfg = RatConfig(scale_set=DEFAULT_SCALES, beta_max=beta_max, beta_min=beta_min)
    low, high = sorted((s1, s2))
    assert dls_beta(low, cfg) >= dls_beta(high, cfg)


def test_dls_label_examples():
    np.testing.assert_allclose(dls_label(0, 2, 1.0).probs, [1.0, 0.0])
    np.testing.assert_allclose(dls_label(0, 2, 0.55).probs, [0.55, 0.45])
    np.testing.assert_allclose(dls_label(3, 10, 0.1).probs, np.full(10, 0.1), atol=1e-15)
    batch = dls_label(np.array([0, 2]), 3, np.array([1.0, 0.4]))
    np.testing.assert_allclose(batch.probs, [[1.0, 0.0, 0.0], [0.3, 0.3, 0.4]])


def test_dls_label_rejects_bad_inputs():
    with pytest.raises(RatConfigError):
        dls_label(0, 1, 1.0)
    with pytest.raises(RatConfigError):
        dls_label(0, 3, 1.2)
    with pytest.raises(RatConfigError):
        dls_label(3, 3, 0.5)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 20), st.floats(0.0, 1.0), st.data())
def test_soft_labels_are_distributions(num_classes, beta, data):
    y = data.draw(st.integers(0, num_classes - 1))
    probs = dls_label(y, num_classes, beta).probs
    assert np.all(probs >= 0)
    assert abs(probs.sum() - 1.0) < 1e-7
    assert probs[y] == beta
    if beta >= 1.0 / num_classes:
        assert probs[y] >= probs.max() - 1e-15


def test_rat_config_validation():
    with pytest.raises(RatConfigError):
        RatConfig(scale_set=(1.0, 0.5))
    with pytest.raises(RatConfigError):
        RatConfig(scale_set=(0.5, 1.0), max_scale=2.0)
    with pytest.raises(RatConfigError, match='beta_min'):
        RatConfig(scale_set=(0.5, 1.0), beta_max=0.5, beta_min=0.6)
    with pytest.raises(RatConfigError):
        RatConfig(scale_set=(0.5, 1.0), samples_per_point=0)
    assert RatConfig(scale_set=DEFAULT_SCALES).max_scale == 2.0
    assert RatConfig(scale_set=(0.0,)).max_scale == 0.0


def test_ars_sample_shapes_and_labels():
    model = get_model([2, 16, 2], seed=0)
    x, y = moons_batches(1)[0]
    cfg = RatConfig(scale_set=DEFAULT_SCALES, samples_per_point=3)
    rng = np.random.default_rng(0)
    path = pgd(model, x, y, AttackConfig(0.1, 0.025, 10), rng)
    pairs = ars_sample(x, y, path, cfg, rng, 2)
    assert len(pairs) == 3
    for perturbed, label in pairs:
        assert perturbed.x_hat.shape == x.shape
        assert np.all((perturbed.x_hat >= 0) & (perturbed.x_hat <= 1))
        np.testing.assert_allclose(label.beta, 1.0 - perturbed.scale * 0.45)
        np.testing.assert_allclose(label.probs.sum(axis=1), 1.0)


def test_ars_samples_inside_budget_for_unit_scales():
    model = get_model([2, 16, 2], seed=1)
    x, y = moons_batches(1, batch_size=64)[0]
    cfg = RatConfig(scale_set=(0.0, 0.25, 0.5, 0.75, 1.0), samples_per_point=4)
    rng = np.random.default_rng(1)
    path = pgd(model, x, y, AttackConfig(0.1, 0.025, 10), rng)
    for perturbed, _ in ars_sample(x, y, path, cfg, rng, 2):
        assert np.all(np.abs(perturbed.x_hat - x) <= 0.1 + 1e-6)


def test_collapsed_unit_scale_sampling_returns_end_points():
    model = get_model([2, 16, 2], seed=2)
    x, y = moons_batches(1)[0]
    cfg = RatConfig(scale_set=(1.0,), samples_per_point=1, beta_max=1.0, beta_min=1.0, collapse_to_end=True)
    rng = np.random.default_rng(2)
    path = pgd(model, x, y, AttackConfig(0.1, 0.025, 10), rng)
    (perturbed, label), = ars_sample(x, y, path, cfg, rng, 2)
    assert np.array_equal(perturbed.x_hat.astype(np.float32), path.end_point)
    assert np.array_equal(label.probs.argmax(axis=1), y)
    assert np.all(label.probs.max(axis=1) == 1.0)


def test_rat_reduces_to_sat():
    attack_cfg = AttackConfig(0.1, 0.025, 5)
    rat_cfg = RatConfig(scale_set=(1.0,), samples_per_point=1, beta_max=1.0, beta_min=1.0, collapse_to_end=True)
    sat_model = get_model([2, 16, 16, 2], seed=3)
    rat_model = sat_model.copy()
    sat_state, rat_state = SgdState(0.05), SgdState(0.05)
    sat_streams, rat_streams = streams(3), streams(3)
    for batch in moons_batches(50, seed=3):
        sat_train_step(sat_model, batch, attack_cfg, sat_state, sat_streams)
        rat_train_step(rat_model, batch, attack_cfg, rat_cfg, rat_state, rat_streams)
        for a, b in zip(sat_model.get_weights(), rat_model.get_weights()):
            np.testing.assert_allclose(a, b, atol=1e-6)


def test_rat_with_zero_scale_reduces_to_st():
    attack_cfg = AttackConfig(0.1, 0.025, 3)
    rat_cfg = RatConfig(scale_set=(0.0,), samples_per_point=1, beta_max=1.0, beta_min=1.0)
    st_model = get_model([2, 16, 2], seed=4)
    rat_model = st_model.copy()
    st_state, rat_state = SgdState(0.05), SgdState(0.05)
    rat_streams = streams(4)
    for batch in moons_batches(20, seed=4):
        st_train_step(st_model, batch, st_state)
        rat_train_step(rat_model, batch, attack_cfg, rat_cfg, rat_state, rat_streams)
    for a, b in zip(st_model.get_weights(), rat_model.get_weights()):
        np.testing.assert_allclose(a, b, atol=1e-6)


def test_sat_without_budget_reduces_to_st():
    attack_cfg = AttackConfig(0.0, 0.025, 3, random_start=False)
    st_model = get_model([2, 16, 2], seed=5)
    sat_model = st_model.copy()
    st_state, sat_state = SgdState(0.05), SgdState(0.05)
    sat_streams = streams(5)
    for batch in moons_batches(10, seed=5):
        st_train_step(st_model, batch, st_state)
        sat_train_step(sat_model, batch, attack_cfg, sat_state, sat_streams)
    for a, b in zip(st_model.get_weights(), sat_model.get_weights()):
        assert np.array_equal(a, b)


def test_rat_step_attacks_each_point_once():
    model = get_model([2, 16, 2], seed=6)
    x, y = moons_batches(1, batch_size=24)[0]
    reset_pgd_invocations()
    metrics = rat_train_step(model, (x, y), AttackConfig(0.1, 0.025, 5),
                             RatConfig(scale_set=DEFAULT_SCALES, samples_per_point=2), SgdState(0.05), streams(6))
    assert pgd_invocations() == 24
    assert metrics.n_samples == 48
    assert np.isfinite(metrics.loss) and metrics.loss >= 0
    assert 0 <= metrics.pgd_fail_frac <= 1
    assert 0 <= metrics.mean_scale <= 2
    assert 0.1 <= metrics.mean_beta <= 1


def test_rat_step_is_deterministic():
    batch = moons_batches(1)[0]
    results = []
    for _ in range(2):
        model = get_model([2, 16, 2], seed=7)
        rat_train_step(model, batch, AttackConfig(0.1, 0.025, 5), RatConfig(scale_set=DEFAULT_SCALES),
                       SgdState(0.05), streams(7))
        results.append(model.get_weights())
    for a, b in zip(*results):
        assert np.array_equal(a, b)


def test_standard_training_reduces_loss():
    rng = np.random.default_rng(8)
    labels = rng.integers(2, size=64)
    inputs = np.where(labels[:, None] == 1, 0.75, 0.25) + rng.uniform(-0.1, 0.1, size=(64, 2))
    model = get_model([2, 8, 2], seed=8)
    state = SgdState(0.1)
    losses = [st_train_step(model, (inputs, labels), state).loss for _ in range(100)]
    assert np.mean(losses[-10:]) < losses[0]


def test_ten_thousand_region_samples_stay_feasible():
    rng = np.random.default_rng(10)
    model = get_model([5, 32, 3], seed=10)
    x = rng.uniform(size=(2500, 5)).astype(np.float32)
    y = rng.integers(3, size=2500)
    epsilon = 0.1
    path = pgd(model, x, y, AttackConfig(epsilon, 0.025, 10), rng)
    unit = ars_sample(x, y, path, RatConfig(scale_set=(0.0, 0.25, 0.5, 0.75, 1.0), samples_per_point=4), rng, 3)
    assert sum(len(perturbed.x_hat) for perturbed, _ in unit) == 10000
    for perturbed, _ in unit:
        assert np.all(np.abs(perturbed.x_hat - x) <= epsilon + 1e-6)
        assert np.all((perturbed.x_hat >= 0) & (perturbed.x_hat <= 1))
    wide = ars_sample(x, y, path, RatConfig(scale_set=DEFAULT_SCALES, samples_per_point=4), rng, 3)
    for perturbed, _ in wide:
        assert np.all((perturbed.x_hat >= 0) & (perturbed.x_hat <= 1))
        assert np.all(np.abs(perturbed.x_hat - x) <= 2 * epsilon + 1e-6)
