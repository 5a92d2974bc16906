import numpy as np
import pytest
import tensorflow as tf
from hypothesis import given, settings, strategies as st

from attacks import (AttackConfig, AttackPath, _loss_gradient, cw_pgd, fgsm, first_end_points, pgd,
                     pgd_invocations, reset_pgd_invocations)
from conftest import linear_model
from model import forward, get_model, predict
from scores_losses import cw_margin


def random_problem(seed, d=5, n=8, c=3):
    rng = np.random.default_rng(seed)
    model = get_model([d, 16, c], seed=seed)
    x = rng.uniform(size=(n, d)).astype(np.float32)
    y = rng.integers(c, size=n)
    return model, x, y, rng


def test_fgsm_with_zero_budget_returns_input():
    model, x, y, _ = random_problem(0)
    assert np.array_equal(fgsm(model, x, y, 0.0), x)


def test_fgsm_with_positive_gradient():
    model = linear_model()
    x = np.array([[0.2, 0.5], [0.97, 0.4]], dtype=np.float32)
    adversarial = fgsm(model, x, [0, 0], 0.05)
    np.testing.assert_allclose(adversarial, np.minimum(x + np.float32(0.05), 1.0), rtol=0, atol=1e-7)
    assert adversarial[1, 0] == 1.0


def test_fgsm_equals_one_step_pgd():
    for seed in range(100):
        model, x, y, rng = random_problem(seed, n=4)
        epsilon = float(rng.uniform(0.0, 0.3))
        path = pgd(model, x, y, AttackConfig(epsilon, epsilon, 1, random_start=False))
        assert np.array_equal(fgsm(model, x, y, epsilon), path.end_point)


def test_trajectories_stay_in_budget():
    for seed in range(10):
        model, x, y, rng = random_problem(seed, n=1000)
        epsilon = float(rng.uniform(0.01, 0.3))
        path = pgd(model, x, y, AttackConfig(epsilon, epsilon / 4, 10), rng)
        assert path.points.shape == (10, 1000, 5)
        assert np.all(np.abs(path.points - x[None]) <= epsilon + 1e-6)
        assert np.all((path.points >= 0) & (path.points <= 1))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 0.5), st.floats(0.001, 0.5), st.integers(1, 8), st.booleans(), st.integers(0, 2 ** 32 - 1))
def test_every_iterate_is_feasible(epsilon, alpha, iterations, start, seed):
    model, x, y, rng = random_problem(seed % 1000, n=6)
    path = pgd(model, x, y, AttackConfig(epsilon, alpha, iterations, start), rng)
    assert np.all(np.abs(path.points - x[None]) <= epsilon + 1e-6)
    assert np.all((path.points >= 0) & (path.points <= 1))
    end = cw_pgd(model, x, y, AttackConfig(epsilon, alpha, iterations, start), rng)
    assert np.all(np.abs(end - x) <= epsilon + 1e-6)


def test_linear_model_closed_form():
    model = linear_model()
    x = np.array([[0.2, 0.3]], dtype=np.float32)
    epsilon, alpha, iterations = 0.1, 0.03, 6
    path = pgd(model, x, [0], AttackConfig(epsilon, alpha, iterations, random_start=False))
    for t in range(iterations):
        expected = np.clip(x + min((t + 1) * alpha, epsilon), 0, 1)
        np.testing.assert_allclose(path.points[t], expected, atol=1e-6)


def test_zero_budget_path_stays_at_input():
    model, x, y, rng = random_problem(1)
    path = pgd(model, x, y, AttackConfig(0.0, 0.1, 5), rng)
    assert np.all(path.points == x[None])
    wrong = predict(forward(model, x).numpy()) != y
    assert np.array_equal(path.success, np.repeat(wrong[None], 5, axis=0))
    assert np.array_equal(path.found, wrong)


def test_success_flags_match_iterates():
    model, x, y, rng = random_problem(2, n=50)
    path = pgd(model, x, y, AttackConfig(0.3, 0.05, 8), rng)
    for t in range(8):
        assert np.array_equal(path.success[t], predict(forward(model, path.points[t]).numpy()) != y)
    for i in range(50):
        hits = np.flatnonzero(path.success[:, i])
        assert path.first_adv_index[i] == (hits[0] if hits.size else -1)


def test_first_end_points():
    points = np.arange(3 * 2 * 2, dtype=np.float32).reshape(3, 2, 2) / 20
    success = np.array([[False, False], [True, False], [True, False]])
    path = AttackPath(benign=np.zeros((2, 2)), labels=np.zeros(2), points=points, success=success,
                      first_adv_index=np.array([1, -1]))
    x_f, x_e, found = first_end_points(path)
    assert np.array_equal(x_f[0], points[1, 0])
    assert np.array_equal(x_e[0], points[2, 0])
    assert np.array_equal(x_f[1], points[2, 1])
    assert found.tolist() == [True, False]


def test_same_seed_gives_same_path():
    model, x, y, _ = random_problem(3)
    cfg = AttackConfig(0.1, 0.02, 7)
    first = pgd(model, x, y, cfg, np.random.default_rng(42))
    second = pgd(model, x, y, cfg, np.random.default_rng(42))
    assert np.array_equal(first.points, second.points)
    assert np.array_equal(first.success, second.success)


def test_random_start_needs_generator():
    model, x, y, _ = random_problem(3)
    with pytest.raises(ValueError):
        pgd(model, x, y, AttackConfig(0.1, 0.02, 2, random_start=True))


def test_invocation_counter_counts_benign_points():
    model, x, y, rng = random_problem(4, n=7)
    reset_pgd_invocations()
    pgd(model, x, y, AttackConfig(0.1, 0.02, 5), rng)
    assert pgd_invocations() == 7
    pgd(model, x[:3], y[:3], AttackConfig(0.1, 0.02, 5), rng)
    assert pgd_invocations() == 10


def test_invalid_attack_config():
    with pytest.raises(ValueError):
        AttackConfig(-0.1, 0.01, 1)
    with pytest.raises(ValueError):
        AttackConfig(0.1, 0.0, 1)
    with pytest.raises(ValueError):
        AttackConfig(0.1, 0.01, 0)


def test_cw_with_zero_budget_returns_input():
    model, x, y, rng = random_problem(5)
    assert np.array_equal(cw_pgd(model, x, y, AttackConfig(0.0, 0.01, 3), rng), x)


def test_cw_margin_gradient_matches_finite_differences():
    rng = np.random.default_rng(6)
    model = get_model([4, 10, 3], seed=6, dtype=tf.float64)
    x = rng.uniform(size=(3, 4))
    y = np.array([0, 1, 2])
    grad, _ = _loss_gradient(model, x, y, 'cw_margin')

    def margin_sum(points):
        return float(tf.reduce_sum(cw_margin(forward(model, points), y)))

    h = 1e-6
    for index in np.ndindex(x.shape):
        plus, minus = x.copy(), x.copy()
        plus[index] += h
        minus[index] -= h
        assert grad[index] == pytest.approx((margin_sum(plus) - margin_sum(minus)) / (2 * h), abs=1e-5)


def test_cw_binary_margin():
    logits = tf.constant([[1.0, 3.0], [2.0, -1.0]], dtype=tf.float64)
    np.testing.assert_allclose(cw_margin(logits, [0, 0]).numpy(), [2.0, -3.0])


def test_invocation_counter_under_threads():
    from concurrent.futures import ThreadPoolExecutor

    model, x, y, _ = random_problem(9, n=5)
    cfg = AttackConfig(0.1, 0.02, 2, random_start=False)
    reset_pgd_invocations()
    with ThreadPoolExecutor(max_workers=4) as pool:
        list(pool.map(lambda _: pgd(model, x, y, cfg), range(16)))
    assert pgd_invocations() == 80
