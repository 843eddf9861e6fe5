import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from srvrpg.estimators import (
    EstimatorError,
    estimate_batch,
    gpomdp_batch,
    gpomdp_grad,
    importance_weights,
    pgt_batch,
    pgt_grad,
    prefix_importance_weight,
    recursive_correction,
    recursive_update,
    reinforce_batch,
    reinforce_grad,
    weighted_gpomdp_batch,
    weighted_gpomdp_grad,
)
from srvrpg.mdp import Trajectory, random_tabular_mdp
from srvrpg.optimizer import sample
from srvrpg.oracle import enumeration, estimator_moments, exact_gradient, trajectory_probs
from srvrpg.policy import SoftmaxPolicy, make_policy

GAMMA = 0.9


def oracle_batch(mdp, pol, theta, n, seed):
    return sample(mdp, pol, theta, n, mdp.horizon, np.random.default_rng(seed))


def test_zero_rewards_give_zero(oracle_mdp, softmax, rng):
    batch = oracle_batch(oracle_mdp, softmax, np.ones(4), 20, 0)
    batch.rewards[:] = 0.0
    for g in (
        reinforce_batch(batch, softmax, np.ones(4), GAMMA),
        pgt_batch(batch, softmax, np.ones(4), GAMMA),
        gpomdp_batch(batch, softmax, np.ones(4), GAMMA),
        weighted_gpomdp_batch(batch, softmax, rng.normal(size=4), np.ones(4), GAMMA),
    ):
        assert np.all(g == 0)


def test_single_step_collapse(softmax):
    traj = Trajectory(np.array([[1.0], [0.0]]), np.array([1]), np.array([0.7]))
    theta = np.array([0.1, 0.2, -0.3, 0.4])
    expect = softmax.score(theta, np.array([1.0]), 1) * 0.7
    for fn in (reinforce_grad, pgt_grad, gpomdp_grad):
        assert np.allclose(fn(traj, softmax, theta, GAMMA), expect, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 8), st.floats(0.0, 0.999))
def test_pgt_equals_gpomdp(seed, H, gamma):
    rng = np.random.default_rng(seed)
    mdp = random_tabular_mdp(3, 2, H, seed=seed)
    pol = SoftmaxPolicy(3, 2)
    theta = rng.normal(0, 2, 6)
    batch = sample(mdp, pol, theta, 20, H, rng)
    b = rng.normal(size=H)
    assert np.max(np.abs(pgt_batch(batch, pol, theta, gamma) - gpomdp_batch(batch, pol, theta, gamma))) <= 1e-10
    diff = pgt_batch(batch, pol, theta, gamma, b) - gpomdp_batch(batch, pol, theta, gamma, b)
    assert np.max(np.abs(diff)) <= 1e-10


@pytest.mark.parametrize("name", ["reinforce", "pgt", "gpomdp"])
def test_exact_unbiasedness(oracle_mdp, softmax, name, rng):
    for _ in range(5):
        theta = rng.normal(size=4)
        mean, _ = estimator_moments(oracle_mdp, softmax, theta, name, GAMMA)
        assert np.max(np.abs(mean - exact_gradient(oracle_mdp, softmax, theta, GAMMA))) <= 1e-12


def test_baseline_keeps_unbiasedness(oracle_mdp, softmax):
    theta = np.array([0.3, -0.5, 0.8, 0.1])
    mean, _ = estimator_moments(oracle_mdp, softmax, theta, "gpomdp", GAMMA, baseline=[0.5, -0.2, 0.3])
    assert np.max(np.abs(mean - exact_gradient(oracle_mdp, softmax, theta, GAMMA))) <= 1e-12


def test_variance_ordering_pgt_below_reinforce(oracle_mdp, softmax):
    theta = np.array([0.3, -0.5, 0.8, 0.1])
    _, v_r = estimator_moments(oracle_mdp, softmax, theta, "reinforce", GAMMA)
    _, v_p = estimator_moments(oracle_mdp, softmax, theta, "pgt", GAMMA)
    assert v_p < v_r


def test_monte_carlo_gpomdp_mean(oracle_mdp, softmax):
    theta = np.array([0.3, -0.5, 0.8, 0.1])
    g = gpomdp_batch(oracle_batch(oracle_mdp, softmax, theta, 100_000, 1), softmax, theta, GAMMA)
    se = g.std(axis=0, ddof=1) / np.sqrt(len(g))
    assert np.all(np.abs(g.mean(axis=0) - exact_gradient(oracle_mdp, softmax, theta, GAMMA)) <= 4 * se)


def test_baseline_too_short(oracle_mdp, softmax):
    batch = oracle_batch(oracle_mdp, softmax, np.zeros(4), 3, 0)
    with pytest.raises(ValueError):
        gpomdp_batch(batch, softmax, np.zeros(4), GAMMA, baseline=[1.0])
    with pytest.raises(ValueError):
        estimate_batch("reinforce", batch, softmax, np.zeros(4), GAMMA, baseline=[0, 0, 0])
    with pytest.raises(ValueError):
        estimate_batch("natural", batch, softmax, np.zeros(4), GAMMA)


def test_non_finite_reward_is_an_error(oracle_mdp, softmax):
    batch = oracle_batch(oracle_mdp, softmax, np.zeros(4), 3, 0)
    batch.rewards[0, 0] = np.nan
    with pytest.raises(EstimatorError):
        gpomdp_batch(batch, softmax, np.zeros(4), GAMMA)


def test_weight_identity_policy(oracle_mdp, softmax):
    theta = np.array([0.2, 0.1, -0.4, 0.3])
    batch = oracle_batch(oracle_mdp, softmax, theta, 10, 2)
    assert np.all(importance_weights(batch, softmax, theta, theta) == 1.0)
    assert prefix_importance_weight(batch.trajectories()[0], softmax, theta, theta, 2) == 1.0
    assert np.array_equal(
        weighted_gpomdp_batch(batch, softmax, theta, theta, GAMMA), gpomdp_batch(batch, softmax, theta, GAMMA)
    )


def test_gaussian_weight_by_hand():
    pol = make_policy("linear", 1, sigma=1.0)
    traj = Trajectory(np.array([[0.0], [0.0]]), np.array([0.0]), np.array([1.0]))
    behavior, target = np.array([0.0, 0.0]), np.array([0.0, 1.0])  # bias weight sets the mean
    w = prefix_importance_weight(traj, pol, target, behavior, 0)
    assert w == pytest.approx(np.exp(-0.5), abs=1e-15)
    assert w == pytest.approx(0.6065306597, abs=1e-10)


def test_prefix_bounds(softmax, oracle_mdp):
    traj = oracle_batch(oracle_mdp, softmax, np.zeros(4), 1, 0).trajectories()[0]
    with pytest.raises(ValueError):
        prefix_importance_weight(traj, softmax, np.zeros(4), np.zeros(4), 3)


def test_prefix_weight_expectations(oracle_mdp, softmax, rng):
    batch, _ = enumeration(oracle_mdp)
    for _ in range(10):
        t1, t2 = rng.normal(size=4), rng.normal(size=4)
        _, p1 = trajectory_probs(oracle_mdp, softmax, t1)
        assert np.max(np.abs(p1 @ importance_weights(batch, softmax, t2, t1) - 1.0)) <= 1e-12


def test_change_of_measure(oracle_mdp, softmax, rng):
    batch, _ = enumeration(oracle_mdp)
    for _ in range(10):
        t1, t2 = rng.normal(size=4), rng.normal(size=4)
        _, p1 = trajectory_probs(oracle_mdp, softmax, t1)
        lhs = p1 @ weighted_gpomdp_batch(batch, softmax, t2, t1, GAMMA)
        assert np.max(np.abs(lhs - exact_gradient(oracle_mdp, softmax, t2, GAMMA))) <= 1e-12


def test_weight_variance_shrinks_with_distance(oracle_mdp, softmax):
    batch, _ = enumeration(oracle_mdp)
    behavior = np.array([0.2, -0.1, 0.4, 0.0])
    direction = np.array([1.0, -2.0, 0.5, 1.5])
    _, p = trajectory_probs(oracle_mdp, softmax, behavior)
    variances = []
    for scale in (1.0, 0.5, 0.25, 0.1, 0.05, 0.01):
        w = importance_weights(batch, softmax, behavior + scale * direction, behavior)[:, -1]
        variances.append(p @ (w - 1.0) ** 2)
    assert all(a > b for a, b in zip(variances, variances[1:]))


def test_weight_cap_logs(oracle_mdp, softmax, caplog):
    batch = oracle_batch(oracle_mdp, softmax, np.zeros(4), 50, 0)
    target = np.array([5.0, -5.0, 5.0, -5.0])
    with caplog.at_level(logging.WARNING):
        w = importance_weights(batch, softmax, target, np.zeros(4), cap=2.0)
    assert w.max() <= 2.0
    assert "clipped" in caplog.text


def test_huge_weight_is_flagged(caplog):
    pol = make_policy("linear", 1, sigma=0.1)
    traj = Trajectory(np.zeros((2, 1)), np.array([0.0]), np.array([1.0]))
    with caplog.at_level(logging.WARNING):
        prefix_importance_weight(traj, pol, np.array([0.0, 0.0]), np.array([0.0, 0.8]), 0)
    assert "exceeds" in caplog.text


def test_recursive_update_fixed_point(oracle_mdp, softmax, rng):
    theta = rng.normal(size=4)
    batch = oracle_batch(oracle_mdp, softmax, theta, 10, 3)
    v_prev = rng.normal(size=4)
    assert np.array_equal(recursive_update(v_prev, batch, softmax, theta, theta, GAMMA), v_prev)
    assert np.array_equal(recursive_update(np.zeros(4), batch, softmax, theta, theta, GAMMA), np.zeros(4))


def test_recursive_correction_expectation(oracle_mdp, softmax, rng):
    batch, _ = enumeration(oracle_mdp)
    for _ in range(10):
        prev, cur = rng.normal(size=4), rng.normal(size=4)
        _, p = trajectory_probs(oracle_mdp, softmax, cur)
        corr = p @ recursive_correction(batch, softmax, cur, prev, GAMMA)
        expect = exact_gradient(oracle_mdp, softmax, cur, GAMMA) - exact_gradient(oracle_mdp, softmax, prev, GAMMA)
        assert np.max(np.abs(corr - expect)) <= 1e-12


def test_recursive_update_empty_batch(softmax):
    with pytest.raises(ValueError):
        recursive_update(np.zeros(4), [], softmax, np.zeros(4), np.zeros(4), GAMMA)


def test_single_and_batch_agree(oracle_mdp, softmax, rng):
    theta, other = rng.normal(size=4), rng.normal(size=4)
    batch = oracle_batch(oracle_mdp, softmax, theta, 5, 4)
    trajs = batch.trajectories()
    assert np.allclose(weighted_gpomdp_grad(trajs[3], softmax, other, theta, GAMMA),
                       weighted_gpomdp_batch(batch, softmax, other, theta, GAMMA)[3], atol=1e-14)
    assert np.allclose(gpomdp_grad(trajs[1], softmax, theta, GAMMA), gpomdp_batch(batch, softmax, theta, GAMMA)[1], atol=1e-14)
