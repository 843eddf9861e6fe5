import numpy as np
import pytest

from srvrpg.mdp import TabularMdp
from srvrpg.oracle import (
    estimator_moments,
    exact_gradient,
    exact_gradient_derivative_form,
    exact_performance,
    finite_diff_gradient,
    rel_error,
    trajectory_probs,
)
from srvrpg.policy import SoftmaxPolicy

GAMMA = 0.9


def test_zero_rewards(oracle_mdp, softmax):
    mdp = TabularMdp(oracle_mdp.transition, np.zeros((2, 2)), oracle_mdp.initial_dist, 3)
    assert exact_performance(mdp, softmax, np.ones(4), GAMMA) == 0.0


def test_geometric_sum_single_state():
    mdp = TabularMdp(np.ones((1, 2, 1)), np.ones((1, 2)), np.array([1.0]), 3)
    pol = SoftmaxPolicy(1, 2)
    for theta in ([0.0, 0.0], [3.0, -1.0]):
        assert exact_performance(mdp, pol, np.array(theta), 0.5) == pytest.approx(1.75, abs=1e-15)


def test_symmetric_mdp_has_zero_gradient():
    P = np.full((2, 2, 2), 0.5)
    r = np.array([[1.0, 1.0], [-0.5, -0.5]])
    mdp = TabularMdp(P, r, np.array([0.5, 0.5]), 3)
    g = exact_gradient(mdp, SoftmaxPolicy(2, 2), np.zeros(4), GAMMA)
    assert np.max(np.abs(g)) <= 1e-15


def test_gradient_matches_finite_differences(oracle_mdp, softmax, rng):
    for _ in range(20):
        theta = rng.normal(size=4)
        fd = finite_diff_gradient(lambda t: exact_performance(oracle_mdp, softmax, t, GAMMA), theta, 1e-5)
        assert rel_error(exact_gradient(oracle_mdp, softmax, theta, GAMMA), fd) <= 1e-6


def test_two_gradient_forms_agree(oracle_mdp, softmax, rng):
    for _ in range(20):
        theta = rng.normal(0, 2, 4)
        a = exact_gradient(oracle_mdp, softmax, theta, GAMMA)
        b = exact_gradient_derivative_form(oracle_mdp, softmax, theta, GAMMA)
        assert np.max(np.abs(a - b)) <= 1e-12


def test_probabilities_normalize(oracle_mdp, softmax, rng):
    for _ in range(20):
        _, p = trajectory_probs(oracle_mdp, softmax, rng.normal(0, 3, 4))
        assert abs(p.sum() - 1.0) <= 1e-10


def test_finite_difference_examples():
    g = finite_diff_gradient(lambda t: float(t @ t), np.array([1.0, 2.0]), 1e-5)
    assert np.max(np.abs(g - [2.0, 4.0])) <= 1e-8
    assert np.all(finite_diff_gradient(lambda t: 3.0, np.ones(3)) == 0)
    c = np.array([0.5, -2.0, 4.0])
    assert np.allclose(finite_diff_gradient(lambda t: float(c @ t), np.ones(3)), c, rtol=0, atol=1e-9)
    with pytest.raises(ValueError):
        finite_diff_gradient(lambda t: 0.0, np.ones(2), 0.0)


def test_deterministic_setup_has_zero_variance():
    P = np.zeros((2, 2, 2))
    P[:, 0, 0] = P[:, 1, 1] = 1.0
    mdp = TabularMdp(P, np.array([[1.0, 0.0], [0.5, 2.0]]), np.array([1.0, 0.0]), 3)
    pol = SoftmaxPolicy(2, 2)
    theta = np.array([0.0, 60.0, 0.0, 60.0])  # action 1 with probability 1 - 1e-26
    _, var = estimator_moments(mdp, pol, theta, "gpomdp", GAMMA)
    assert var == pytest.approx(0.0, abs=1e-20)


def test_pgt_variance_below_reinforce(oracle_mdp, softmax, rng):
    assert np.all(oracle_mdp.reward != 0)
    for _ in range(10):
        theta = rng.normal(size=4)
        _, v_r = estimator_moments(oracle_mdp, softmax, theta, "reinforce", GAMMA)
        _, v_p = estimator_moments(oracle_mdp, softmax, theta, "pgt", GAMMA)
        assert v_p <= v_r


def test_rel_error_floor():
    assert rel_error([0.0], [0.0]) == 0.0
    assert rel_error([1.0], [1.0 + 1e-9]) < 1e-9
