import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from srvrpg.mdp import (
    CartPole,
    ContextualBandit,
    EnvState,
    EnvironmentError_,
    MountainCar,
    Pendulum,
    TabularMdp,
    enumerate_trajectories,
    make_env,
    rollout,
    rollout_batch,
)
from srvrpg.oracle import exact_performance
from srvrpg.policy import SoftmaxPolicy, make_policy


def chain_mdp(horizon=3):
    # 3-state deterministic chain: action 1 moves right, action 0 stays
    P = np.zeros((3, 2, 3))
    for s in range(3):
        P[s, 0, s] = 1
        P[s, 1, min(s + 1, 2)] = 1
    r = np.array([[0.0, 0.1], [0.0, 0.5], [1.0, 1.0]])
    return TabularMdp(P, r, np.array([1.0, 0, 0]), horizon)


def test_tabular_reset_degenerate_start(rng):
    mdp = TabularMdp(np.full((2, 1, 2), 0.5), np.zeros((2, 1)), np.array([1.0, 0.0]), 2)
    assert all(mdp.reset(rng).values[0] == 0 for _ in range(50))


def test_cartpole_reset_range(rng):
    s = CartPole().reset_batch(1000, rng)
    assert np.all(np.abs(s) <= 0.05)


@pytest.mark.parametrize("env", [CartPole(), MountainCar(), Pendulum(), chain_mdp()])
def test_reset_is_deterministic(env):
    a = env.reset(np.random.default_rng(3)).values
    b = env.reset(np.random.default_rng(3)).values
    assert np.array_equal(a, b)


def test_tabular_step_frequencies(oracle_mdp):
    n = 100_000
    rng = np.random.default_rng(5)
    for s in range(2):
        for a in range(2):
            nxt, _, _ = oracle_mdp.step_batch(np.full((n, 1), s), np.full(n, a), rng)
            freq = np.mean(nxt[:, 0] == 1)
            p = oracle_mdp.transition[s, a, 1]
            se = np.sqrt(p * (1 - p) / n)
            assert abs(freq - p) <= 3 * se


def test_pendulum_upright_fixed_point():
    env = Pendulum()
    nxt, r, done = env.step(EnvState(np.array([0.0, 0.0]), 0), 0.0)
    assert nxt.values[0] == 0.0 and nxt.values[1] == 0.0
    assert r == 0.0 and not done


def test_cartpole_fails_past_threshold():
    env = CartPole()
    _, _, done = env.step(EnvState(np.array([0.0, 0.0, 0.3, 0.0]), 0), 0.0)
    assert done
    _, _, done = env.step(EnvState(np.array([0.0, 0.0, 0.01, 0.0]), 0), 0.0)
    assert not done


def test_done_at_horizon():
    env = Pendulum(horizon=2)
    s = EnvState(np.array([1.0, 0.0]), 1)
    assert env.step(s, 0.0)[2]
    with pytest.raises(EnvironmentError_):
        env.step(EnvState(np.array([1.0, 0.0]), 2), 0.0)


@pytest.mark.parametrize("env", [CartPole(), MountainCar(), Pendulum()])
def test_non_finite_action_rejected(env):
    s = env.reset(np.random.default_rng(0))
    for bad in (np.nan, np.inf):
        with pytest.raises(EnvironmentError_):
            env.step(s, bad)


def test_actions_are_clamped():
    env = MountainCar()
    s = EnvState(np.array([-0.5, 0.0]), 0)
    big = env.step(s, 50.0)
    one = env.step(s, 1.0)
    assert np.array_equal(big[0].values, one[0].values)
    assert big[1] == one[1]


def test_mountaincar_goal_reward():
    env = MountainCar()
    nxt, r, done = env.step(EnvState(np.array([0.449, 0.07]), 0), 0.0)
    assert done and r == 100.0


def test_rollout_horizon_one(rng):
    pol = make_policy("linear", 4)
    traj = rollout(CartPole(), pol, np.zeros(5), 1, rng)
    assert traj.length == 1 and len(traj.actions) == 1 and len(traj.states) == 2


def test_rollout_deterministic_chain(rng):
    mdp = chain_mdp(horizon=3)
    pol = SoftmaxPolicy(3, 2)
    theta = np.tile([-50.0, 50.0], 3)  # always move right
    traj = rollout(mdp, pol, theta, 3, rng)
    assert traj.states[:, 0].tolist() == [0, 1, 2, 2]
    assert traj.actions.tolist() == [1, 1, 1]
    assert traj.rewards.tolist() == [0.1, 0.5, 1.0]


def test_rollout_mean_return_matches_exact(oracle_mdp):
    pol = SoftmaxPolicy(2, 2)
    theta = np.array([0.3, -0.2, 0.5, 0.1])
    gamma = 0.9
    batch = rollout_batch(
        oracle_mdp, lambda o, g, rows: pol.sample_action(theta, o, g), 10_000, 3, np.random.default_rng(11)
    )
    R = batch.discounted_returns(gamma)
    exact = exact_performance(oracle_mdp, pol, theta, gamma)
    assert abs(R.mean() - exact) <= 3 * R.std(ddof=1) / np.sqrt(len(R))


def test_terminated_episodes_are_truncated(rng):
    pol = make_policy("linear", 4)
    theta = np.array([0, 0, 0, 0, 10.0])  # constant push: the pole falls quickly
    batch = rollout_batch(CartPole(), lambda o, g, rows: pol.mean(theta, o), 5, 100, rng)
    assert np.all(batch.lengths < 100)
    for i, k in enumerate(batch.lengths):
        assert np.all(batch.rewards[i, k:] == 0)
        assert np.all(batch.states[i, k + 1 :] == batch.states[i, k])


@pytest.mark.parametrize("env_id", ["cartpole", "mountaincar", "pendulum"])
def test_rollouts_bitwise_reproducible(env_id):
    env = make_env(env_id, horizon=30)
    pol = make_policy("mlp8x8", env.obs_dim)
    theta = pol.init_params(np.random.default_rng(0))
    a = rollout(env, pol, theta, 30, np.random.default_rng(9))
    b = rollout(env, pol, theta, 30, np.random.default_rng(9))
    assert np.array_equal(a.states, b.states) and np.array_equal(a.actions, b.actions)
    assert np.array_equal(a.rewards, b.rewards)
    assert np.all(np.abs(a.rewards) <= env.reward_bound)


def test_bandit_rewards_bounded(rng):
    env = ContextualBandit(context_dim=3, horizon=4, reward_scale=2.0)
    pol = make_policy("linear", 3, sigma=3.0)
    batch = rollout_batch(env, lambda o, g, rows: pol.sample_action(np.ones(4), o, g), 500, 4, rng)
    assert np.all(np.abs(batch.rewards) <= 2.0)


def test_enumerate_single_path():
    mdp = TabularMdp(np.ones((1, 1, 1)), np.array([[1.0]]), np.array([1.0]), 2)
    batch, p = enumerate_trajectories(mdp)
    assert batch.n == 1 and p.tolist() == [1.0]


def test_enumerate_two_by_two(oracle_mdp):
    batch, env_prob = enumerate_trajectories(oracle_mdp)
    assert batch.n == 128
    pol_prob = 0.5**3
    assert abs(np.sum(env_prob * pol_prob) - 1.0) <= 1e-12


def test_enumerate_deterministic_chain():
    _, p = enumerate_trajectories(chain_mdp())
    assert set(np.unique(p)) <= {0.0, 1.0}


def test_enumeration_guard():
    mdp = TabularMdp(np.full((4, 4, 4), 0.25), np.zeros((4, 4)), np.full(4, 0.25), 6)
    with pytest.raises(ValueError, match="leaves"):
        enumerate_trajectories(mdp)


@st.composite
def mdp_and_policy(draw):
    S = draw(st.integers(1, 3))
    A = draw(st.integers(1, 3))
    H = draw(st.integers(1, 3))
    seed = draw(st.integers(0, 2**32 - 1))
    g = np.random.default_rng(seed)
    P = g.dirichlet(np.ones(S), size=(S, A))
    P /= P.sum(axis=2, keepdims=True)
    rho = g.dirichlet(np.ones(S))
    rho /= rho.sum()
    pi = g.dirichlet(np.ones(A), size=S)
    return TabularMdp(P, g.uniform(-1, 1, (S, A)), rho, H), pi


@settings(max_examples=60, deadline=None)
@given(mdp_and_policy())
def test_enumeration_mass_is_one(case):
    mdp, pi = case
    batch, env_prob = enumerate_trajectories(mdp)
    s = batch.states[:, :-1, 0].astype(int)
    total = np.sum(env_prob * np.prod(pi[s, batch.actions], axis=1))
    assert abs(total - 1.0) <= 1e-10


def test_tabular_file_roundtrip(tmp_path, oracle_mdp):
    path = tmp_path / "mdp.txt"
    oracle_mdp.save(path)
    loaded = make_env(f"tabular:{path}")
    assert np.array_equal(loaded.transition, oracle_mdp.transition)
    assert np.array_equal(loaded.reward, oracle_mdp.reward)
    assert np.array_equal(loaded.initial_dist, oracle_mdp.initial_dist)
    assert loaded.horizon == oracle_mdp.horizon


def test_tabular_file_format_by_hand(tmp_path):
    text = "2 1 4\n0.25 0.75\n1 0\n0.5 0.5\n1\n-1\n"
    mdp = TabularMdp.loads(text)
    assert mdp.n_states == 2 and mdp.n_actions == 1 and mdp.horizon == 4
    assert mdp.transition[1, 0].tolist() == [0.5, 0.5]
    assert mdp.reward[:, 0].tolist() == [1.0, -1.0]
    with pytest.raises(EnvironmentError_):
        TabularMdp.loads("2 1 4\n0.25 0.75\n1 0\n")


def test_invalid_tables_rejected():
    with pytest.raises(ValueError):
        TabularMdp(np.full((2, 1, 2), 0.6), np.zeros((2, 1)), np.array([0.5, 0.5]), 2)
    with pytest.raises(ValueError):
        TabularMdp(np.full((2, 1, 2), 0.5), np.zeros((2, 1)), np.array([0.5, 0.6]), 2)


def test_episode_counter(rng):
    env = CartPole()
    pol = make_policy("linear", 4)
    rollout_batch(env, lambda o, g, rows: pol.sample_action(np.zeros(5), o, g), 7, 10, rng)
    rollout(env, pol, np.zeros(5), 10, rng)
    assert env.episode_count == 8
