"""Acceptance checks shared by the ``verify`` command and the test suite.

Each check returns a :class:`CheckResult`; none of them raise on failure.
The two learning checks take minutes, the rest run in seconds.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .estimators import (
    gpomdp_batch,
    importance_weights,
    pgt_batch,
    recursive_correction,
    weighted_gpomdp_batch,
)
from .harness import load_preset, run_seeds, trajectories_to_plateau
from .mdp import ContextualBandit, default_oracle_mdp, random_tabular_mdp, rollout_batch
from .optimizer import (
    L2Ball,
    SrvrPgConfig,
    gradient_mapping,
    project,
    recommended_batches,
    sample,
    srvr_pg_run,
    variance_bound_gaussian,
)
from .oracle import (
    enumeration,
    estimator_moments,
    exact_gradient,
    exact_performance,
    finite_diff_gradient,
    rel_error,
    trajectory_probs,
    vector_rel_error,
)
from .pgpe import HyperParams, hyper_score, recursive_pgpe_update
from .policy import SoftmaxPolicy, make_policy

ORACLE_GAMMA = 0.9
PLATEAU_FRACTION = 0.9
PLATEAU_WINDOW = 50


@dataclass
class CheckResult:
    key: str
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.key:<5} {self.name:<32} {self.detail} ({self.seconds:.1f}s)"


def _timed(key, name):
    def wrap(fn):
        def run(*args, **kwargs):
            t0 = time.perf_counter()
            passed, detail = fn(*args, **kwargs)
            return CheckResult(key, name, bool(passed), detail, time.perf_counter() - t0)

        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run

    return wrap


def _softmax_thetas(rng, n, d=4, scale=1.0):
    return [rng.normal(0, scale, d) for _ in range(n)]


@_timed("AC1", "estimator equivalence")
def check_estimator_equivalence(n_traj=1000, seed=0):
    """PGT and GPOMDP (no baseline) agree within 1e-10 on random tabular MDPs."""
    rng = np.random.default_rng(seed)
    worst, done = 0.0, 0
    while done < n_traj:
        S, A, H = rng.integers(2, 5), rng.integers(2, 4), rng.integers(1, 8)
        mdp = random_tabular_mdp(S, A, H, seed=int(rng.integers(2**31)))
        pol = SoftmaxPolicy(S, A)
        theta = rng.normal(0, 1.5, S * A)
        batch = sample(mdp, pol, theta, 50, H, rng)
        gamma = rng.uniform(0.5, 1.0)
        diff = np.abs(pgt_batch(batch, pol, theta, gamma) - gpomdp_batch(batch, pol, theta, gamma))
        worst = max(worst, diff.max())
        done += batch.n
    return worst <= 1e-10, f"max |PGT - GPOMDP| = {worst:.2e} over {done} trajectories"


@_timed("AC2", "unbiasedness")
def check_unbiasedness(n_theta=20, seed=1):
    """Enumeration means of REINFORCE, PGT, GPOMDP equal the exact gradient."""
    mdp, pol = default_oracle_mdp(), SoftmaxPolicy(2, 2)
    worst = 0.0
    for theta in _softmax_thetas(np.random.default_rng(seed), n_theta):
        truth = exact_gradient(mdp, pol, theta, ORACLE_GAMMA)
        for name in ("reinforce", "pgt", "gpomdp"):
            mean, _ = estimator_moments(mdp, pol, theta, name, ORACLE_GAMMA)
            worst = max(worst, np.max(np.abs(mean - truth)))
    return worst <= 1e-12, f"max |E[g] - grad J| = {worst:.2e}"


@_timed("AC3", "change of measure")
def check_change_of_measure(n_pairs=20, seed=2):
    """E_theta1[weighted GPOMDP at theta2] = grad J(theta2); E[omega_0:h] = 1."""
    mdp, pol = default_oracle_mdp(), SoftmaxPolicy(2, 2)
    rng = np.random.default_rng(seed)
    batch, _ = enumeration(mdp)
    worst_g, worst_w = 0.0, 0.0
    for _ in range(n_pairs):
        t1, t2 = rng.normal(0, 1, 4), rng.normal(0, 1, 4)
        _, p1 = trajectory_probs(mdp, pol, t1)
        weighted = p1 @ weighted_gpomdp_batch(batch, pol, t2, t1, ORACLE_GAMMA)
        worst_g = max(worst_g, np.max(np.abs(weighted - exact_gradient(mdp, pol, t2, ORACLE_GAMMA))))
        w = importance_weights(batch, pol, t2, t1)
        worst_w = max(worst_w, np.max(np.abs(p1 @ w - 1.0)))
    ok = worst_g <= 1e-12 and worst_w <= 1e-12
    return ok, f"gradient gap {worst_g:.2e}, max |E[omega] - 1| = {worst_w:.2e}"


@_timed("AC4", "gradient correctness")
def check_gradient_correctness(n_probes=100, seed=3):
    """Exact gradient vs finite differences; score functions vs FD of log_prob."""
    rng = np.random.default_rng(seed)
    mdp, soft = default_oracle_mdp(), SoftmaxPolicy(2, 2)
    worst_j = 0.0
    for theta in _softmax_thetas(rng, 10):
        fd = finite_diff_gradient(lambda t: exact_performance(mdp, soft, t, ORACLE_GAMMA), theta, 1e-5)
        worst_j = max(worst_j, rel_error(exact_gradient(mdp, soft, theta, ORACLE_GAMMA), fd))
    worst_s = 0.0
    policies = [make_policy("linear", 3, 0.7), make_policy("mlp64", 4, 1.3), make_policy("mlp8x8", 3, 1.0)]
    for i in range(n_probes):
        kind = i % 4
        if kind < 3:
            pol = policies[kind]
            theta = pol.init_params(rng)
            obs = rng.uniform(-1, 1, pol.mean_fn.obs_dim)
            act = rng.normal(pol.mean(theta, obs), pol.sigma)
        else:
            pol, theta = soft, rng.normal(0, 1, 4)
            obs, act = np.array([float(rng.integers(2))]), int(rng.integers(2))
        fd = finite_diff_gradient(lambda t: float(pol.log_prob(t, obs, act)), theta, 1e-5)
        worst_s = max(worst_s, vector_rel_error(pol.score(theta, obs, act), fd))
    ok = worst_j <= 1e-6 and worst_s <= 1e-5
    return ok, f"grad J rel err {worst_j:.1e} (<=1e-6), score rel err {worst_s:.1e} (<=1e-5)"


@_timed("AC5", "gradient mapping and projection")
def check_projection(seed=4):
    g = np.array([0.3, -1.7, 2.5])
    bitwise = np.array_equal(gradient_mapping(np.zeros(3), g, 0.1), g)
    ball = project(np.array([6.0, 8.0]), L2Ball(np.zeros(2), 5.0))
    ball_ok = np.max(np.abs(ball - [3.0, 4.0])) <= 1e-12
    mdp, pol = default_oracle_mdp(), SoftmaxPolicy(2, 2)
    cons = L2Ball(np.zeros(4), 0.5)
    cfg = SrvrPgConfig(epochs=5, epoch_len=4, step_size=2.0, snapshot_batch=20, inner_batch=5, gamma=0.9, horizon=3, constraint=cons)
    hist = srvr_pg_run(cfg, mdp, pol, np.full(4, 3.0), np.random.default_rng(seed))
    norms = [np.linalg.norm(t) for t in hist.iterates + [hist.final_params]]
    feasible = max(norms) <= 0.5 + 1e-12
    ok = bitwise and ball_ok and feasible
    return ok, f"bitwise={bitwise}, ball->{ball.tolist()}, max iterate norm {max(norms):.6f} (<=0.5)"


@_timed("AC6", "trajectory accounting")
def check_accounting(seed=5):
    mdp, pol = default_oracle_mdp(), SoftmaxPolicy(2, 2)
    cfg = SrvrPgConfig(epochs=4, epoch_len=5, step_size=0.1, snapshot_batch=100, inner_batch=10, gamma=0.9, horizon=3)
    before = mdp.episode_count
    hist = srvr_pg_run(cfg, mdp, pol, np.zeros(4), np.random.default_rng(seed))
    used = mdp.episode_count - before
    ok = used == 560 and hist.total_trajectories == 560
    return ok, f"environment episodes {used}, recorded {hist.total_trajectories} (expected 560)"


VARIANCE_RATIO_LIMIT = 0.5


def variance_reduction_ratio(reps=1000, N=100, B=10, delta_norm=0.05, seed=6):
    """Variance trace of the recursive v_1 over that of a plain size-B batch mean."""
    mdp, pol = default_oracle_mdp(), SoftmaxPolicy(2, 2)
    rng = np.random.default_rng(seed)
    snap = np.array([0.4, -0.3, 0.2, 0.5])
    d = rng.normal(size=4)
    theta = snap + delta_norm * d / np.linalg.norm(d)
    H, gamma = mdp.horizon, ORACLE_GAMMA
    v1 = np.empty((reps, 4))
    plain = np.empty((reps, 4))
    for i in range(reps):
        v0 = gpomdp_batch(sample(mdp, pol, snap, N, H, rng), pol, snap, gamma).mean(axis=0)
        b = sample(mdp, pol, theta, B, H, rng)
        v1[i] = v0 + recursive_correction(b, pol, theta, snap, gamma).mean(axis=0)
        plain[i] = gpomdp_batch(sample(mdp, pol, theta, B, H, rng), pol, theta, gamma).mean(axis=0)
    return float(np.trace(np.cov(v1.T)) / np.trace(np.cov(plain.T)))


@_timed("AC7", "variance reduction")
def check_variance_reduction(reps=1000, seed=6):
    ratio = variance_reduction_ratio(reps=reps, seed=seed)
    return ratio <= VARIANCE_RATIO_LIMIT, f"Var(v_1)/Var(plain) = {ratio:.3f} (<= {VARIANCE_RATIO_LIMIT})"


@_timed("AC8", "batch schedule shapes")
def check_schedule():
    base = recommended_batches(0.01)
    N, B, m, S = base
    disc = recommended_batches(0.01, gamma=0.9)
    ok = base == (100, 10, 10, 10) and B * m == N and disc[:3] == (N * 1000, B * 10, m * 100)
    return ok, f"eps=0.01 -> {base}, gamma=0.9 -> {disc}"


def learning_outcomes(preset: str, n_seeds=10, threshold=None, jobs=1):
    """Per-seed trajectories needed to reach the plateau, plus the budget."""
    cfg = load_preset(preset, n_seeds=n_seeds)
    horizon = cfg.horizon
    thr = PLATEAU_FRACTION * horizon if threshold is None else threshold
    results = run_seeds(cfg, jobs)
    return [trajectories_to_plateau(r.history, thr, PLATEAU_WINDOW) for r in results], cfg.budget


@_timed("AC9", "CartPole SRVR-PG vs GPOMDP")
def check_cartpole_learning(n_seeds=10, jobs=1):
    """SRVR-PG hits the plateau within budget and no later than GPOMDP on >= 8 seeds."""
    srvr, budget = learning_outcomes("cartpole-srvrpg", n_seeds, jobs=jobs)
    base, _ = learning_outcomes("cartpole-gpomdp", n_seeds, jobs=jobs)
    wins = sum(1 for a, b in zip(srvr, base) if a is not None and a <= budget and (b is None or a <= b))
    need = int(np.ceil(0.8 * n_seeds))
    return wins >= need, f"{wins}/{n_seeds} seeds (need {need}); SRVR-PG {srvr}, GPOMDP {base}"


@_timed("AC10", "PGPE suite")
def check_pgpe(n_seeds=10, seed=10, jobs=1):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for opt in (False, True):
        hyper = HyperParams(rng.normal(size=5), rng.normal(0, 0.3, 5), opt)
        theta = rng.normal(size=5) * 1.5
        fd = finite_diff_gradient(lambda r: float(hyper.with_vector(r).log_density(theta)), hyper.vector, 1e-5)
        worst = max(worst, rel_error(hyper_score(hyper, theta), fd))
    hyper = HyperParams.isotropic(rng.normal(size=5), 0.8)
    thetas = rng.normal(size=(7, 5))
    v_prev = rng.normal(size=5)
    still = np.array_equal(recursive_pgpe_update(v_prev, thetas, rng.normal(size=7), hyper, hyper), v_prev)
    hits, budget = learning_outcomes("cartpole-srvrpgpe", n_seeds, jobs=jobs)
    reached = sum(1 for h in hits if h is not None and h <= budget)
    need = int(np.ceil(0.8 * n_seeds))
    ok = worst <= 1e-6 and still and reached >= need
    return ok, f"hyper_score rel err {worst:.1e}, unchanged v={still}, plateau {reached}/{n_seeds} (need {need}) {hits}"


def bandit_variance_check(n=1000, seed=11, context_dim=2, horizon=5, gamma=0.9, sigma=0.5, reward_scale=1.0):
    """(empirical variance trace, standard error, bound) for PGT on the bandit."""
    env = ContextualBandit(context_dim=context_dim, horizon=horizon, reward_scale=reward_scale, weights=np.zeros(context_dim))
    pol = make_policy("linear", context_dim, sigma)
    theta = np.zeros(context_dim + 1)
    rng = np.random.default_rng(seed)
    batch = rollout_batch(env, lambda o, g, rows: pol.sample_action(theta, o, g), n, horizon, rng)
    g = pgt_batch(batch, pol, theta, gamma)
    dev = np.sum((g - g.mean(axis=0)) ** 2, axis=1) * n / (n - 1)
    var = float(dev.mean())
    se = float(dev.std(ddof=1) / np.sqrt(n))
    m_phi = pol.mean_fn.feature_bound(np.sqrt(context_dim))
    bound = variance_bound_gaussian(reward_scale, m_phi, sigma, gamma, horizon)
    return var, se, bound


@_timed("AC11", "variance bound diagnostic")
def check_variance_bound(n=1000, seed=11):
    var, se, bound = bandit_variance_check(n, seed)
    return var <= bound + 3 * se, f"Var(PGT) = {var:.3f} +- {se:.3f}, bound {bound:.3f}"


FAST_CHECKS = (
    check_estimator_equivalence,
    check_unbiasedness,
    check_change_of_measure,
    check_gradient_correctness,
    check_projection,
    check_accounting,
    check_variance_reduction,
    check_schedule,
    check_variance_bound,
)
SLOW_CHECKS = (check_cartpole_learning, check_pgpe)


def run_all(quick=False, jobs=1, echo=print):
    results = []
    for check in FAST_CHECKS + (() if quick else SLOW_CHECKS):
        kwargs = {"jobs": jobs} if check in SLOW_CHECKS else {}
        res = check(**kwargs)
        if echo:
            echo(res.line())
        results.append(res)
    return results
