"""Ground truth on enumerable tabular MDPs.

All expectations here are exact sums over the full trajectory space, so they
can check estimator unbiasedness to floating-point precision.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .estimators import estimate_batch
from .mdp import TabularMdp, enumerate_trajectories

DEFAULT_FD_STEP = 1e-5


def rel_error(a, b) -> float:
    """max |a-b| / (1e-8 + |a| + |b|), componentwise."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / (1e-8 + np.abs(a) + np.abs(b)), initial=0.0))


def vector_rel_error(a, b) -> float:
    """||a-b|| / (1e-12 + ||a|| + ||b||); immune to FD roundoff on tiny components."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / (1e-12 + np.linalg.norm(a) + np.linalg.norm(b)))


@lru_cache(maxsize=32)
def _enumeration_cached(mdp_text: str, horizon: int):
    return enumerate_trajectories(TabularMdp.loads(mdp_text), horizon)


def enumeration(mdp: TabularMdp, horizon=None):
    """Cached :func:`enumerate_trajectories`; the batch must not be mutated."""
    return _enumeration_cached(mdp.dumps(), mdp.horizon if horizon is None else int(horizon))


def trajectory_probs(mdp, policy, params, horizon=None):
    """Full path probabilities under the policy: env factor times policy factor."""
    batch, env_prob = enumeration(mdp, horizon)
    logp = policy.log_prob(params, batch.states[:, :-1], batch.actions).sum(axis=1)
    return batch, env_prob * np.exp(logp)


def exact_performance(mdp, policy, params, gamma, horizon=None) -> float:
    """J(theta) = sum over trajectories of p(tau|theta) R(tau)."""
    batch, p = trajectory_probs(mdp, policy, params, horizon)
    return float(p @ batch.discounted_returns(gamma))


def exact_gradient(mdp, policy, params, gamma, horizon=None) -> np.ndarray:
    """Score form: sum_tau p(tau|theta) (sum_h score_h) R(tau)."""
    batch, p = trajectory_probs(mdp, policy, params, horizon)
    scores = policy.score(params, batch.states[:, :-1], batch.actions).sum(axis=1)
    return (p * batch.discounted_returns(gamma)) @ scores


def exact_gradient_derivative_form(mdp, policy, params, gamma, horizon=None) -> np.ndarray:
    """sum_tau grad p(tau|theta) R(tau) via the product rule on the policy factors.

    Uses d pi / d theta directly, never the log-derivative, so it is an
    independent route to the same number as :func:`exact_gradient`.
    """
    batch, env_prob = enumeration(mdp, horizon)
    obs = batch.states[:, :-1]
    pi = np.exp(policy.log_prob(params, obs, batch.actions))  # (n, H)
    dpi = policy.prob_jacobian(params, obs, batch.actions)  # (n, H, d)
    H = pi.shape[1]
    grad_prod = np.zeros((pi.shape[0], dpi.shape[2]))
    for h in range(H):
        others = np.prod(np.delete(pi, h, axis=1), axis=1)
        grad_prod += dpi[:, h] * others[:, None]
    return (env_prob * batch.discounted_returns(gamma)) @ grad_prod


def finite_diff_gradient(fn, params, step: float = DEFAULT_FD_STEP) -> np.ndarray:
    """Central differences (fn(x + h e_i) - fn(x - h e_i)) / 2h."""
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.asarray(params, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = step
        g.flat[i] = (fn(x + e) - fn(x - e)) / (2 * step)
    return g


def estimator_expectation(mdp, policy, params, per_traj_grads, horizon=None) -> np.ndarray:
    """E[g] for per-trajectory values ``(n, d)`` aligned with the enumeration."""
    _, p = trajectory_probs(mdp, policy, params, horizon)
    return p @ per_traj_grads


def estimator_moments(mdp, policy, params, estimator: str, gamma, horizon=None, baseline=None):
    """Exact mean and trace of covariance of ``estimator`` at ``params``."""
    batch, p = trajectory_probs(mdp, policy, params, horizon)
    g = estimate_batch(estimator, batch, policy, params, gamma, baseline)
    mean = p @ g
    second = p @ np.sum(g**2, axis=1)
    return mean, float(second - mean @ mean)
