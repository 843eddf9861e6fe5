"""Likelihood-ratio policy-gradient estimators.

The ``*_batch`` functions return one gradient per trajectory, shape
``(n, d)``; the un-suffixed functions take a single :class:`Trajectory` and
return a ``(d,)`` vector.  Padding steps of a batch contribute nothing.
"""

from __future__ import annotations

import logging

import numpy as np

from .mdp import Trajectory, TrajectoryBatch

log = logging.getLogger(__name__)

WEIGHT_FLAG = 1e12


class EstimatorError(FloatingPointError):
    """A gradient estimate came out NaN or infinite."""


def _finite(g: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(g)):
        raise EstimatorError(f"non-finite {what}")
    return g


def _as_batch(traj) -> TrajectoryBatch:
    return traj if isinstance(traj, TrajectoryBatch) else TrajectoryBatch.from_trajectories([traj])


def step_scores(batch: TrajectoryBatch, policy, params) -> np.ndarray:
    """Per-step score vectors ``(n, H, d)``, zeroed on padding."""
    obs = batch.states[:, :-1]
    sc = policy.score(params, obs, batch.actions)
    return sc * batch.mask[..., None]


def _baseline_vector(baseline, horizon):
    if baseline is None:
        return np.zeros(horizon)
    b = np.asarray(baseline, dtype=float)
    if b.shape[0] < horizon:
        raise ValueError(f"baseline has {b.shape[0]} entries, trajectory needs {horizon}")
    return b[:horizon]


def reinforce_batch(batch, policy, params, gamma):
    scores = step_scores(batch, policy, params).sum(axis=1)
    g = scores * batch.discounted_returns(gamma)[:, None]
    return _finite(g, "REINFORCE estimate")


def pgt_batch(batch, policy, params, gamma, baseline=None):
    """Reward-to-go form: sum_h score_h * sum_{t>=h} (gamma^t r_t - b_t)."""
    b = _baseline_vector(baseline, batch.horizon) * batch.mask
    terms = batch.rewards * batch.discounts(gamma) - b
    to_go = np.cumsum(terms[:, ::-1], axis=1)[:, ::-1]
    scores = step_scores(batch, policy, params)
    return _finite(np.einsum("nhd,nh->nd", scores, to_go), "PGT estimate")


def gpomdp_batch(batch, policy, params, gamma, baseline=None):
    """Cumulative-score form: sum_h (sum_{t<=h} score_t) (gamma^h r_h - b_h)."""
    b = _baseline_vector(baseline, batch.horizon) * batch.mask
    terms = batch.rewards * batch.discounts(gamma) - b
    cum = np.cumsum(step_scores(batch, policy, params), axis=1)
    return _finite(np.einsum("nhd,nh->nd", cum, terms), "GPOMDP estimate")


def log_weight_prefixes(batch, policy, target_params, behavior_params) -> np.ndarray:
    """log omega_{0:h} for every prefix, ``(n, H)``; padding adds nothing."""
    obs = batch.states[:, :-1]
    diff = policy.log_prob(target_params, obs, batch.actions) - policy.log_prob(behavior_params, obs, batch.actions)
    return np.cumsum(diff * batch.mask, axis=1)


def importance_weights(batch, policy, target_params, behavior_params, cap=None) -> np.ndarray:
    """Prefix importance weights target/behavior, ``(n, H)``.

    Computed in log space.  Weights above 1e12 are logged; with ``cap`` set,
    weights are clipped there and the clipping is logged.
    """
    with np.errstate(over="ignore"):
        w = np.exp(log_weight_prefixes(batch, policy, target_params, behavior_params))
    if not np.all(np.isfinite(w)):
        raise EstimatorError("importance weight overflow")
    wmax = w.max() if w.size else 0.0
    if wmax > WEIGHT_FLAG:
        log.warning("importance weight %.3g exceeds %.0e", wmax, WEIGHT_FLAG)
    if cap is not None and wmax > cap:
        log.warning("importance weights clipped at %g (max was %.3g)", cap, wmax)
        w = np.minimum(w, cap)
    return w


def weighted_gpomdp_batch(batch, policy, target_params, behavior_params, gamma, cap=None):
    """GPOMDP at the target parameters on behavior-policy trajectories.

    Each step term is multiplied by the prefix weight omega_{0:h}, so the
    expectation under the behavior policy equals the plain GPOMDP
    expectation under the target policy.
    """
    w = importance_weights(batch, policy, target_params, behavior_params, cap)
    cum = np.cumsum(step_scores(batch, policy, target_params), axis=1)
    terms = batch.rewards * batch.discounts(gamma) * w
    return _finite(np.einsum("nhd,nh->nd", cum, terms), "importance-weighted estimate")


def reinforce_grad(traj, policy, params, gamma):
    return reinforce_batch(_as_batch(traj), policy, params, gamma)[0]


def pgt_grad(traj, policy, params, gamma, baseline=None):
    return pgt_batch(_as_batch(traj), policy, params, gamma, baseline)[0]


def gpomdp_grad(traj, policy, params, gamma, baseline=None):
    return gpomdp_batch(_as_batch(traj), policy, params, gamma, baseline)[0]


def weighted_gpomdp_grad(traj, policy, target_params, behavior_params, gamma, cap=None):
    return weighted_gpomdp_batch(_as_batch(traj), policy, target_params, behavior_params, gamma, cap)[0]


def prefix_importance_weight(traj: Trajectory, policy, target_params, behavior_params, h: int) -> float:
    """omega_{0:h} = prod_{h' <= h} pi_target / pi_behavior along ``traj``."""
    if not 0 <= h < traj.length:
        raise ValueError(f"prefix index {h} outside trajectory of length {traj.length}")
    lw = log_weight_prefixes(_as_batch(traj), policy, target_params, behavior_params)[0, h]
    with np.errstate(over="ignore"):
        w = float(np.exp(lw))
    if not np.isfinite(w):
        raise EstimatorError("importance weight overflow")
    if w > WEIGHT_FLAG:
        log.warning("importance weight %.3g exceeds %.0e", w, WEIGHT_FLAG)
    return w


ESTIMATORS = {"reinforce": reinforce_batch, "pgt": pgt_batch, "gpomdp": gpomdp_batch}


def estimate_batch(name, batch, policy, params, gamma, baseline=None):
    if name not in ESTIMATORS:
        raise ValueError(f"unknown estimator {name!r}")
    if name == "reinforce":
        if baseline is not None:
            raise ValueError("REINFORCE takes no baseline here")
        return reinforce_batch(batch, policy, params, gamma)
    return ESTIMATORS[name](batch, policy, params, gamma, baseline)


def recursive_correction(batch, policy, params_t, params_prev, gamma, cap=None):
    """Per-trajectory g(tau|theta_t) - g_omega(tau|theta_{t-1}), ``(n, d)``."""
    return gpomdp_batch(batch, policy, params_t, gamma) - weighted_gpomdp_batch(
        batch, policy, params_prev, params_t, gamma, cap
    )


def recursive_update(v_prev, batch, policy, params_t, params_prev, gamma, cap=None):
    """v_t = v_{t-1} + mean_j [g(tau_j|theta_t) - g_omega(tau_j|theta_{t-1})].

    Trajectories in ``batch`` must come from ``params_t``.
    """
    batch = _as_batch(batch) if isinstance(batch, Trajectory) else batch
    if isinstance(batch, list):
        if not batch:
            raise ValueError("empty batch")
        batch = TrajectoryBatch.from_trajectories(batch)
    if batch.n == 0:
        raise ValueError("empty batch")
    corr = recursive_correction(batch, policy, params_t, params_prev, gamma, cap)
    return _finite(np.asarray(v_prev, dtype=float) + batch_mean(corr), "recursive gradient")


def batch_mean(rows: np.ndarray) -> np.ndarray:
    """Mean over axis 0 with a fixed (pairwise) summation order."""
    return np.add.reduce(rows, axis=0) / rows.shape[0]
