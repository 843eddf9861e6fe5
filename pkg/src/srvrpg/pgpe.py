"""Policy gradients with parameter-based exploration.

A diagonal Gaussian p(theta | rho) over policy parameters is optimized; each
sampled theta drives one episode of the deterministic policy a = mu_theta(s).
The optimized vector rho is ``mu`` alone when the exploration std is frozen,
``concat(mu, log_std)`` otherwise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .estimators import batch_mean
from .mdp import rollout_batch
from .optimizer import DivergenceError, RunHistory, SrvrPgConfig, _finish

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HyperParams:
    mu: np.ndarray
    log_std: np.ndarray
    optimize_std: bool = False

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "log_std", np.broadcast_to(np.asarray(self.log_std, dtype=float), mu.shape).copy())
        if not np.all(np.isfinite(self.log_std)):
            raise ValueError("log_std must be finite")

    @classmethod
    def isotropic(cls, mu, std: float, optimize_std=False):
        mu = np.asarray(mu, dtype=float)
        return cls(mu, np.full(mu.shape, np.log(std)), optimize_std)

    @property
    def std(self):
        return np.exp(self.log_std)

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.mu, self.log_std]) if self.optimize_std else self.mu.copy()

    def with_vector(self, rho) -> "HyperParams":
        d = self.mu.size
        rho = np.asarray(rho, dtype=float)
        if self.optimize_std:
            return replace(self, mu=rho[:d], log_std=rho[d:])
        return replace(self, mu=rho)

    def log_density(self, theta) -> np.ndarray:
        z = (np.asarray(theta, dtype=float) - self.mu) / self.std
        return np.sum(-0.5 * z**2 - self.log_std - 0.5 * np.log(2 * np.pi), axis=-1)


def sample_policy_params(hyper: HyperParams, rng, n=None):
    """theta = mu + std * z; one vector, or ``(n, d)`` when ``n`` is given."""
    shape = hyper.mu.shape if n is None else (n,) + hyper.mu.shape
    return hyper.mu + hyper.std * rng.standard_normal(shape)


def hyper_score(hyper: HyperParams, theta) -> np.ndarray:
    """grad_rho log p(theta | rho): (theta-mu)/std^2, then ((theta-mu)^2/std^2 - 1)."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != hyper.mu.size:
        raise ValueError("theta and hyper-parameters differ in dimension")
    diff = theta - hyper.mu
    var = hyper.std**2
    g_mu = diff / var
    if not hyper.optimize_std:
        return g_mu
    return np.concatenate([g_mu, diff**2 / var - 1.0], axis=-1)


def pgpe_grad(thetas, returns, hyper: HyperParams) -> np.ndarray:
    """mean_i hyper_score(theta_i) * R(tau_i), with R the discounted return."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    returns = np.asarray(returns, dtype=float).reshape(-1)
    if len(returns) == 0:
        raise ValueError("empty batch")
    return batch_mean(hyper_score(hyper, thetas) * returns[:, None])


def parameter_weights(thetas, target: HyperParams, behavior: HyperParams) -> np.ndarray:
    """p(theta | target) / p(theta | behavior), one scalar per sample."""
    with np.errstate(over="ignore"):  # overflow surfaces as inf and is checked by callers
        return np.exp(target.log_density(thetas) - behavior.log_density(thetas))


def weighted_pgpe_grads(thetas, returns, target: HyperParams, behavior: HyperParams) -> np.ndarray:
    """Per-sample w(theta) * hyper_score(target, theta) * R, ``(n, dim rho)``."""
    w = parameter_weights(thetas, target, behavior)
    if not np.all(np.isfinite(w)):
        raise FloatingPointError("parameter-space importance weight overflow")
    return hyper_score(target, thetas) * (w * np.asarray(returns))[:, None]


def deterministic_rollouts(env, policy, thetas, horizon, rng):
    """One episode of a = mu_theta(s) for each row of ``thetas``."""
    mean_fn = policy.mean_fn
    return rollout_batch(env, lambda obs, g, rows: mean_fn.batched(thetas[rows], obs), len(thetas), horizon, rng)


def recursive_pgpe_update(v_prev, thetas, returns, hyper_t: HyperParams, hyper_prev: HyperParams):
    """v_t = v_{t-1} + mean_j [g(theta_j|rho_t) - w_j g(theta_j|rho_{t-1})].

    ``thetas`` come from ``hyper_t``; ``w_j = p(theta_j|rho_{t-1}) / p(theta_j|rho_t)``.
    """
    plain = hyper_score(hyper_t, thetas) * np.asarray(returns)[:, None]
    weighted = weighted_pgpe_grads(thetas, returns, hyper_prev, hyper_t)
    return np.asarray(v_prev, dtype=float) + batch_mean(plain - weighted)


def _sample(env, policy, hyper, n, config, rng):
    thetas = sample_policy_params(hyper, rng, n)
    batch = deterministic_rollouts(env, policy, thetas, config.horizon, rng)
    return thetas, batch, batch.discounted_returns(config.gamma)


def _check(v, hist, s, t, w=None):
    if not np.all(np.isfinite(v)):
        extra = "" if w is None else f" (weights min {np.min(w):.3g}, max {np.max(w):.3g})"
        hist.aborted = f"non-finite update direction at epoch {s}, step {t}{extra}"
        raise DivergenceError(hist.aborted, hist)


def _log_weight_diagnostics(w, s, t):
    log.debug("epoch %d step %d: parameter weights mean %.4g var %.4g", s, t, np.mean(w), np.var(w))


def srvr_pg_pe_run(config: SrvrPgConfig, env, policy, init_hyper: HyperParams, rng) -> RunHistory:
    """Recursive variance-reduced ascent over hyper-parameters (no projection).

    Same epoch structure as SRVR-PG; the importance weight of a sample is the
    density ratio of its parameter vector under the previous and current
    hyper-parameters.
    """
    eta = config.step_size
    hyper = init_hyper
    hist = RunHistory()
    used = 0
    for s in range(config.epochs):
        if not config.fits(used, config.snapshot_batch):
            break
        hist.iterates.append(hyper.vector)
        thetas, batch, R = _sample(env, policy, hyper, config.snapshot_batch, config, rng)
        used += batch.n
        v = pgpe_grad(thetas, R, hyper)
        _check(v, hist, s, 0)
        hist.add(used, s, 0, batch.undiscounted_returns(), v)
        prev, hyper = hyper, hyper.with_vector(hyper.vector + eta * v)
        for t in range(1, config.epoch_len):
            if not config.fits(used, config.inner_batch):
                break
            hist.iterates.append(hyper.vector)
            thetas, batch, R = _sample(env, policy, hyper, config.inner_batch, config, rng)
            used += batch.n
            w = parameter_weights(thetas, prev, hyper)
            _log_weight_diagnostics(w, s, t)
            v = recursive_pgpe_update(v, thetas, R, hyper, prev)
            _check(v, hist, s, t, w)
            hist.add(used, s, t, batch.undiscounted_returns(), v)
            prev, hyper = hyper, hyper.with_vector(hyper.vector + eta * v)
    hist = _finish(hist, hyper.vector, config.output_rule, rng)
    hist.final_hyper = hyper
    return hist


def pgpe_run(config: SrvrPgConfig, env, policy, init_hyper: HyperParams, rng) -> RunHistory:
    """Plain PGPE ascent: rho <- rho + eta * pgpe_grad, batch N per step."""
    eta = config.step_size
    hyper = init_hyper
    hist = RunHistory()
    used = 0
    for k in range(config.epochs):
        if not config.fits(used, config.snapshot_batch):
            break
        hist.iterates.append(hyper.vector)
        thetas, batch, R = _sample(env, policy, hyper, config.snapshot_batch, config, rng)
        used += batch.n
        g = pgpe_grad(thetas, R, hyper)
        _check(g, hist, k, 0)
        hist.add(used, k, 0, batch.undiscounted_returns(), g)
        hyper = hyper.with_vector(hyper.vector + eta * g)
    hist = _finish(hist, hyper.vector, config.output_rule, rng)
    hist.final_hyper = hyper
    return hist
