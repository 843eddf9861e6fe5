"""Projected policy-gradient loops: SRVR-PG, SVRPG and plain GPOMDP ascent.

All three loops share the sampling and bookkeeping code below; they differ
only in how the update direction is formed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .estimators import (
    EstimatorError,
    batch_mean,
    estimate_batch,
    gpomdp_batch,
    recursive_correction,
    weighted_gpomdp_batch,
)
from .mdp import rollout_batch

log = logging.getLogger(__name__)


# -- constraint sets ---------------------------------------------------------

@dataclass(frozen=True)
class Unconstrained:
    def project(self, theta):
        return np.asarray(theta, dtype=float)


@dataclass(frozen=True)
class L2Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")

    def project(self, theta):
        theta = np.asarray(theta, dtype=float)
        c = np.broadcast_to(np.asarray(self.center, dtype=float), theta.shape)
        diff = theta - c
        dist = np.linalg.norm(diff)
        if dist <= self.radius:
            return theta
        return c + diff * (self.radius / dist)


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.lower) > np.asarray(self.upper)):
            raise ValueError("box lower bound exceeds upper bound")

    def project(self, theta):
        return np.clip(np.asarray(theta, dtype=float), self.lower, self.upper)


def project(theta, constraint=None):
    """Euclidean projection onto ``constraint`` (None means unconstrained)."""
    return (constraint or Unconstrained()).project(theta)


def gradient_mapping(theta, grad, eta, constraint=None):
    """(P(theta + eta grad) - theta) / eta; exactly ``grad`` when unconstrained."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    if constraint is None or isinstance(constraint, Unconstrained):
        return np.asarray(grad, dtype=float)
    theta = np.asarray(theta, dtype=float)
    return (project(theta + eta * np.asarray(grad), constraint) - theta) / eta


# -- configuration and history ----------------------------------------------

@dataclass
class SrvrPgConfig:
    epochs: int = 1
    epoch_len: int = 1
    step_size: float = 0.01
    snapshot_batch: int = 10
    inner_batch: int = 1
    gamma: float = 0.99
    horizon: int = 100
    constraint: object = field(default_factory=Unconstrained)
    estimator: str = "gpomdp"
    output_rule: str = "last"
    weight_cap: float | None = None
    max_trajectories: int | None = None  # stop before a batch would exceed it

    def __post_init__(self):
        if min(self.epochs, self.epoch_len, self.snapshot_batch, self.inner_batch, self.horizon) < 1:
            raise ValueError("S, m, N, B and H must all be >= 1")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.step_size < 0:
            raise ValueError("step size must be non-negative")
        if self.output_rule not in ("last", "uniform"):
            raise ValueError("output_rule must be 'last' or 'uniform'")

    @property
    def trajectories_per_epoch(self) -> int:
        return self.snapshot_batch + (self.epoch_len - 1) * self.inner_batch

    def fits(self, used: int, n: int) -> bool:
        return self.max_trajectories is None or used + n <= self.max_trajectories


@dataclass
class UpdateRecord:
    trajectories: int
    epoch: int
    step: int
    avg_return: float
    update_norm: float


@dataclass
class RunHistory:
    records: list = field(default_factory=list)
    iterates: list = field(default_factory=list)
    final_params: np.ndarray | None = None
    output_params: np.ndarray | None = None
    aborted: str | None = None

    @property
    def total_trajectories(self) -> int:
        return self.records[-1].trajectories if self.records else 0

    def add(self, trajectories, epoch, step, returns, direction):
        self.records.append(
            UpdateRecord(int(trajectories), int(epoch), int(step), float(np.mean(returns)), float(np.linalg.norm(direction)))
        )


class DivergenceError(FloatingPointError):
    """Raised when an update direction goes non-finite; carries the partial history."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


def sample(env, policy, params, n, horizon, rng):
    return rollout_batch(env, lambda obs, g, rows: policy.sample_action(params, obs, g), n, horizon, rng)


def _finish(history, theta, rule, rng):
    history.final_params = theta
    if rule == "uniform" and history.iterates:
        history.output_params = history.iterates[rng.integers(len(history.iterates))]
    else:
        history.output_params = theta
    return history


def _check_direction(v, history, epoch, step, extra=""):
    if not np.all(np.isfinite(v)):
        msg = f"non-finite update direction at epoch {epoch}, step {step}{extra}"
        history.aborted = msg
        raise DivergenceError(msg, history)


def _weight_stats(batch, policy, target, behavior):
    from .estimators import log_weight_prefixes

    lw = log_weight_prefixes(batch, policy, target, behavior)
    return f" (log-weight min {lw.min():.3g}, max {lw.max():.3g})"


def srvr_pg_run(config: SrvrPgConfig, env, policy, init_params, rng) -> RunHistory:
    """Stochastic recursive variance-reduced policy gradient.

    Per epoch: a size-N snapshot gradient at the reference point with an
    immediate step, then m-1 recursive steps on size-B batches whose
    correction term is importance weighted back to the previous iterate.
    """
    if config.estimator not in ("gpomdp", "pgt"):
        raise ValueError("SRVR-PG needs the GPOMDP/PGT estimator")
    cons, eta, gamma, H = config.constraint, config.step_size, config.gamma, config.horizon
    theta = project(np.array(init_params, dtype=float), cons)
    hist = RunHistory()
    used = 0
    for s in range(config.epochs):
        if not config.fits(used, config.snapshot_batch):
            break
        hist.iterates.append(theta)
        batch = sample(env, policy, theta, config.snapshot_batch, H, rng)
        used += batch.n
        v = batch_mean(gpomdp_batch(batch, policy, theta, gamma))
        _check_direction(v, hist, s, 0)
        hist.add(used, s, 0, batch.undiscounted_returns(), v)
        prev, theta = theta, project(theta + eta * v, cons)
        for t in range(1, config.epoch_len):
            if not config.fits(used, config.inner_batch):
                break
            hist.iterates.append(theta)
            batch = sample(env, policy, theta, config.inner_batch, H, rng)
            used += batch.n
            try:
                corr = recursive_correction(batch, policy, theta, prev, gamma, config.weight_cap)
            except EstimatorError as exc:
                hist.aborted = str(exc)
                raise DivergenceError(f"{exc} at epoch {s}, step {t}" + _weight_stats(batch, policy, prev, theta), hist) from exc
            v = v + batch_mean(corr)
            _check_direction(v, hist, s, t, _weight_stats(batch, policy, prev, theta))
            hist.add(used, s, t, batch.undiscounted_returns(), v)
            prev, theta = theta, project(theta + eta * v, cons)
    return _finish(hist, theta, config.output_rule, rng)


def svrpg_run(config: SrvrPgConfig, env, policy, init_params, rng) -> RunHistory:
    """Stochastic variance-reduced policy gradient (the SVRG-style baseline).

    The snapshot gradient is only a reference: the N snapshot trajectories do
    not produce a parameter update.  Inner steps use
    v = mu_snapshot + mean[g(theta_t) - g_omega(theta_snapshot)].
    """
    if config.estimator not in ("gpomdp", "pgt"):
        raise ValueError("SVRPG needs the GPOMDP/PGT estimator")
    cons, eta, gamma, H = config.constraint, config.step_size, config.gamma, config.horizon
    theta = project(np.array(init_params, dtype=float), cons)
    hist = RunHistory()
    used = 0
    for s in range(config.epochs):
        if not config.fits(used, config.snapshot_batch):
            break
        snap = theta
        batch = sample(env, policy, snap, config.snapshot_batch, H, rng)
        used += batch.n
        mu = batch_mean(gpomdp_batch(batch, policy, snap, gamma))
        _check_direction(mu, hist, s, 0)
        # m = 1 has no inner loop, so the snapshot gradient drives the step itself
        if config.epoch_len == 1:
            hist.iterates.append(theta)
            hist.add(used, s, 0, batch.undiscounted_returns(), mu)
            theta = project(theta + eta * mu, cons)
            continue
        for t in range(1, config.epoch_len):
            if not config.fits(used, config.inner_batch):
                break
            hist.iterates.append(theta)
            batch = sample(env, policy, theta, config.inner_batch, H, rng)
            used += batch.n
            try:
                corr = gpomdp_batch(batch, policy, theta, gamma) - weighted_gpomdp_batch(
                    batch, policy, snap, theta, gamma, config.weight_cap
                )
            except EstimatorError as exc:
                hist.aborted = str(exc)
                raise DivergenceError(f"{exc} at epoch {s}, step {t}", hist) from exc
            v = mu + batch_mean(corr)
            _check_direction(v, hist, s, t, _weight_stats(batch, policy, snap, theta))
            hist.add(used, s, t, batch.undiscounted_returns(), v)
            theta = project(theta + eta * v, cons)
    return _finish(hist, theta, config.output_rule, rng)


def gpomdp_run(config: SrvrPgConfig, env, policy, init_params, rng, exact_grad_fn=None) -> RunHistory:
    """Projected stochastic gradient ascent with batch N for S iterations.

    ``exact_grad_fn(theta)``, when given, replaces the batch estimate (used
    to test the ascent property with the true gradient).
    """
    cons, eta, gamma, H = config.constraint, config.step_size, config.gamma, config.horizon
    theta = project(np.array(init_params, dtype=float), cons)
    hist = RunHistory()
    used = 0
    for k in range(config.epochs):
        if exact_grad_fn is None and not config.fits(used, config.snapshot_batch):
            break
        hist.iterates.append(theta)
        if exact_grad_fn is None:
            batch = sample(env, policy, theta, config.snapshot_batch, H, rng)
            used += batch.n
            g = batch_mean(estimate_batch(config.estimator, batch, policy, theta, gamma))
            returns = batch.undiscounted_returns()
        else:
            g = np.asarray(exact_grad_fn(theta), dtype=float)
            returns = [np.nan]
        _check_direction(g, hist, k, 0)
        hist.add(used, k, 0, returns, g)
        theta = project(theta + eta * g, cons)
    return _finish(hist, theta, config.output_rule, rng)


def epochs_for_budget(budget: int, snapshot_batch: int, inner_batch: int, epoch_len: int) -> int:
    """Largest S whose trajectory count S*N + S*(m-1)*B fits in ``budget``."""
    per = snapshot_batch + (epoch_len - 1) * inner_batch
    return max(budget // per, 0)


# -- theory ------------------------------------------------------------------

def recommended_batches(epsilon, c0=1.0, c1=1.0, c2=1.0, c3=1.0, gamma=None):
    """(N, B, m, S) with N ~ 1/eps, B, m, S ~ 1/sqrt(eps).

    With ``gamma`` the horizon-free Gaussian-policy scaling applies:
    N * (1-gamma)^-3, B * (1-gamma)^-1, m * (1-gamma)^-2.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    root = math.sqrt(epsilon)
    fN = fB = fm = 1.0
    if gamma is not None:
        if not 0 < gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        q = 1.0 - gamma
        fN, fB, fm = q**-3, q**-1, q**-2
    # round away float noise (e.g. 1/0.01 = 100.00000000000001) before the ceiling
    ceil = lambda x: math.ceil(round(x, 9))  # noqa: E731
    return ceil(c0 / epsilon * fN), ceil(c1 / root * fB), ceil(c2 / root * fm), ceil(c3 / root)


def smoothness_constants(G, M, R, gamma):
    """(L, C_g): L = MR/(1-g)^2 + 2G^2R/(1-g)^3, C_g = GR/(1-g)^2."""
    if not 0 <= gamma < 1:
        raise ValueError("gamma must lie in [0, 1)")
    if min(G, M, R) <= 0:
        raise ValueError("G, M and R must be positive")
    q = 1.0 - gamma
    return M * R / q**2 + 2 * G**2 * R / q**3, G * R / q**2


def theoretical_step_size(G, M, R, gamma):
    return 1.0 / (4.0 * smoothness_constants(G, M, R, gamma)[0])


def variance_bound_gaussian(R, M_phi, sigma, gamma, H):
    """Closed-form bound xi^2 on the PGT variance for a linear-Gaussian policy.

    xi^2 = R^2 M^2 / ((1-g)^2 s^2) * [(1-g^2H)/(1-g^2) + H g^2H - 2 g^H (1-g^H)/(1-g)],
    which is attained exactly by constant rewards and constant features.
    """
    if not 0 <= gamma < 1:
        raise ValueError("gamma must lie in [0, 1)")
    if min(R, M_phi, sigma) <= 0 or H < 0:
        raise ValueError("R, M_phi, sigma must be positive and H non-negative")
    gH = gamma**H
    bracket = (1 - gH**2) / (1 - gamma**2) + H * gH**2 - 2 * gH * (1 - gH) / (1 - gamma)
    return R**2 * M_phi**2 / ((1 - gamma) ** 2 * sigma**2) * max(bracket, 0.0)
