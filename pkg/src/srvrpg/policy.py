"""Stochastic policies with exact score functions.

Parameters are flat float vectors.  Each policy object carries the shape
information needed to interpret them, so ``(policy, theta)`` fully
determines the action distribution.

Batch conventions: ``obs`` may be a single observation ``(obs_dim,)`` or any
stack ``(..., obs_dim)``; actions follow the leading shape.  ``score``
returns ``(..., d)``.
"""

from __future__ import annotations

import numpy as np


class PolicyError(ValueError):
    pass


def with_bias(obs: np.ndarray) -> np.ndarray:
    """Identity features plus a constant 1."""
    obs = np.asarray(obs, dtype=float)
    return np.concatenate([obs, np.ones(obs.shape[:-1] + (1,))], axis=-1)


class LinearMean:
    """mu(s) = theta^T [s, 1]."""

    kind = "linear"

    def __init__(self, obs_dim: int):
        self.obs_dim = obs_dim
        self.dim = obs_dim + 1

    def init_params(self, rng):
        bound = 1.0 / np.sqrt(self.dim)
        return rng.uniform(-bound, bound, size=self.dim)

    def __call__(self, theta, obs):
        return with_bias(obs) @ theta

    def batched(self, thetas, obs):
        """Row-wise means for a stack of parameter vectors ``(n, d)``."""
        return np.einsum("nd,nd->n", with_bias(obs), thetas)

    def jacobian(self, theta, obs):
        return with_bias(obs)

    def feature_bound(self, obs_bound: float) -> float:
        return float(np.sqrt(obs_bound**2 + 1.0))


class MLPMean:
    """tanh multilayer perceptron with a scalar linear output.

    Flat layout: for each layer, the weight matrix (out, in) row-major
    followed by its bias.
    """

    kind = "mlp"

    def __init__(self, obs_dim: int, hidden=(64,)):
        self.obs_dim = obs_dim
        self.hidden = tuple(int(h) for h in hidden)
        sizes = (obs_dim,) + self.hidden + (1,)
        self.layers = list(zip(sizes[1:], sizes[:-1]))
        self.dim = sum(o * i + o for o, i in self.layers)

    def init_params(self, rng):
        chunks = []
        for out, fan_in in self.layers:
            bound = 1.0 / np.sqrt(fan_in)
            chunks.append(rng.uniform(-bound, bound, size=out * fan_in + out))
        return np.concatenate(chunks)

    def unflatten(self, theta):
        """Split ``theta`` (..., d) into [(W (..., out, in), b (..., out)), ...]."""
        theta = np.asarray(theta, dtype=float)
        lead = theta.shape[:-1]
        out, k = [], 0
        for o, i in self.layers:
            W = theta[..., k : k + o * i].reshape(lead + (o, i))
            k += o * i
            b = theta[..., k : k + o]
            k += o
            out.append((W, b))
        return out

    def _forward(self, theta, obs):
        layers = self.unflatten(theta)
        acts = [np.asarray(obs, dtype=float)]
        x = acts[0]
        for W, b in layers[:-1]:
            x = np.tanh(x @ W.T + b)
            acts.append(x)
        W, b = layers[-1]
        return (x @ W.T + b)[..., 0], acts, layers

    def __call__(self, theta, obs):
        return self._forward(theta, obs)[0]

    def batched(self, thetas, obs):
        x = np.asarray(obs, dtype=float)
        layers = self.unflatten(thetas)
        for W, b in layers[:-1]:
            x = np.tanh(np.einsum("noi,ni->no", W, x) + b)
        W, b = layers[-1]
        return np.einsum("noi,ni->no", W, x)[:, 0] + b[:, 0]

    def jacobian(self, theta, obs):
        """d mu / d theta for every observation, shape (..., d)."""
        _, acts, layers = self._forward(theta, obs)
        lead = acts[0].shape[:-1]
        grads = []
        delta = np.ones(lead + (1,))
        for li in range(len(layers) - 1, -1, -1):
            W, _ = layers[li]
            a_in = acts[li]
            gW = delta[..., :, None] * a_in[..., None, :]
            grads.append((gW.reshape(lead + (-1,)), delta))
            if li > 0:
                delta = (delta @ W) * (1.0 - a_in**2)
        return np.concatenate([np.concatenate(pair, axis=-1) for pair in reversed(grads)], axis=-1)


class GaussianPolicy:
    """a ~ N(mu_theta(s), sigma^2) with fixed sigma."""

    discrete = False

    def __init__(self, mean, sigma: float = 1.0):
        if not sigma > 0:
            raise PolicyError("sigma must be positive")
        self.mean_fn = mean
        self.sigma = float(sigma)

    @property
    def dim(self) -> int:
        return self.mean_fn.dim

    def init_params(self, rng):
        return self.mean_fn.init_params(rng)

    def _check(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1] != self.dim:
            raise PolicyError(f"expected {self.dim} parameters, got {theta.shape[-1]}")
        return theta

    def mean(self, theta, obs):
        return self.mean_fn(self._check(theta), obs)

    def sample_action(self, theta, obs, rng):
        mu = self.mean(theta, obs)
        return mu + self.sigma * rng.standard_normal(np.shape(mu))

    def log_prob(self, theta, obs, action):
        mu = self.mean(theta, obs)
        return -((action - mu) ** 2) / (2 * self.sigma**2) - 0.5 * np.log(2 * np.pi * self.sigma**2)

    def score(self, theta, obs, action):
        theta = self._check(theta)
        mu = self.mean_fn(theta, obs)
        coef = (np.asarray(action, dtype=float) - mu) / self.sigma**2
        return coef[..., None] * self.mean_fn.jacobian(theta, obs)

    def assumption_constants(self, action_bound: float, feature_bound: float):
        """Closed-form (G, M) bounding the score norm and log-density Hessian."""
        if self.mean_fn.kind != "linear":
            raise PolicyError("diagnostic unavailable: no closed-form constants for a non-linear mean")
        s2 = self.sigma**2
        return action_bound * feature_bound / s2, feature_bound**2 / s2


class SoftmaxPolicy:
    """Tabular softmax: pi(a|s) proportional to exp(theta[s, a])."""

    discrete = True

    def __init__(self, n_states: int, n_actions: int):
        self.n_states = n_states
        self.n_actions = n_actions
        self.dim = n_states * n_actions

    def init_params(self, rng):
        return rng.uniform(-0.5, 0.5, size=self.dim)

    def _table(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1] != self.dim:
            raise PolicyError(f"expected {self.dim} parameters, got {theta.shape[-1]}")
        return theta.reshape(self.n_states, self.n_actions)

    @staticmethod
    def _index(obs):
        return np.asarray(obs)[..., 0].astype(int)

    def probs(self, theta, obs):
        logits = self._table(theta)[self._index(obs)]
        z = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    def sample_action(self, theta, obs, rng):
        p = self.probs(theta, obs)
        cdf = np.cumsum(p, axis=-1)
        u = rng.random(p.shape[:-1] + (1,))
        return np.minimum((u > cdf).sum(axis=-1), self.n_actions - 1)

    def log_prob(self, theta, obs, action):
        logits = self._table(theta)[self._index(obs)]
        m = logits.max(axis=-1, keepdims=True)
        lse = (m + np.log(np.exp(logits - m).sum(axis=-1, keepdims=True)))[..., 0]
        a = np.asarray(action).astype(int)
        return np.take_along_axis(logits, a[..., None], axis=-1)[..., 0] - lse

    def score(self, theta, obs, action):
        s = self._index(obs)
        a = np.asarray(action).astype(int)
        p = self.probs(theta, obs)
        g = np.zeros(s.shape + (self.n_states, self.n_actions))
        onehot_a = np.zeros_like(p)
        np.put_along_axis(onehot_a, a[..., None], 1.0, axis=-1)
        rows = onehot_a - p
        idx = np.indices(s.shape)
        g[(*idx, s)] = rows
        return g.reshape(s.shape + (self.dim,))

    def prob_jacobian(self, theta, obs, action):
        """d pi(a|s) / d theta computed from probabilities, not log-probs."""
        s = self._index(obs)
        a = np.asarray(action).astype(int)
        p = self.probs(theta, obs)
        pa = np.take_along_axis(p, a[..., None], axis=-1)
        onehot_a = np.zeros_like(p)
        np.put_along_axis(onehot_a, a[..., None], 1.0, axis=-1)
        rows = pa * onehot_a - pa * p
        g = np.zeros(s.shape + (self.n_states, self.n_actions))
        idx = np.indices(s.shape)
        g[(*idx, s)] = rows
        return g.reshape(s.shape + (self.dim,))


def make_policy(kind: str, obs_dim: int, sigma: float = 1.0, n_states=None, n_actions=None):
    """``linear | mlp64 | mlp8x8 | softmax``."""
    if kind == "linear":
        return GaussianPolicy(LinearMean(obs_dim), sigma)
    if kind == "mlp64":
        return GaussianPolicy(MLPMean(obs_dim, (64,)), sigma)
    if kind == "mlp8x8":
        return GaussianPolicy(MLPMean(obs_dim, (8, 8)), sigma)
    if kind == "softmax":
        return SoftmaxPolicy(n_states, n_actions)
    raise PolicyError(f"unknown policy kind {kind!r}")
