"""Policies and value functions with flat parameter vectors.

``GaussianPolicy`` is a diagonal Gaussian whose mean is a tanh MLP and whose
log standard deviation is a free, state-independent vector. ``ValueFunction``
uses the same MLP body with a scalar head. ``TabularPolicy`` is a softmax
table used by the exact oracle.

Parameter objects are immutable snapshots: ``with_flat`` returns a new one.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from gpi import autodiff as ad

LOG_STD_FLOOR = -20.0
_LOG_2PI = float(np.log(2.0 * np.pi))


def mlp_shapes(sizes):
    shapes = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        shapes.append((fan_in, fan_out))
        shapes.append((fan_out,))
    return shapes


def _split(flat, shapes):
    arrays, start = [], 0
    for shape in shapes:
        size = int(np.prod(shape))
        arrays.append(flat[start:start + size].reshape(shape))
        start += size
    if start != flat.size:
        raise ValueError(f"flat vector has {flat.size} entries, expected {start}")
    return arrays


def _orthogonal(rng, fan_in, fan_out, gain):
    a = rng.standard_normal((max(fan_in, fan_out), min(fan_in, fan_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if fan_in < fan_out:
        q = q.T
    return gain * q[:fan_in, :fan_out]


def init_mlp(sizes, rng, out_gain):
    arrays = []
    n_layers = len(sizes) - 1
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        gain = out_gain if k == n_layers - 1 else np.sqrt(2.0)
        arrays.append(_orthogonal(rng, fan_in, fan_out, gain))
        arrays.append(np.zeros(fan_out))
    return arrays


def mlp_forward(arrays, x):
    n_layers = len(arrays) // 2
    h = x
    for k in range(n_layers):
        h = h @ arrays[2 * k] + arrays[2 * k + 1]
        if k < n_layers - 1:
            h = np.tanh(h)
    return h


def mlp_forward_var(arrays, x):
    n_layers = len(arrays) // 2
    h = x
    for k in range(n_layers):
        h = ad.affine(h, arrays[2 * k], arrays[2 * k + 1])
        if k < n_layers - 1:
            h = ad.tanh(h)
    return h


def mlp_jvp(arrays, tangents, x):
    """Forward-mode derivative of the MLP output along ``tangents``."""
    n_layers = len(arrays) // 2
    h, dh = x, np.zeros_like(x)
    for k in range(n_layers):
        W, b = arrays[2 * k], arrays[2 * k + 1]
        dW, db = tangents[2 * k], tangents[2 * k + 1]
        z = h @ W + b
        dz = dh @ W + h @ dW + db
        if k < n_layers - 1:
            h = np.tanh(z)
            dh = (1.0 - h * h) * dz
        else:
            h, dh = z, dz
    return h, dh


def _as_batch(states, dim):
    states = np.asarray(states, dtype=np.float64)
    if states.ndim == 1:
        states = states[None, :]
    if states.ndim != 2 or states.shape[1] != dim:
        raise ValueError(f"expected states with {dim} features, got shape {states.shape}")
    return states


class _FlatModel:
    """Shared flat-vector plumbing for the MLP-backed models."""

    def _set_flat(self, flat):
        flat = np.array(flat, dtype=np.float64)
        if flat.shape != (self.num_params,):
            raise ValueError(f"flat vector has shape {flat.shape}, expected ({self.num_params},)")
        flat.flags.writeable = False
        self._flat = flat
        self._arrays = _split(flat, self.shapes)

    @property
    def flat(self):
        return self._flat

    @property
    def num_params(self):
        return int(sum(np.prod(s) for s in self.shapes))

    def arrays(self):
        return list(self._arrays)

    def with_flat(self, flat):
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone._set_flat(flat)
        return clone

    def flatten(self, arrays):
        return np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in arrays])


class GaussianPolicy(_FlatModel):
    """Diagonal Gaussian policy with an MLP mean and state-independent log-std.

    Parameters
    ----------
    obs_dim, act_dim : int
    hidden : tuple of int
        Hidden layer widths of the mean network.
    seed : int
        Seed for the initial weights (ignored when ``flat`` is given).
    init_log_std : float
    flat : array, optional
        Full parameter vector; the log-std block comes last.
    """

    def __init__(self, obs_dim, act_dim, hidden=(64, 64), seed=0, init_log_std=0.0, flat=None):
        self.obs_dim = int(obs_dim)
        self.act_dim = int(act_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.sizes = (self.obs_dim, *self.hidden, self.act_dim)
        self.shapes = mlp_shapes(self.sizes) + [(self.act_dim,)]
        if flat is None:
            rng = np.random.default_rng(seed)
            arrays = init_mlp(self.sizes, rng, out_gain=0.01)
            arrays.append(np.full(self.act_dim, float(init_log_std)))
            flat = self.flatten(arrays)
        self._set_flat(flat)

    def __repr__(self):
        return f"GaussianPolicy(obs_dim={self.obs_dim}, act_dim={self.act_dim}, hidden={self.hidden})"

    @property
    def log_std(self):
        return np.maximum(self._arrays[-1], LOG_STD_FLOOR)

    def mean(self, states):
        return mlp_forward(self._arrays[:-1], _as_batch(states, self.obs_dim))

    def log_prob(self, states, actions):
        """Log-density of each action under the policy at the matching state."""
        states = _as_batch(states, self.obs_dim)
        actions = np.asarray(actions, dtype=np.float64).reshape(len(states), self.act_dim)
        log_std = self.log_std
        z = (actions - self.mean(states)) * np.exp(-log_std)
        return -0.5 * np.sum(z * z, axis=1) - np.sum(log_std) - 0.5 * self.act_dim * _LOG_2PI

    def log_prob_var(self, arrays, states, actions):
        """Engine version of :meth:`log_prob`; ``arrays`` are graph leaves."""
        mu = mlp_forward_var(arrays[:-1], states)
        log_std = ad.clip(arrays[-1], LOG_STD_FLOOR, np.inf)
        z = (ad.as_var(actions) - mu) * ad.exp(-log_std)
        return (-0.5) * ad.square(z).sum(axis=1) - log_std.sum() - 0.5 * self.act_dim * _LOG_2PI

    def sample(self, state, rng):
        mu = self.mean(state)[0]
        return mu + np.exp(self.log_std) * rng.standard_normal(self.act_dim)

    def grad_log_prob(self, states, actions, coef):
        """Gradient of ``sum(coef * log_prob)`` with respect to the flat vector."""
        states = _as_batch(states, self.obs_dim)
        coef = np.asarray(coef, dtype=np.float64)
        _, grads = ad.value_and_grad(
            lambda *leaves: (self.log_prob_var(list(leaves), states, actions) * coef).sum(),
            self._arrays)
        return self.flatten(grads)

    def fisher_vector_product(self, states, weights, vector):
        """Weighted Fisher matrix of the policy applied to ``vector``.

        For a diagonal Gaussian the Fisher is J' diag(1/sigma^2) J on the mean
        plus 2 I on the log-std block, so no second derivatives are needed.
        ``weights`` is a distribution over ``states``.
        """
        states = _as_batch(states, self.obs_dim)
        weights = np.asarray(weights, dtype=np.float64)
        tangents = _split(np.asarray(vector, dtype=np.float64), self.shapes)
        _, dmu = mlp_jvp(self._arrays[:-1], tangents[:-1], states)
        u = dmu * np.exp(-2.0 * self.log_std) * weights[:, None]
        _, grads = ad.value_and_grad(
            lambda *leaves: (mlp_forward_var(list(leaves), states) * u).sum(),
            self._arrays[:-1])
        active = (self._arrays[-1] >= LOG_STD_FLOOR).astype(float)
        log_std_part = 2.0 * np.sum(weights) * active * tangents[-1]
        return np.concatenate([self.flatten(grads), log_std_part])


class ValueFunction(_FlatModel):
    """Scalar state-value MLP. ``hidden=()`` gives a linear model."""

    def __init__(self, obs_dim, hidden=(64, 64), seed=0, flat=None):
        self.obs_dim = int(obs_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.sizes = (self.obs_dim, *self.hidden, 1)
        self.shapes = mlp_shapes(self.sizes)
        if flat is None:
            rng = np.random.default_rng(seed)
            flat = self.flatten(init_mlp(self.sizes, rng, out_gain=1.0))
        self._set_flat(flat)

    def __repr__(self):
        return f"ValueFunction(obs_dim={self.obs_dim}, hidden={self.hidden})"

    def predict(self, states):
        return mlp_forward(self._arrays, _as_batch(states, self.obs_dim))[:, 0]

    def predict_var(self, arrays, states):
        return mlp_forward_var(arrays, states)


class TabularPolicy:
    """Softmax policy over a finite state and action space."""

    def __init__(self, logits):
        self.logits = np.array(logits, dtype=np.float64)
        if self.logits.ndim != 2:
            raise ValueError("logits must be a (num_states, num_actions) matrix")

    @property
    def probs(self):
        return tabular_exact(self)


def tabular_exact(policy):
    z = policy.logits - policy.logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def gauss_kl_per_state(p, q, states):
    """KL(p || q) at each state for two diagonal Gaussian policies."""
    if p.act_dim != q.act_dim:
        raise ValueError("policies have different action dimensions")
    mu_p, mu_q = p.mean(states), q.mean(states)
    ls_p, ls_q = p.log_std, q.log_std
    return np.sum(ls_q - ls_p + 0.5 * (np.exp(2.0 * (ls_p - ls_q))
                                      + (mu_p - mu_q) ** 2 * np.exp(-2.0 * ls_q)) - 0.5, axis=1)


def kl_diag_gauss(p, q, states, weights=None):
    """Average KL(p || q) over ``states``, optionally under ``weights``."""
    per_state = gauss_kl_per_state(p, q, states)
    if weights is None:
        return float(np.mean(per_state))
    return float(np.dot(weights, per_state))


# Checkpoint layout (little-endian):
#   b"GPIC" | u32 kind (0 policy, 1 value) | u32 n_sizes | n_sizes * u32 layer sizes
#   | u64 n_params | n_params * f64
_MAGIC = b"GPIC"


def save_checkpoint(path, model):
    kind = 0 if isinstance(model, GaussianPolicy) else 1
    header = _MAGIC + struct.pack("<II", kind, len(model.sizes))
    header += struct.pack(f"<{len(model.sizes)}I", *model.sizes)
    header += struct.pack("<Q", model.num_params)
    Path(path).write_bytes(header + model.flat.astype("<f8").tobytes())


def load_checkpoint(path):
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    kind, n_sizes = struct.unpack_from("<II", data, 4)
    offset = 12
    sizes = struct.unpack_from(f"<{n_sizes}I", data, offset)
    offset += 4 * n_sizes
    (n_params,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    flat = np.frombuffer(data, dtype="<f8", count=n_params, offset=offset).astype(np.float64)
    if kind == 0:
        return GaussianPolicy(sizes[0], sizes[-1], hidden=sizes[1:-1], flat=flat)
    return ValueFunction(sizes[0], hidden=sizes[1:-1], flat=flat)
