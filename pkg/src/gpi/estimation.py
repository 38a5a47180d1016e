"""Advantage and value-target estimation.

On-policy data uses GAE. Data from older policies uses the V-trace-corrected
variant: each TD error ``delta_{t+j}`` is weighted by ``(gamma * lam)^j``
times the product of truncated ratios ``c_{t+1} ... c_{t+j}``, and the value
target multiplies in ``c_t`` as well. Both are computed with the same backward
recursion, so with all ratios equal to one V-trace returns GAE bit for bit.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from gpi import autodiff as ad
from gpi.exceptions import EstimationError
from gpi.optim import Adam

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdvantageEstimate:
    advantages: np.ndarray
    value_targets: np.ndarray
    ratios: np.ndarray
    truncated_ratios: np.ndarray


def _backward_trace(deltas, coefs, cuts):
    # acc_t = delta_t + coefs_t * acc_{t+1}, restarted after every cut
    out = np.empty(len(deltas))
    acc = 0.0
    for t in range(len(deltas) - 1, -1, -1):
        if cuts[t]:
            acc = 0.0
        acc = deltas[t] + coefs[t] * acc
        out[t] = acc
    return out


def _td_errors(rewards, values, next_values, terminated, gamma):
    bootstrap = np.where(terminated, 0.0, next_values)
    return rewards + gamma * bootstrap - values


def _prepare(rewards, values, dones, next_values, terminated):
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    T = len(rewards)
    if next_values is None:
        if len(values) != T + 1:
            raise ValueError(f"values must have length {T + 1} when next_values is omitted, got {len(values)}")
        values, next_values = values[:-1], values[1:]
    next_values = np.asarray(next_values, dtype=np.float64)
    terminated = np.zeros(T, dtype=bool) if terminated is None else np.asarray(terminated, dtype=bool)
    for name, arr in (("values", values), ("next_values", next_values), ("dones", dones),
                      ("terminated", terminated)):
        if len(arr) != T:
            raise ValueError(f"{name} has length {len(arr)}, expected {T}")
    return rewards, values, dones, next_values, terminated


def gae(rewards, values, dones, gamma, lam, next_values=None, terminated=None):
    """Generalized advantage estimates for one time-ordered batch.

    ``values`` holds V(s_t); pass ``next_values`` = V(s_{t+1}) explicitly, or
    give ``values`` one extra trailing entry. ``dones`` cuts the trace after
    step t; ``terminated`` additionally zeroes the bootstrap value there.
    """
    rewards, values, dones, next_values, terminated = _prepare(rewards, values, dones, next_values, terminated)
    deltas = _td_errors(rewards, values, next_values, terminated, gamma)
    coefs = np.full(len(rewards), gamma * lam)
    advantages = _backward_trace(deltas, coefs, dones)
    ones = np.ones(len(rewards))
    return AdvantageEstimate(advantages, advantages + values, ones, ones)


def vtrace_from_log_ratios(rewards, values, dones, log_ratios, gamma, lam, c_bar,
                           next_values=None, terminated=None):
    """V-trace-corrected GAE given log(pi_k / pi_behavior) per step."""
    rewards, values, dones, next_values, terminated = _prepare(rewards, values, dones, next_values, terminated)
    with np.errstate(over="ignore"):
        ratios = np.exp(np.asarray(log_ratios, dtype=np.float64))
    bad = np.flatnonzero(~np.isfinite(ratios))
    if bad.size:
        raise EstimationError(f"non-finite importance ratio at transition {bad[0]}")
    c = np.minimum(c_bar, ratios)
    deltas = _td_errors(rewards, values, next_values, terminated, gamma)
    c_next = np.append(c[1:], 0.0)
    coefs = gamma * lam * c_next
    advantages = _backward_trace(deltas, coefs, dones)
    return AdvantageEstimate(advantages, values + c * advantages, ratios, c)


def vtrace_advantages(batch, current_policy, value_fn, gamma, lam, c_bar=1.0, behavior_logprob=None):
    """V-trace estimates for a batch collected by an older policy.

    ``behavior_logprob`` defaults to the log-probabilities stored with the
    batch. The final transition always bootstraps from V(next_state).
    """
    if c_bar <= 0:
        raise ValueError("c_bar must be positive")
    behavior = batch.behavior_logprob if behavior_logprob is None else behavior_logprob
    log_ratios = current_policy.log_prob(batch.states, batch.actions) - behavior
    return vtrace_from_log_ratios(
        batch.rewards, value_fn.predict(batch.states), batch.dones, log_ratios, gamma, lam, c_bar,
        next_values=value_fn.predict(batch.next_states), terminated=batch.terminated)


def standardize_weighted(advantages, ratios, weights=None, eps=1e-12):
    """Standardize ``ratios * advantages`` and map back to advantage units.

    Returns ``a`` such that ``ratios * a`` has (weighted) mean 0 and standard
    deviation 1. A batch with no spread returns zeros.
    """
    advantages = np.asarray(advantages, dtype=np.float64)
    ratios = np.asarray(ratios, dtype=np.float64)
    if advantages.shape != ratios.shape:
        raise ValueError("advantages and ratios must have the same length")
    if advantages.size < 2:
        raise ValueError("standardization needs at least two samples")
    if weights is None:
        weights = np.full(advantages.size, 1.0 / advantages.size)
    x = ratios * advantages
    mean = np.dot(weights, x)
    centered = x - mean
    std = np.sqrt(np.dot(weights, centered * centered))
    if not std > eps * max(1.0, abs(mean)):
        logger.warning("degenerate advantage batch (zero spread); returning zeros")
        return np.zeros_like(advantages)
    return centered / std / ratios


def fit_value(value_fn, states, value_targets, epochs=10, minibatches=32, lr=3e-4, seed=0, optimizer=None):
    """Regress the value function onto targets with minibatch Adam.

    Returns the new ``ValueFunction``. Pass ``optimizer`` to carry Adam state
    across calls; its learning rate is left untouched in that case.
    """
    states = np.asarray(states, dtype=np.float64)
    targets = np.asarray(value_targets, dtype=np.float64)
    if len(states) == 0:
        raise ValueError("empty batch")
    opt = optimizer if optimizer is not None else Adam(lr)
    rng = np.random.default_rng(seed)
    flat = value_fn.flat
    for _ in range(epochs):
        for idx in np.array_split(rng.permutation(len(states)), minibatches):
            if idx.size == 0:
                continue
            s, y = states[idx], targets[idx]
            model = value_fn.with_flat(flat)

            def loss(*leaves):
                # (batch, 1) head summed over its single column
                err = model.predict_var(list(leaves), s).sum(axis=1) - y
                return ad.square(err).mean()

            _, grads = ad.value_and_grad(loss, model.arrays())
            flat = opt.step(flat, model.flatten(grads))
    return value_fn.with_flat(flat)

