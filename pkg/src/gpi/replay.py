"""The short replay window of recent policy batches.

Only the last ``M`` batches are kept, each next to the policy that collected
it, so importance ratios can be recomputed against any policy later on.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from gpi.estimation import standardize_weighted, vtrace_from_log_ratios
from gpi.exceptions import EstimationError


@dataclass(frozen=True)
class Slot:
    policy: object
    batch: object


class ReplayWindow:
    """Ring of the ``capacity`` most recent (policy, batch) pairs.

    ``slots[i]`` holds the data of the policy from ``i`` updates ago.
    """

    def __init__(self, capacity, n):
        if capacity < 1 or n < 1:
            raise ValueError("capacity and n must be positive")
        self.capacity = int(capacity)
        self.n = int(n)
        self._slots = deque(maxlen=self.capacity)

    def __len__(self):
        return len(self._slots)

    def __repr__(self):
        return f"ReplayWindow(capacity={self.capacity}, n={self.n}, filled={len(self)})"

    @property
    def slots(self):
        return list(self._slots)

    @property
    def ages(self):
        return list(range(len(self._slots)))

    @property
    def num_transitions(self):
        return sum(len(s.batch) for s in self._slots)

    def push(self, policy, batch):
        if len(batch) != self.n:
            raise ValueError(f"expected a batch of {self.n} transitions, got {len(batch)}")
        self._slots.appendleft(Slot(policy, batch))
        return self


@dataclass(frozen=True)
class WeightedBatch:
    """Update batch assembled from a replay window.

    ``weights`` sum to one and carry the mixture weight of each sample's age
    spread evenly over its slot. ``centers`` are pi_k / pi_{k-i} at the start
    of the update; ``behavior_logprob`` are log pi_{k-i}.
    """

    states: np.ndarray
    actions: np.ndarray
    behavior_logprob: np.ndarray
    ages: np.ndarray
    weights: np.ndarray
    centers: np.ndarray
    advantages: np.ndarray
    raw_advantages: np.ndarray
    value_targets: np.ndarray

    def __len__(self):
        return len(self.weights)

    def age_weights(self):
        """Total weight per age, for comparison with the plan's ``nu``."""
        return np.bincount(self.ages, weights=self.weights)


def age_weights_for(nu, num_ages):
    """Restrict ``nu`` to the ages present and renormalize."""
    nu = np.asarray(nu, dtype=np.float64)[:num_ages]
    return nu / nu.sum()


def assemble(window, policy, value_fn, plan, gamma=0.995, lam=0.97, c_bar=1.0):
    """Build the weighted update batch for the current policy.

    Advantages are V-trace estimates per slot under the current value
    function, then the ratio-weighted advantages are standardized across the
    whole batch under the mixture weights.
    """
    if len(window) == 0:
        raise ValueError("cannot assemble from an empty window")
    nu = age_weights_for(plan.nu, len(window))
    parts = []
    for age, slot in enumerate(window.slots):
        if age >= len(nu) or nu[age] == 0.0:
            continue
        b = slot.batch
        behavior = slot.policy.log_prob(b.states, b.actions)
        current = policy.log_prob(b.states, b.actions)
        log_ratio = current - behavior
        with np.errstate(over="ignore"):
            bad = np.flatnonzero(~np.isfinite(np.exp(log_ratio)))
        if bad.size:
            raise EstimationError(f"non-finite importance ratio in slot {age} at index {bad[0]}")
        est = vtrace_from_log_ratios(
            b.rewards, value_fn.predict(b.states), b.dones, log_ratio, gamma, lam, c_bar,
            next_values=value_fn.predict(b.next_states), terminated=b.terminated)
        parts.append(dict(
            states=b.states, actions=b.actions, behavior=behavior, ratios=est.ratios,
            advantages=est.advantages, targets=est.value_targets,
            ages=np.full(len(b), age), weights=np.full(len(b), nu[age] / len(b))))

    def cat(key):
        return np.concatenate([p[key] for p in parts])

    weights = cat("weights")
    ratios = cat("ratios")
    raw = cat("advantages")
    return WeightedBatch(
        states=cat("states"), actions=cat("actions"), behavior_logprob=cat("behavior"),
        ages=cat("ages"), weights=weights, centers=ratios,
        advantages=standardize_weighted(raw, ratios, weights), raw_advantages=raw,
        value_targets=cat("targets"))
