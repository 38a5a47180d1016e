"""Mixture weights over policy ages and the matching trust-region radii.

The planner chooses weights ``nu_i`` for data collected by the policy ``i``
updates ago. Reusing ``M`` batches of ``n`` samples gives an effective sample
size ``n / sum(nu_i^2)``; the one-step TV radius shrinks to
``eps / E_nu[i + 1]`` so the total drift from every reused policy stays within
the on-policy budget. The optimal ``nu`` trades the two off:

    minimize   kappa * sum(nu^2) / c_ess + (1 - kappa) * sum(nu_i (i+1)) / c_tv
    subject to sum(nu^2) <= 1/B,  sum(nu_i (i+1)) <= B,  nu in the simplex.

Every KKT point has the water-filling form ``nu_i = max(0, a - b (i+1))``
with ``b >= 0``. On a fixed support ``{0..M-1}`` the feasible set of such
vectors is the segment ``nu = 1/M + b ((M+1)/2 - (i+1))``, on which both
sums are closed-form in ``b``; each support is a one-dimensional convex
quadratic and the global optimum is the best of these.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from gpi.exceptions import ConfigurationError

_TOL = 1e-12


@dataclass(frozen=True)
class MixturePlan:
    """Mixture weights plus the derived radii and reuse metrics."""

    nu: np.ndarray
    B: int
    n: int
    kappa: float
    eps: float
    eps_gen: float
    delta_gen: float

    @property
    def M(self):
        return int(np.count_nonzero(self.nu > 0))

    @property
    def N(self):
        return self.B * self.n

    @property
    def mean_age(self):
        """E_nu[i + 1]."""
        return float(np.dot(self.nu, np.arange(1, len(self.nu) + 1)))

    @property
    def sum_sq(self):
        return float(np.dot(self.nu, self.nu))

    @property
    def ess(self):
        return self.n / self.sum_sq

    @property
    def tv_total(self):
        return self.B * self.eps_gen / 2.0

    @property
    def ess_gain(self):
        """Relative ESS increase over an on-policy batch of ``B n`` samples."""
        return 1.0 / (self.B * self.sum_sq) - 1.0

    @property
    def tv_gain(self):
        """Relative increase of the total TV update size per ``B n`` samples."""
        return self.B / self.mean_age - 1.0


def eps_gen_from(nu, eps):
    nu = np.asarray(nu, dtype=np.float64)
    if eps <= 0:
        raise ValueError("eps must be positive")
    return eps / float(np.dot(nu, np.arange(1, len(nu) + 1)))


def delta_gen_from(eps_gen):
    if eps_gen <= 0:
        raise ValueError("eps_gen must be positive")
    return eps_gen ** 2 / 2.0


def make_plan(nu, B, n=1024, kappa=0.0, eps=0.2):
    nu = np.array(np.trim_zeros(np.asarray(nu, dtype=np.float64), "b"))
    nu.flags.writeable = False
    eps_gen = eps_gen_from(nu, eps)
    return MixturePlan(nu, int(B), int(n), float(kappa), float(eps), eps_gen, delta_gen_from(eps_gen))


def on_policy_plan(n, eps=0.2, B=1):
    """Degenerate plan ``nu = (1.0)``: every update uses only fresh data."""
    return make_plan([1.0], B, n, 1.0, eps)


def uniform_plan(M, B, n=1024, eps=0.2):
    return make_plan(np.full(M, 1.0 / M), B, n, float("nan"), eps)


def _support_segment(M):
    """Uniform point, direction and b-range of the water-filling segment on support M."""
    ages = np.arange(1, M + 1, dtype=np.float64)
    uniform = np.full(M, 1.0 / M)
    direction = (M + 1) / 2.0 - ages
    b_max = 0.0 if M == 1 else 2.0 / (M * (M - 1))
    D = M * (M * M - 1) / 12.0  # sum(direction^2) = -sum(direction * ages)
    return uniform, direction, b_max, D


def _solve_support(M, B, w_sq, w_age):
    """Minimize w_sq * sum(nu^2) + w_age * E[i+1] on the support-M segment.

    Returns (objective, b) or None when the segment has no feasible point.
    Along the segment sum(nu^2) = 1/M + D b^2 and E[i+1] = (M+1)/2 - D b.
    """
    _, _, b_max, D = _support_segment(M)
    lo = 0.0
    hi = b_max
    if D > 0:
        lo = max(lo, ((M + 1) / 2.0 - B) / D)
        slack = 1.0 / B - 1.0 / M
        if slack < -_TOL:
            return None
        hi = min(hi, math.sqrt(max(slack, 0.0) / D))
    elif (M + 1) / 2.0 > B + _TOL or 1.0 / M > 1.0 / B + _TOL:
        return None
    if lo > hi + _TOL:
        return None
    hi = max(hi, lo)
    if D > 0 and w_sq > 0:
        # unconstrained minimizer w_age / (2 w_sq), clamped without overflowing
        b = hi if w_age >= 2.0 * w_sq * hi else max(w_age / (2.0 * w_sq), lo)
    else:
        b = hi if w_age > 0 else lo
    obj = w_sq * (1.0 / M + D * b * b) + w_age * ((M + 1) / 2.0 - D * b)
    return obj, b


@lru_cache(maxsize=256)
def _extremes(B, max_support):
    return _solve_weighted(B, 0.0, 1.0, max_support), _solve_weighted(B, 1.0, 0.0, max_support)


def _solve_weighted(B, w_sq, w_age, max_support):
    best = None
    for M in range(1, max_support + 1):
        sol = _solve_support(M, B, w_sq, w_age)
        if sol is None:
            continue
        # strict improvement only: ties keep the smaller support
        if best is None or sol[0] < best[0] - 1e-13 * max(1.0, abs(best[0])):
            best = (sol[0], M, sol[1])
    if best is None:
        raise RuntimeError(f"mixture problem infeasible for B={B}")
    _, M, b = best
    uniform, direction, _, _ = _support_segment(M)
    nu = np.maximum(uniform + b * direction, 0.0)
    return nu / nu.sum()


def solve_mixture(B, kappa, n=1024, eps=0.2, max_support=None):
    """Optimal mixture plan for batch multiple ``B`` and trade-off ``kappa``.

    ``kappa = 1`` maximizes the effective sample size, ``kappa = 0`` the total
    TV update size; both stay at least as large as on-policy. The scaling
    coefficients are the ranges of the two terms between those extremes.
    """
    if int(B) != B or B < 1:
        raise ConfigurationError("B must be a positive integer")
    if not 0.0 <= kappa <= 1.0:
        raise ConfigurationError("kappa must lie in [0, 1]")
    B = int(B)
    max_support = 4 * B if max_support is None else int(max_support)
    if B == 1:
        return make_plan([1.0], 1, n, kappa, eps)
    nu_tv, nu_ess = _extremes(B, max_support)
    if kappa == 0.0:
        nu = nu_tv
    elif kappa == 1.0:
        nu = nu_ess
    else:
        ages = np.arange(1, max_support + 1)
        c_ess = np.dot(nu_tv, nu_tv) - np.dot(nu_ess, nu_ess)
        c_tv = np.dot(nu_ess, ages[:len(nu_ess)]) - np.dot(nu_tv, ages[:len(nu_tv)])
        nu = _solve_weighted(B, kappa / c_ess, (1.0 - kappa) / c_tv, max_support)
    plan = make_plan(nu, B, n, kappa, eps)
    _check_feasible(plan)
    return plan


def _check_feasible(plan, tol=1e-9):
    nu = plan.nu
    if abs(nu.sum() - 1.0) > tol or np.any(nu < 0):
        raise RuntimeError(f"planner produced an invalid distribution {nu}")
    if plan.sum_sq > 1.0 / plan.B + tol or plan.mean_age > plan.B + tol:
        raise RuntimeError(f"planner violated the reuse constraints with {nu}")


def mixture_objective(nu, kappa, c_ess, c_tv):
    nu = np.asarray(nu, dtype=np.float64)
    ages = np.arange(1, nu.shape[-1] + 1)
    return kappa * np.sum(nu * nu, axis=-1) / c_ess + (1.0 - kappa) * (nu @ ages) / c_tv


def scaling_coefficients(B, max_support=None):
    """(c_ess, c_tv) from the kappa = 0 and kappa = 1 optima."""
    lo, hi = solve_mixture(B, 0.0, max_support=max_support), solve_mixture(B, 1.0, max_support=max_support)
    return lo.sum_sq - hi.sum_sq, hi.mean_age - lo.mean_age


def adaptive_eps_gen(current_policy, prior_policies, nu, eps, probe_states):
    """Radius left after subtracting the measured drift from older policies.

    ``prior_policies[i]`` is the policy from ``i`` updates ago (index 0 is the
    current one and contributes nothing). ``probe_states`` is either one
    array shared by all ages or a list with one array per age. Per-state TV is
    bounded through Pinsker: min(1, sqrt(KL / 2)).
    """
    from gpi.policies import gauss_kl_per_state

    nu = np.asarray(nu, dtype=np.float64)
    per_age = isinstance(probe_states, (list, tuple))
    drift = 0.0
    for i in range(1, len(nu)):
        if nu[i] == 0.0:
            continue
        states = probe_states[i] if per_age else probe_states
        states = np.asarray(states, dtype=np.float64)
        if states.size == 0:
            raise ValueError("adaptive radius needs at least one probe state")
        kl = gauss_kl_per_state(current_policy, prior_policies[i], states)
        drift += nu[i] * float(np.mean(np.minimum(1.0, np.sqrt(np.maximum(kl, 0.0) / 2.0))))
    if not per_age and np.asarray(probe_states).size == 0:
        raise ValueError("adaptive radius needs at least one probe state")
    return 2.0 * max(0.0, eps / 2.0 - drift)
