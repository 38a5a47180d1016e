"""Exact tabular computations used to certify the improvement bounds.

Everything here enumerates finite state and action spaces, so every
expectation is an exact sum and each linear system is solved directly.
Policies may be given as ``TabularPolicy`` objects or as probability
matrices of shape (num_states, num_actions).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from gpi.policies import TabularPolicy

BOUND_TOL = 1e-9


def _probs(policy):
    if isinstance(policy, TabularPolicy):
        return policy.probs
    p = np.asarray(policy, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError("a tabular policy must be a (num_states, num_actions) matrix")
    return p


def _check(mdp, pi):
    if pi.shape != (mdp.num_states, mdp.num_actions):
        raise ValueError(f"policy has shape {pi.shape}, MDP has {(mdp.num_states, mdp.num_actions)}")


def state_transition(mdp, policy):
    """P_pi[s, s'] = sum_a pi(a|s) P(s'|s, a)."""
    pi = _probs(policy)
    _check(mdp, pi)
    return np.einsum("sa,sat->st", pi, mdp.transition)


def visitation(mdp, policy):
    """Normalized discounted state visitation d(s) = (1-g) sum_t g^t P(s_t = s)."""
    P = state_transition(mdp, policy)
    g = mdp.discount
    A = np.eye(mdp.num_states) - g * P.T
    try:
        return np.linalg.solve(A, (1.0 - g) * mdp.initial_dist)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError("visitation system is singular") from exc


def visitation_series(mdp, policy, horizon=10_000):
    """Truncated power series of the same quantity, used as a cross-check."""
    P = state_transition(mdp, policy)
    g = mdp.discount
    x = np.array(mdp.initial_dist, dtype=np.float64)
    total = np.zeros_like(x)
    scale = 1.0
    for _ in range(horizon):
        total += scale * x
        x = x @ P
        scale *= g
        if scale < 1e-300:
            break
    return (1.0 - g) * total


def values(mdp, policy):
    """(V, Q, A) of ``policy`` from a direct solve of the Bellman equations."""
    pi = _probs(policy)
    P = state_transition(mdp, pi)
    r_pi = np.sum(pi * mdp.reward, axis=1)
    V = np.linalg.solve(np.eye(mdp.num_states) - mdp.discount * P, r_pi)
    Q = mdp.reward + mdp.discount * mdp.transition @ V
    return V, Q, Q - V[:, None]


def performance(mdp, policy):
    V, _, _ = values(mdp, policy)
    return float(mdp.initial_dist @ V)


def per_state_tv(p, q):
    return 0.5 * np.abs(_probs(p) - _probs(q)).sum(axis=1)


def per_state_kl(p, q):
    p, q = _probs(p), _probs(q)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    return terms.sum(axis=1)


def expected_tv(d, pi, pi_k):
    """E_{s ~ d}[TV(pi, pi_k)(s)]."""
    return float(np.dot(d, per_state_tv(pi, pi_k)))


def ratio_form_tv(d, pi, pi_k, pi_ref):
    """Half of E_{s~d, a~pi_ref}|pi/pi_ref - pi_k/pi_ref|; equals expected_tv(d, pi, pi_k)."""
    pi, pi_k, pi_ref = _probs(pi), _probs(pi_k), _probs(pi_ref)
    dev = np.abs(pi / pi_ref - pi_k / pi_ref)
    return 0.5 * float(np.dot(d, np.sum(pi_ref * dev, axis=1)))


def performance_difference(mdp, pi, pi_k):
    """Absolute gap between J(pi) - J(pi_k) and the advantage form of the same difference."""
    p = _probs(pi)
    _, _, A = values(mdp, pi_k)
    lhs = performance(mdp, pi) - performance(mdp, pi_k)
    rhs = float(np.dot(visitation(mdp, p), np.sum(p * A, axis=1))) / (1.0 - mdp.discount)
    return abs(lhs - rhs)


@dataclass(frozen=True)
class BoundReport:
    lhs: float
    surrogate: float
    penalty: float
    C_const: float
    rhs: float
    margin: float
    holds: bool
    visitation_tv_margin: float = float("nan")


def _c_const(pi, A):
    return float(np.max(np.abs(np.sum(pi * A, axis=1))))


def check_bound_generalized(mdp, pi, policy_sequence, nu):
    """Exact terms of the mixture lower bound on J(pi) - J(pi_k).

    ``policy_sequence[i]`` is pi_{k-i}; ``nu[i]`` its mixture weight. Also
    checks TV(d^pi, d^ref) <= g/(1-g) E_{d^ref}[TV(pi, ref)] for each
    reference policy and reports the smallest slack as
    ``visitation_tv_margin``.
    """
    nu = np.asarray(nu, dtype=np.float64)
    if len(policy_sequence) < len(nu):
        raise ValueError("need one prior policy per mixture weight")
    if np.any(nu < 0) or abs(nu.sum() - 1.0) > 1e-9:
        raise ValueError("nu must be a probability vector")
    g = mdp.discount
    p = _probs(pi)
    _check(mdp, p)
    pi_k = _probs(policy_sequence[0])
    _, _, A = values(mdp, pi_k)
    lhs = performance(mdp, p) - performance(mdp, pi_k)
    C = _c_const(p, A)
    d_pi = visitation(mdp, p)
    surrogate = 0.0
    expected = 0.0
    vis_margin = math.inf
    for i, w in enumerate(nu):
        ref = _probs(policy_sequence[i])
        d_ref = visitation(mdp, ref)
        tv = expected_tv(d_ref, p, ref)
        vis_margin = min(vis_margin, g / (1.0 - g) * tv - 0.5 * float(np.abs(d_pi - d_ref).sum()))
        if w == 0.0:
            continue
        # importance sampling on actions collapses to E_{a~pi} at each state
        surrogate += w * float(np.dot(d_ref, np.sum(p * A, axis=1)))
        expected += w * tv
    surrogate /= 1.0 - g
    penalty = 2.0 * g * C / (1.0 - g) ** 2 * expected
    rhs = surrogate - penalty
    margin = lhs - rhs
    return BoundReport(float(lhs), float(surrogate), float(penalty), C, float(rhs), float(margin),
                       bool(margin >= -BOUND_TOL), float(vis_margin))


def check_bound_onpolicy(mdp, pi, pi_k):
    """Exact terms of the on-policy lower bound (the nu = (1) special case)."""
    return check_bound_generalized(mdp, pi, [pi_k], [1.0])


@dataclass(frozen=True)
class MixturePenaltyReport:
    eps_gen: float
    max_step_tv: float
    assumption_holds: bool
    penalty_expectation: float
    bound: float
    margin: float
    holds: bool


def check_mixture_penalty(mdp, policy_sequence, nu, eps):
    """Check that bounded one-step TVs keep the mixture penalty within eps / 2.

    ``policy_sequence`` runs newest first: entry 0 is the new policy
    pi_{k+1} and entry ``i + 1`` is pi_{k-i}. The assumption is that every
    consecutive pair has expected TV at most eps_gen / 2 under each reference
    visitation d^{pi_{k-i}}; the conclusion is
    E_nu[E_{d^{pi_{k-i}}}[TV(pi_{k+1}, pi_{k-i})]] <= eps / 2.
    """
    nu = np.asarray(nu, dtype=np.float64)
    M = len(nu)
    if len(policy_sequence) < M + 1:
        raise ValueError("need the new policy plus one prior policy per mixture weight")
    seq = [_probs(p) for p in policy_sequence[:M + 1]]
    eps_gen = eps / float(np.dot(nu, np.arange(1, M + 1)))
    new = seq[0]
    max_step = 0.0
    penalty = 0.0
    for i in range(M):
        ref = seq[i + 1]
        d_ref = visitation(mdp, ref)
        for j in range(i + 1):
            max_step = max(max_step, expected_tv(d_ref, seq[j], seq[j + 1]))
        penalty += nu[i] * expected_tv(d_ref, new, ref)
    bound = eps / 2.0
    margin = bound - penalty
    return MixturePenaltyReport(eps_gen, float(max_step), bool(max_step <= eps_gen / 2.0 + BOUND_TOL),
                          float(penalty), bound, float(margin), bool(margin >= -BOUND_TOL))


def _tv_along(logits, direction, t):
    z = logits + t * direction
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def step_to_tv(policy, target, tol=1e-14, max_iter=200):
    """A softmax policy at per-state TV exactly ``target`` from ``policy``.

    At each state the logit of the least likely action is raised; TV grows
    monotonically from 0 towards 1 - min_a p(a|s), found by bisection.
    """
    p = _probs(policy)
    if not 0.0 <= target < 1.0:
        raise ValueError("target TV must lie in [0, 1)")
    logits = np.log(p)
    out = np.empty_like(p)
    for s in range(p.shape[0]):
        row = logits[s:s + 1]
        direction = np.zeros_like(row)
        direction[0, np.argmin(p[s])] = 1.0
        if target > 1.0 - p[s].min():
            raise ValueError(f"TV {target} unreachable at state {s}")
        lo, hi = 0.0, 1.0
        while 0.5 * np.abs(_tv_along(row, direction, hi) - p[s:s + 1]).sum() < target:
            hi *= 2.0
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            tv = 0.5 * np.abs(_tv_along(row, direction, mid) - p[s:s + 1]).sum()
            if tv < target:
                lo = mid
            else:
                hi = mid
            if hi - lo < tol:
                break
        out[s] = _tv_along(row, direction, 0.5 * (lo + hi))[0]
    return out


def pinsker_gap(p, q):
    """sqrt(KL/2) - TV per state; non-negative by Pinsker's inequality."""
    return np.sqrt(np.maximum(per_state_kl(p, q), 0.0) / 2.0) - per_state_tv(p, q)


def monte_carlo_return(mdp, policy, episodes, seed, tol=1e-10):
    """Mean and standard error of the discounted return over sampled episodes.

    Episodes are truncated once the discount factor falls below ``tol``.
    """
    pi = _probs(policy)
    rng = np.random.default_rng(seed)
    S, A = pi.shape
    horizon = int(math.ceil(math.log(tol) / math.log(mdp.discount))) if mdp.discount > 0 else 1
    cum_pi = np.cumsum(pi, axis=1)
    cum_P = np.cumsum(mdp.transition, axis=2)
    s = rng.choice(S, size=episodes, p=mdp.initial_dist)
    returns = np.zeros(episodes)
    scale = 1.0
    for _ in range(horizon):
        a = np.minimum((rng.random(episodes)[:, None] > cum_pi[s]).sum(axis=1), A - 1)
        returns += scale * mdp.reward[s, a]
        s = np.minimum((rng.random(episodes)[:, None] > cum_P[s, a]).sum(axis=1), S - 1)
        scale *= mdp.discount
    return float(returns.mean()), float(returns.std(ddof=1) / math.sqrt(episodes))


def random_policy_pair(num_states, num_actions, rng, scale):
    """Two softmax policies whose logits differ by noise of size ``scale``."""
    base = rng.normal(size=(num_states, num_actions))
    other = base + scale * rng.normal(size=base.shape)
    return TabularPolicy(base).probs, TabularPolicy(other).probs
