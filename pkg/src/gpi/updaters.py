"""Policy updates: clipped surrogate, natural-gradient trust region and VMPO.

Each on-policy update is the generalized one with uniform weights and ratio
centers fixed at one, so the two share every floating-point operation and a
degenerate mixture reproduces the on-policy trajectory exactly.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from gpi import autodiff as ad
from gpi.exceptions import BracketError, EstimationError
from gpi.optim import Adam
from gpi.policies import gauss_kl_per_state

logger = logging.getLogger(__name__)

_NAN = float("nan")


@dataclass(frozen=True)
class UpdateReport:
    surrogate_before: float
    surrogate_after: float
    measured_tv: float
    measured_kl: float
    step_scale: float = _NAN
    dual_temperature: float = _NAN
    lr: float = _NAN
    accepted: bool = True


class LearningRateState:
    """Adam state plus the adaptive learning-rate decay.

    After each update whose measured TV exceeds ``eps / 2`` the learning rate
    is divided by ``1 + alpha``.
    """

    def __init__(self, lr=3e-4, alpha=0.03):
        if lr < 0 or alpha < 0:
            raise ValueError("lr and alpha must be non-negative")
        self.optimizer = Adam(lr)
        self.alpha = float(alpha)

    @property
    def lr(self):
        return self.optimizer.lr

    def observe(self, measured_tv, eps):
        """Apply the decay rule; returns True when the rate was lowered."""
        if measured_tv > eps / 2.0:
            self.optimizer.lr = self.optimizer.lr / (1.0 + self.alpha)
            return True
        return False


def _on_policy_view(batch):
    """Uniform weights and unit centers for a batch of fresh data."""
    n = len(batch.advantages)
    return np.full(n, 1.0 / n), np.ones(n)


def measured_tv(policy, batch, weights, centers):
    """Half the weighted mean of |pi / pi_{k-i} - pi_k / pi_{k-i}|."""
    ratio = np.exp(policy.log_prob(batch.states, batch.actions) - batch.behavior_logprob)
    return 0.5 * float(np.dot(weights, np.abs(ratio - centers)))


def clipped_surrogate(policy, batch, weights, centers, eps):
    ratio = np.exp(policy.log_prob(batch.states, batch.actions) - batch.behavior_logprob)
    adv = batch.advantages
    clipped = np.clip(ratio, centers - eps, centers + eps)
    return float(np.dot(weights, np.minimum(ratio * adv, clipped * adv)))


def _clipped_core(batch, policy, weights, centers, eps, lr_state, epochs, minibatches, seed):
    before = clipped_surrogate(policy, batch, weights, centers, eps)
    lr_used = lr_state.lr
    rng = np.random.default_rng(seed)
    flat = policy.flat
    opt = lr_state.optimizer
    for _ in range(epochs):
        for idx in np.array_split(rng.permutation(len(weights)), minibatches):
            if idx.size == 0:
                continue
            s, a = batch.states[idx], batch.actions[idx]
            old, adv = batch.behavior_logprob[idx], batch.advantages[idx]
            w = weights[idx] / weights[idx].sum()
            lo, hi = centers[idx] - eps, centers[idx] + eps
            model = policy.with_flat(flat)

            def loss(*leaves):
                ratio = ad.exp(model.log_prob_var(list(leaves), s, a) - old)
                obj = ad.minimum(ratio * adv, ad.clip(ratio, lo, hi) * adv)
                return -(obj * w).sum()

            _, grads = ad.value_and_grad(loss, model.arrays())
            flat = opt.step(flat, model.flatten(grads))
    new = policy.with_flat(flat)
    tv = measured_tv(new, batch, weights, centers)
    kl = float(np.dot(weights, gauss_kl_per_state(policy, new, batch.states)))
    lr_state.observe(tv, eps)
    report = UpdateReport(before, clipped_surrogate(new, batch, weights, centers, eps), tv, kl, lr=lr_used)
    return new, report


def ppo_update(batch, policy, eps, lr_state, epochs=10, minibatches=32, seed=0):
    """Clipped-surrogate update on fresh data (ratio range [1 - eps, 1 + eps])."""
    weights, centers = _on_policy_view(batch)
    return _clipped_core(batch, policy, weights, centers, eps, lr_state, epochs, minibatches, seed)


def geppo_update(batch, policy, plan, lr_state, epochs=10, minibatches=32, seed=0):
    """Mixture-weighted clipped update centered at pi_k / pi_{k-i} +- eps_gen."""
    return _clipped_core(batch, policy, batch.weights, batch.centers, plan.eps_gen,
                         lr_state, epochs, minibatches, seed)


def conjugate_gradient(matvec, b, iters=20, tol=1e-6):
    """Solve ``A x = b`` for symmetric positive definite ``A``.

    Stops when ||A x - b|| / ||b|| <= tol or after ``iters`` iterations.
    Returns (x, relative residual, iterations used).
    """
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b)
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return x, 0.0, 0
    r = b.copy()
    p = r.copy()
    rr = float(r @ r)
    used = 0
    for used in range(1, iters + 1):
        Ap = matvec(p)
        pAp = float(p @ Ap)
        if not np.isfinite(pAp) or pAp <= 0.0:
            raise EstimationError(f"conjugate gradient broke down (p'Ap = {pAp})")
        alpha = rr / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        rr_new = float(r @ r)
        if not np.isfinite(rr_new):
            raise EstimationError("non-finite conjugate gradient residual")
        if math.sqrt(rr_new) <= tol * b_norm:
            rr = rr_new
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x, math.sqrt(rr) / b_norm, used


def _natural_core(batch, policy, weights, coef, objective, radius, cg_iters, damping, backtrack,
                  dual_temperature=_NAN):
    """Trust-region step along the natural gradient of ``objective``.

    ``coef`` are per-sample multipliers so that the objective gradient at
    ``policy`` is grad sum(coef * log pi). The KL constraint is the weighted
    forward KL(pi_k || pi) over the batch states.
    """
    states = batch.states
    before = objective(policy)
    g = policy.grad_log_prob(states, batch.actions, coef)

    def unchanged(accepted):
        return policy, UpdateReport(before, before, 0.0, 0.0, 0.0, dual_temperature, accepted=accepted)

    if not np.any(g):
        return unchanged(True)

    def fvp(v):
        return policy.fisher_vector_product(states, weights, v) + damping * v

    v, _, _ = conjugate_gradient(fvp, g, iters=cg_iters)
    vFv = float(v @ policy.fisher_vector_product(states, weights, v))
    if not vFv > 0.0:
        return unchanged(False)
    beta = math.sqrt(2.0 * radius / vFv)
    for j in range(backtrack):
        scale = beta * 0.5 ** j
        cand = policy.with_flat(policy.flat + scale * v)
        kl = float(np.dot(weights, gauss_kl_per_state(policy, cand, states)))
        after = objective(cand)
        if np.isfinite(kl) and kl <= radius and after >= before:
            centers = batch_centers(batch, weights)
            tv = measured_tv(cand, batch, weights, centers)
            return cand, UpdateReport(before, after, tv, kl, scale, dual_temperature, accepted=True)
    logger.info("line search rejected all %d candidate steps", backtrack)
    return unchanged(False)


def batch_centers(batch, weights):
    centers = getattr(batch, "centers", None)
    if centers is None or len(centers) != len(weights):
        return np.ones(len(weights))
    return centers


def _ratio_objective(batch, weights):
    def objective(p):
        ratio = np.exp(p.log_prob(batch.states, batch.actions) - batch.behavior_logprob)
        return float(np.dot(weights, ratio * batch.advantages))
    return objective


def _trpo_core(batch, policy, weights, centers, radius, cg_iters, damping, backtrack):
    coef = weights * centers * batch.advantages
    return _natural_core(batch, policy, weights, coef, _ratio_objective(batch, weights), radius,
                         cg_iters, damping, backtrack)


def trpo_update(batch, policy, delta, cg_iters=20, damping=0.01, backtrack=10):
    weights, centers = _on_policy_view(batch)
    return _trpo_core(batch, policy, weights, centers, delta, cg_iters, damping, backtrack)


def getrpo_update(batch, policy, plan, cg_iters=20, damping=0.01, backtrack=10):
    return _trpo_core(batch, policy, batch.weights, batch.centers, plan.delta_gen,
                      cg_iters, damping, backtrack)


_LAMBDA_LO, _LAMBDA_HI, _GRID = 1e-6, 1e3, 64
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _log_partition(advantages, log_q, lam):
    return float(logsumexp(advantages / lam + log_q))


def vmpo_dual(lam, advantages, delta, sample_weights=None):
    """lam * delta + lam * log Z(lam) with Z = sum_j q_j exp(A_j / lam), q summing to one."""
    advantages = np.asarray(advantages, dtype=np.float64)
    q = np.full(len(advantages), 1.0 / len(advantages)) if sample_weights is None else sample_weights
    with np.errstate(divide="ignore"):
        log_q = np.log(q) - math.log(np.sum(q))
    return lam * delta + lam * _log_partition(advantages, log_q, lam)


def vmpo_weights(advantages, delta, sample_weights=None, tol=1e-8):
    """Non-parametric target weights w = exp(A / lam*) / Z(lam*).

    ``sample_weights`` are the q_j in Z = sum_j q_j exp(A_j / lam) (uniform by
    default; mixture weight times ratio for reused data), so sum(q * w) = 1.
    lam* minimizes the dual over a 64-point log grid on [1e-6, 1e3], refined
    by golden-section search in log lam down to a bracket width of ``tol``.
    The dual is evaluated with q normalized to sum to one: with raw
    importance ratios sum(q) can fall below exp(-delta), which would make the
    empirical dual unbounded below as lam grows.
    """
    advantages = np.asarray(advantages, dtype=np.float64)
    if advantages.size == 0:
        raise ValueError("vmpo_weights needs at least one advantage")
    if delta <= 0:
        raise ValueError("delta must be positive")
    n = advantages.size
    q = np.full(n, 1.0 / n) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
    with np.errstate(divide="ignore"):
        log_q = np.log(q)
    log_q_dual = log_q - math.log(q.sum())
    if np.ptp(advantages) == 0.0:
        # exp(A / lam) cancels against Z for every lam
        w = np.full(n, 1.0 / q.sum())
        return w, _LAMBDA_HI

    def dual(log_lam):
        lam = math.exp(log_lam)
        return lam * delta + lam * _log_partition(advantages, log_q_dual, lam)

    grid = np.linspace(math.log(_LAMBDA_LO), math.log(_LAMBDA_HI), _GRID)
    values = np.array([dual(x) for x in grid])
    if not np.all(np.isfinite(values)):
        raise BracketError(f"non-finite dual on the search grid (ends: {values[0]}, {values[-1]})")
    i = int(np.argmin(values))
    if i == _GRID - 1:
        raise BracketError(
            f"dual minimum at the upper bracket end: g({_LAMBDA_LO})={values[0]}, g({_LAMBDA_HI})={values[-1]}")
    a, b = grid[max(i - 1, 0)], grid[i + 1]
    c, d = b - _GOLDEN * (b - a), a + _GOLDEN * (b - a)
    fc, fd = dual(c), dual(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = dual(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = dual(d)
    lam = math.exp(0.5 * (a + b))
    log_z = _log_partition(advantages, log_q, lam)
    return np.exp(advantages / lam - log_z), lam


def _vmpo_core(batch, policy, weights, centers, radius, cg_iters, damping, backtrack):
    w, lam = vmpo_weights(batch.advantages, radius, weights * centers)
    w_bar = w - 1.0
    coef = weights * centers * w_bar
    if not np.any(w_bar):
        coef = np.zeros_like(coef)

    def objective(p):
        return float(np.dot(coef, p.log_prob(batch.states, batch.actions)))

    return _natural_core(batch, policy, weights, coef, objective, radius, cg_iters, damping,
                         backtrack, dual_temperature=lam)


def vmpo_update(batch, policy, delta, cg_iters=20, damping=0.01, backtrack=10):
    weights, centers = _on_policy_view(batch)
    return _vmpo_core(batch, policy, weights, centers, delta, cg_iters, damping, backtrack)


def gevmpo_update(batch, policy, plan, cg_iters=20, damping=0.01, backtrack=10):
    return _vmpo_core(batch, policy, batch.weights, batch.centers, plan.delta_gen,
                      cg_iters, damping, backtrack)
