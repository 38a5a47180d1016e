"""Certification suite for the improvement bounds on random tabular MDPs.

Each check enumerates seeded random instances (at most 8 states and 4
actions) with policy pairs drawn at logit-perturbation scales from 0.01 to
10, so both tight and loose regimes are covered. A failing check records the
instance seed and index so it can be replayed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gpi import oracle
from gpi.envs import make_random_tabular
from gpi.policies import TabularPolicy

SCALES = (0.01, 0.1, 1.0, 10.0)


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    instances: int
    failures: list = field(default_factory=list)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<34} instances={self.instances:<4d} worst={self.worst:+.3e}"


def random_instance(rng, max_states=8, max_actions=4):
    S = int(rng.integers(2, max_states + 1))
    A = int(rng.integers(2, max_actions + 1))
    gamma = float(rng.uniform(0.5, 0.99))
    return make_random_tabular(S, A, int(rng.integers(2 ** 31)), discount=gamma)


def certify_bounds(instances=100, seed=0, num_priors=3):
    """Run the bound checks; returns a list of :class:`CheckResult`."""
    rng = np.random.default_rng(seed)
    names = ("on-policy bound", "generalized bound", "performance difference", "visitation TV bound",
             "Pinsker", "ratio-form TV identity", "visitation normalization")
    res = {n: CheckResult(n, True, 0.0, 0) for n in names}

    def track(name, ok, value, worse, info):
        r = res[name]
        if r.instances == 0 or worse(value, r.worst):
            r.worst = value
        r.instances += 1
        if not ok:
            r.passed = False
            r.failures.append(info)

    lower = lambda a, b: a < b  # noqa: E731
    higher = lambda a, b: a > b  # noqa: E731
    for k in range(instances):
        mdp = random_instance(rng)
        S, A = mdp.num_states, mdp.num_actions
        scale = SCALES[k % len(SCALES)]
        pi, pi_k = oracle.random_policy_pair(S, A, rng, scale)
        info = dict(seed=seed, instance=k, scale=scale, mdp=mdp, pi=pi, pi_k=pi_k)

        rep = oracle.check_bound_onpolicy(mdp, pi, pi_k)
        track("on-policy bound", rep.holds, rep.margin, lower, info)

        priors = [pi_k] + [TabularPolicy(np.log(pi_k) + scale * rng.normal(size=(S, A))).probs
                           for _ in range(num_priors - 1)]
        nu = rng.dirichlet(np.ones(num_priors))
        gen = oracle.check_bound_generalized(mdp, pi, priors, nu)
        track("generalized bound", gen.holds, gen.margin, lower, dict(info, priors=priors, nu=nu))
        track("visitation TV bound", gen.visitation_tv_margin >= -oracle.BOUND_TOL,
              gen.visitation_tv_margin, lower, dict(info, priors=priors))

        gap = oracle.performance_difference(mdp, pi, pi_k)
        track("performance difference", gap <= 1e-9, gap, higher, info)

        pinsker = float(np.min(oracle.pinsker_gap(pi, pi_k)))
        track("Pinsker", pinsker >= -1e-12, pinsker, lower, info)

        d_ref = oracle.visitation(mdp, priors[-1])
        diff = abs(oracle.ratio_form_tv(d_ref, pi, pi_k, priors[-1]) - oracle.expected_tv(d_ref, pi, pi_k))
        track("ratio-form TV identity", diff <= 1e-12, diff, higher, info)

        err = abs(float(oracle.visitation(mdp, pi).sum()) - 1.0)
        track("visitation normalization", err <= 1e-12, err, higher, info)
    return [res[n] for n in names]


def certify_mixture_penalty(instances=50, seed=0, eps=0.2):
    """Mixture penalty of policy sequences with per-state one-step TV eps_gen / 2."""
    from gpi.planner import solve_mixture

    rng = np.random.default_rng(seed)
    result = CheckResult("mixture penalty", True, 0.0, 0)
    for k in range(instances):
        mdp = random_instance(rng)
        B = int(rng.integers(2, 5))
        plan = solve_mixture(B, float(rng.choice([0.0, 0.5, 1.0])), eps=eps)
        start = TabularPolicy(rng.normal(size=(mdp.num_states, mdp.num_actions))).probs
        seq = [start]
        for _ in range(plan.M):
            seq.insert(0, oracle.step_to_tv(seq[0], plan.eps_gen / 2.0))
        rep = oracle.check_mixture_penalty(mdp, seq, plan.nu, eps)
        ok = rep.holds and rep.assumption_holds
        if result.instances == 0 or rep.margin < result.worst:
            result.worst = rep.margin
        result.instances += 1
        if not ok:
            result.passed = False
            result.failures.append(dict(seed=seed, instance=k, mdp=mdp, sequence=seq, nu=plan.nu))
    return result


def format_failures(results):
    lines = []
    for r in results:
        for f in r.failures:
            lines.append(f"{r.name}: {f!r}")
    return "\n".join(lines)
