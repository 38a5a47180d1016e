"""Training loop, run directories, planner tables and training-curve plots.

A run directory holds ``config.txt`` (the full config, enough to rerun),
``metrics.csv`` (one row per policy update) and the final ``policy.ckpt`` and
``value.ckpt``. CSV columns are listed in ``METRIC_COLUMNS``:

    update, step          update index and environment steps so far
    mean_return           mean undiscounted return of the last 10 finished episodes
    episodes              number of finished episodes so far
    surrogate_before/after, measured_tv, measured_kl, step_scale,
    dual_temperature, lr, accepted
                          fields of the update report (nan where not applicable)
    eps_gen, delta_gen    trust-region radii used by the update
    ess                   effective sample size of the update batch
    window                number of policy batches in the replay window
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
from pathlib import Path

import numpy as np

from gpi.config import RunConfig, load_config
from gpi.envs import Sampler, builtin_env
from gpi.estimation import fit_value
from gpi.optim import Adam
from gpi.planner import adaptive_eps_gen, solve_mixture
from gpi.policies import GaussianPolicy, ValueFunction, save_checkpoint
from gpi.replay import ReplayWindow, assemble
from gpi import updaters

logger = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "update", "step", "mean_return", "episodes", "surrogate_before", "surrogate_after",
    "measured_tv", "measured_kl", "step_scale", "dual_temperature", "lr", "accepted",
    "eps_gen", "delta_gen", "ess", "window",
)
RETURN_WINDOW = 10


@dataclasses.dataclass
class TrainingResult:
    config: RunConfig
    policy: GaussianPolicy
    value_fn: ValueFunction
    rows: list
    policy_history: list = dataclasses.field(default_factory=list)


def _radius_plan(plan, window, policy, eps):
    """Plan with eps_gen set from the measured drift of the older policies."""
    slots = window.slots
    nu = plan.nu[:len(slots)] / plan.nu[:len(slots)].sum()
    priors = [s.policy for s in slots]
    probes = [s.batch.states for s in slots]
    eps_gen = adaptive_eps_gen(policy, priors, nu, eps, probes)
    return dataclasses.replace(plan, eps_gen=eps_gen, delta_gen=eps_gen ** 2 / 2.0)


def _update(config, batch, policy, plan, lr_state, seed):
    algo = config.algo
    if algo == "ppo":
        return updaters.ppo_update(batch, policy, config.eps, lr_state, config.epochs, config.minibatches, seed)
    if algo == "geppo":
        return updaters.geppo_update(batch, policy, plan, lr_state, config.epochs, config.minibatches, seed)
    solver = dict(cg_iters=config.cg_iters, damping=config.damping, backtrack=config.backtrack)
    if algo == "trpo":
        return updaters.trpo_update(batch, policy, config.on_policy_delta(), **solver)
    if algo == "getrpo":
        return updaters.getrpo_update(batch, policy, plan, **solver)
    if algo == "vmpo":
        return updaters.vmpo_update(batch, policy, config.on_policy_delta(), **solver)
    return updaters.gevmpo_update(batch, policy, plan, **solver)


def run_training(config, keep_policies=False, callback=None):
    """Run the collect / assemble / update loop described by ``config``.

    On-policy algorithms update after every ``N`` samples, the generalized
    ones after every ``n = N / B`` samples using the last ``M`` batches.
    """
    seeds = config.seeds()
    env = builtin_env(config.env, horizon=config.horizon)
    hidden = (config.hidden, config.hidden)
    policy = GaussianPolicy(env.state_dim, env.action_dim, hidden, seed=seeds["policy_init"],
                            init_log_std=config.init_log_std)
    value_fn = ValueFunction(env.state_dim, hidden, seed=seeds["value_init"])
    base_plan = config.plan()
    window = ReplayWindow(len(base_plan.nu), config.n)
    sampler = Sampler(env, seeds["env"])
    lr_state = updaters.LearningRateState(config.lr, config.alpha)
    value_opt = Adam(config.value_lr)
    policy_seeds = np.random.default_rng(seeds["policy_shuffle"])
    value_seeds = np.random.default_rng(seeds["value_shuffle"])
    rows = []
    history = [policy] if keep_policies else []
    step = 0
    update = 0
    while step + config.n <= config.total_steps:
        batch = sampler.collect(policy, config.n)
        step += config.n
        window.push(policy, batch)
        plan = base_plan
        if config.adaptive_radius and len(window) > 1:
            plan = _radius_plan(base_plan, window, policy, config.eps)
        wb = assemble(window, policy, value_fn, plan, config.gamma, config.lambda_gae, config.c_bar)
        new_policy, report = _update(config, wb, policy, plan, lr_state, int(policy_seeds.integers(2 ** 63)))
        value_fn = fit_value(value_fn, wb.states, wb.value_targets, config.value_epochs,
                             config.value_minibatches, config.value_lr,
                             seed=int(value_seeds.integers(2 ** 63)), optimizer=value_opt)
        recent = sampler.completed_returns[-RETURN_WINDOW:]
        row = dict(
            update=update, step=step,
            mean_return=float(np.mean(recent)) if recent else math.nan,
            episodes=len(sampler.completed_returns),
            surrogate_before=report.surrogate_before, surrogate_after=report.surrogate_after,
            measured_tv=report.measured_tv, measured_kl=report.measured_kl,
            step_scale=report.step_scale, dual_temperature=report.dual_temperature,
            lr=report.lr, accepted=int(report.accepted),
            eps_gen=plan.eps_gen if not config.on_policy else config.eps,
            delta_gen=plan.delta_gen if not config.on_policy else config.on_policy_delta(),
            ess=float(1.0 / np.dot(wb.weights, wb.weights)), window=len(window))
        rows.append(row)
        if callback is not None:
            callback(row)
        policy = new_policy
        if keep_policies:
            history.append(policy)
        update += 1
    return TrainingResult(config, policy, value_fn, rows, history)


def run_name(config):
    name = f"{config.algo}_{config.env}_s{config.seed}"
    if not config.on_policy:
        name = f"{config.algo}_{config.env}_B{config.B}_k{config.kappa:g}_s{config.seed}"
    return name


def write_metrics(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(row[k]) for k in METRIC_COLUMNS})


def _cell(value):
    if isinstance(value, float):
        return repr(value)
    return value


def train(config, out_dir="runs", name=None, log_every=0):
    """Train and write a self-describing run directory; returns its path."""
    run_dir = Path(out_dir) / (name or run_name(config))
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(config.to_text())

    def report(row):
        if log_every and row["update"] % log_every == 0:
            logger.info("update %d step %d mean_return %.2f", row["update"], row["step"], row["mean_return"])

    result = run_training(config, callback=report)
    write_metrics(run_dir / "metrics.csv", result.rows)
    save_checkpoint(run_dir / "policy.ckpt", result.policy)
    save_checkpoint(run_dir / "value.ckpt", result.value_fn)
    return run_dir


def load_run(run_dir):
    """(config, columns) for a run directory; columns map name to float array."""
    run_dir = Path(run_dir)
    config = load_config(run_dir / "config.txt")
    with open(run_dir / "metrics.csv", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = [[float(x) for x in row] for row in reader]
    arr = np.array(data, dtype=np.float64).reshape(len(data), len(header))
    return config, {name: arr[:, i] for i, name in enumerate(header)}


# ------------------------------------------------------------------ planning

PLAN_COLUMNS = ("B", "kappa", "M", "nu", "ess_gain_pct", "tv_gain_pct", "eps_gen", "delta_gen")


def plan_table(B, kappas=(0.0, 0.5, 1.0), n=1024, eps=0.2):
    rows = []
    for kappa in kappas:
        plan = solve_mixture(B, float(kappa), n, eps)
        rows.append(dict(B=B, kappa=float(kappa), M=plan.M, nu=plan.nu.copy(),
                         ess_gain_pct=100.0 * plan.ess_gain, tv_gain_pct=100.0 * plan.tv_gain,
                         eps_gen=plan.eps_gen, delta_gen=plan.delta_gen))
    return rows


def format_plan_table(rows, max_weights=8):
    lines = [f"{'kappa':>6} {'M':>4} {'ESS gain':>9} {'TV gain':>9} {'eps_gen':>9}  nu"]
    for r in rows:
        nu = " ".join(f"{x:.4f}" for x in r["nu"][:max_weights])
        if len(r["nu"]) > max_weights:
            nu += " ..."
        lines.append(f"{r['kappa']:>6.2f} {r['M']:>4d} {round(r['ess_gain_pct'], 2) + 0.0:>8.2f}% {round(r['tv_gain_pct'], 2) + 0.0:>8.2f}% "
                     f"{r['eps_gen']:>9.5f}  {nu}")
    return "\n".join(lines)


def write_plan_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PLAN_COLUMNS)
        for r in rows:
            writer.writerow([r["B"], repr(r["kappa"]), r["M"], " ".join(repr(float(x)) for x in r["nu"]),
                             repr(r["ess_gain_pct"]), repr(r["tv_gain_pct"]), repr(r["eps_gen"]),
                             repr(r["delta_gen"])])


# ------------------------------------------------------------------ plotting

def aggregate(curves):
    """Mean and half of one standard error across equally long curves."""
    curves = np.asarray(curves, dtype=np.float64)
    if curves.ndim != 2:
        raise ValueError("curves must be a (runs, points) array")
    mean = curves.mean(axis=0)
    if len(curves) < 2:
        return mean, np.zeros_like(mean)
    se = curves.std(axis=0, ddof=1) / math.sqrt(len(curves))
    return mean, 0.5 * se


def group_runs(run_dirs, metric="mean_return"):
    """Group runs by everything but the seed; returns {label: (steps, curves)}."""
    groups = {}
    header = None
    for d in run_dirs:
        config, cols = load_run(d)
        if header is None:
            header = tuple(cols)
        elif tuple(cols) != header:
            raise ValueError(f"{d} has metric columns {tuple(cols)}, expected {header}")
        if metric not in cols:
            raise ValueError(f"{d} has no column {metric!r}")
        label = run_name(config).rsplit("_s", 1)[0]
        groups.setdefault(label, []).append((cols["step"], cols[metric]))
    out = {}
    for label, runs in groups.items():
        length = min(len(s) for s, _ in runs)
        steps = runs[0][0][:length]
        for s, _ in runs:
            if not np.array_equal(s[:length], steps):
                raise ValueError(f"runs in group {label} log at different steps")
        out[label] = (steps, np.array([c[:length] for _, c in runs]))
    return out


def plot_runs(run_dirs, out_path, metric="mean_return"):
    """Mean curve per group with half-standard-error shading."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    groups = group_runs(run_dirs, metric)
    fig, ax = plt.subplots(figsize=(6, 4))
    for label in sorted(groups):
        steps, curves = groups[label]
        mean, half = aggregate(curves)
        ax.plot(steps, mean, label=f"{label} ({len(curves)})")
        ax.fill_between(steps, mean - half, mean + half, alpha=0.25, linewidth=0)
    ax.set_xlabel("steps")
    ax.set_ylabel(metric)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return Path(out_path)
