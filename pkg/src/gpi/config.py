"""Run configuration: defaults, a flat key = value file format and seed splitting.

Config files hold one ``key = value`` pair per line; ``#`` starts a comment.
Keys are the field names of :class:`RunConfig`. Omitted keys take the
defaults below, which follow the usual hyperparameters for these methods
(gamma 0.995, GAE lambda 0.97, N 2048, eps 0.2, Adam at 3e-4, ...).

Seed splitting: ``np.random.SeedSequence(seed).spawn(5)`` gives, in order,
the streams for environment sampling, policy init, value init, policy
minibatch shuffles and value minibatch shuffles.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from gpi.envs import BUILTIN_ENVS
from gpi.exceptions import ConfigurationError
from gpi.planner import make_plan, on_policy_plan, solve_mixture

ON_POLICY = ("ppo", "trpo", "vmpo")
GENERALIZED = ("geppo", "getrpo", "gevmpo")
ALGOS = ON_POLICY + GENERALIZED
SEED_STREAMS = ("env", "policy_init", "value_init", "policy_shuffle", "value_shuffle")


@dataclass(frozen=True)
class RunConfig:
    algo: str = "geppo"
    env: str = "pendulum_swingup"
    total_steps: int = 200_000
    N: int = 2048
    B: int = 2
    kappa: float = 0.5
    eps: float = 0.2
    gamma: float = 0.995
    lambda_gae: float = 0.97
    c_bar: float = 1.0
    seed: int = 0
    lr: float = 3e-4
    alpha: float = 0.03
    epochs: int = 10
    minibatches: int = 32
    cg_iters: int = 20
    damping: float = 0.01
    backtrack: int = 10
    value_lr: float = 3e-4
    value_epochs: int = 10
    value_minibatches: int = 32
    hidden: int = 64
    init_log_std: float = 0.0
    horizon: int = 1000
    adaptive_radius: bool = False

    def __post_init__(self):
        self.validate()

    @property
    def on_policy(self):
        return self.algo in ON_POLICY

    @property
    def n(self):
        """Samples collected between updates."""
        return self.N if self.on_policy else self.N // self.B

    def validate(self):
        if self.algo not in ALGOS:
            raise ConfigurationError(f"unknown algo {self.algo!r}; choose from {', '.join(ALGOS)}")
        if self.env not in BUILTIN_ENVS:
            raise ConfigurationError(
                f"unknown environment {self.env!r}; valid names: {', '.join(sorted(BUILTIN_ENVS))}")
        if self.B < 1:
            raise ConfigurationError("B must be at least 1")
        if self.N < 2 or self.N % self.B:
            raise ConfigurationError(f"N={self.N} must be a multiple of B={self.B}")
        if not 0.0 <= self.kappa <= 1.0:
            raise ConfigurationError("kappa must lie in [0, 1]")
        if self.n < 2:
            raise ConfigurationError("need at least two samples per update")
        if self.total_steps < self.n:
            raise ConfigurationError(f"total_steps={self.total_steps} is below one batch of {self.n}")
        for name in ("eps", "gamma", "c_bar"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if not 0.0 < self.gamma < 1.0 or not 0.0 <= self.lambda_gae <= 1.0:
            raise ConfigurationError("gamma must lie in (0, 1) and lambda_gae in [0, 1]")
        if self.lr < 0 or self.alpha < 0 or self.value_lr < 0:
            raise ConfigurationError("learning rates and alpha must be non-negative")
        if min(self.epochs, self.minibatches, self.value_minibatches, self.backtrack, self.hidden) < 1:
            raise ConfigurationError("epochs, minibatches, backtrack and hidden must be positive")
        if self.adaptive_radius and self.on_policy:
            raise ConfigurationError("adaptive_radius applies only to the generalized algorithms")

    def plan(self):
        """Mixture plan; on-policy algorithms always use nu = (1)."""
        if self.on_policy or self.B == 1:
            return on_policy_plan(self.n, self.eps)
        return solve_mixture(self.B, self.kappa, self.n, self.eps)

    def on_policy_delta(self):
        return make_plan([1.0], 1, self.n, 1.0, self.eps).delta_gen

    def seeds(self):
        """Integer seed per stream, see ``SEED_STREAMS``."""
        children = np.random.SeedSequence(self.seed).spawn(len(SEED_STREAMS))
        return {name: int(c.generate_state(1)[0]) for name, c in zip(SEED_STREAMS, children)}

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_text(self):
        lines = [f"{f.name} = {_format(getattr(self, f.name))}" for f in fields(self)]
        return "\n".join(lines) + "\n"


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _convert(name, kind, text):
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if kind is int:
            return int(float(text)) if "e" in text.lower() else int(text.replace("_", ""))
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigurationError(f"bad value for {name}: {text!r}") from None


_TYPES = {"str": str, "int": int, "float": float, "bool": bool}


def field_types():
    return {f.name: _TYPES[f.type] if isinstance(f.type, str) else f.type for f in fields(RunConfig)}


def parse_overrides(pairs):
    """Turn ``{key: text}`` into typed values, rejecting unknown keys."""
    types = field_types()
    out = {}
    for key, text in pairs.items():
        if key not in types:
            raise ConfigurationError(f"unknown config key {key!r}")
        out[key] = _convert(key, types[key], str(text))
    return out


def parse_config_text(text):
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        pairs[key] = value
    return pairs


def load_config(path=None, overrides=None):
    """Defaults, then the file at ``path``, then ``overrides``."""
    values = {}
    if path is not None:
        values.update(parse_overrides(parse_config_text(Path(path).read_text())))
    if overrides:
        values.update(parse_overrides(overrides))
    return RunConfig(**values)
