"""scikit-learn style wrapper around the training loop.

``fit`` trains in memory on the named built-in environment (there is no
``X``: the data comes from the agent's own interaction); ``predict`` maps
states to mean actions of the trained policy.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from gpi.config import RunConfig, parse_overrides
from gpi.exceptions import ConfigurationError
from gpi.harness import run_training


class GPIAgent(BaseEstimator):
    """Policy-improvement agent with optional sample reuse.

    Parameters
    ----------
    algo : {"ppo", "trpo", "vmpo", "geppo", "getrpo", "gevmpo"}
    env : str
        Name of a built-in environment.
    total_steps : int
    B : int
        Batch multiple; the generalized algorithms update every N / B steps.
    kappa : float
        Trade-off between effective sample size (1) and update size (0).
    eps : float
        On-policy TV trust-region parameter.
    seed : int
    config_overrides : dict, optional
        Any other ``RunConfig`` field, e.g. ``{"lr": 1e-4}``.
    """

    def __init__(self, algo="geppo", env="pendulum_swingup", total_steps=200_000, B=2, kappa=0.5,
                 eps=0.2, seed=0, config_overrides=None):
        self.algo = algo
        self.env = env
        self.total_steps = total_steps
        self.B = B
        self.kappa = kappa
        self.eps = eps
        self.seed = seed
        self.config_overrides = config_overrides

    def make_config(self):
        extra = parse_overrides(self.config_overrides or {})
        named = dict(algo=self.algo, env=self.env, total_steps=self.total_steps, B=self.B,
                     kappa=self.kappa, eps=self.eps, seed=self.seed)
        clash = sorted(set(named) & set(extra))
        if clash:
            raise ConfigurationError(f"set {', '.join(clash)} as estimator parameters, not in config_overrides")
        return RunConfig(**named, **extra)

    def fit(self, X=None, y=None):
        config = self.make_config()
        result = run_training(config)
        self.config_ = config
        self.plan_ = config.plan()
        self.policy_ = result.policy
        self.value_fn_ = result.value_fn
        self.history_ = result.rows
        self.n_features_in_ = result.policy.obs_dim
        return self

    def predict(self, X):
        """Mean action for each state in ``X``."""
        check_is_fitted(self, "policy_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, the policy expects {self.n_features_in_}")
        return self.policy_.mean(X)

    def value(self, X):
        check_is_fitted(self, "value_fn_")
        return self.value_fn_.predict(check_array(X, dtype=np.float64))
