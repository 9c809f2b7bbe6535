"""Estimator-style facade over training and dispatching.

``DispatchScheduler`` follows the fit/predict convention: ``fit`` trains
the dispatching policy on a list of instances, ``predict`` schedules an
instance with the trained (or a rule-based) policy. ``get_params`` and
``set_params`` use the usual keyword-round-trip contract, so the class
drops into pipelines and grid searches that expect that interface.
"""

from __future__ import annotations

import inspect

from cpshop.instances import Instance
from cpshop.model import Solution
from cpshop.net import NetPolicy, PolicyConfig, init_params
from cpshop.rules import RULES, RulePolicy, ensemble_solve, greedy_rollout
from cpshop.train import TrainConfig, train_loop


class DispatchScheduler:
    """Job-shop scheduler with a trainable dispatching policy.

    With ``rule`` set, ``predict`` uses that static priority rule and
    ``fit`` is a no-op; otherwise ``fit`` trains the policy network.
    """

    def __init__(
        self,
        rule: str | None = None,
        epochs: int = 30,
        actor_count: int = 8,
        ensemble_actors: int = 0,
        seed: int = 0,
    ):
        self.rule = rule
        self.epochs = epochs
        self.actor_count = actor_count
        self.ensemble_actors = ensemble_actors
        self.seed = seed

    # -- parameter protocol ---------------------------------------------

    @classmethod
    def _param_names(cls) -> list[str]:
        signature = inspect.signature(cls.__init__)
        return [name for name in signature.parameters if name != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params) -> "DispatchScheduler":
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ValueError(f"invalid parameter {name!r} for DispatchScheduler")
            setattr(self, name, value)
        return self

    # -- estimator interface --------------------------------------------

    def fit(self, instances: list[Instance], y=None) -> "DispatchScheduler":
        if self.rule is not None:
            if self.rule not in RULES:
                raise ValueError(f"unknown rule {self.rule!r}")
            return self
        config = TrainConfig(epochs=self.epochs, actor_count=self.actor_count, seed=self.seed)
        result = train_loop(instances, config)
        self.params_ = result.best_params
        self.net_config_ = PolicyConfig(next_ops=config.next_ops)
        self.metrics_ = result.metrics
        return self

    def _policy(self):
        if self.rule is not None:
            return RulePolicy(self.rule)
        if not hasattr(self, "params_"):
            # an unfitted network still defines a (seed-initialized) policy
            self.params_ = init_params(PolicyConfig(), seed=self.seed)
            self.net_config_ = PolicyConfig()
        return NetPolicy(self.params_, self.net_config_)

    def predict(self, instance: Instance) -> Solution:
        policy = self._policy()
        if self.ensemble_actors > 0:
            return ensemble_solve(
                instance, policy, actor_count=self.ensemble_actors, seed=self.seed
            ).solution
        return greedy_rollout(instance, policy)

    def score(self, instances: list[Instance], y=None) -> float:
        """Negative mean makespan, so larger is better."""
        if not instances:
            raise ValueError("score needs at least one instance")
        total = sum(self.predict(inst).makespan for inst in instances)
        return -total / len(instances)
