"""The three exploration strategies compared by the harness.

* ``itrs``              — shaped-reward POMDP, re-solved per batch.
* ``repeated_assembly`` — unshaped POMDP, re-solved per batch.
* ``random_legal``      — uniformly random legal exploration under a time
                          budget, then a forced argmax-belief report.

All strategies share the same sampling, perception, belief and feedback
machinery, so differences in outcomes isolate the exploration strategy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .data import Dataset
from .domain import ConfigurationError, ModelError, Query
from .perception import PerceptionBundle, build_perception_bundle
from .pomdp import ActionSpec, ManipState, PomdpModel, construct_pomdp
from .shaping import (
    EpisodeRecord,
    ExperienceLedger,
    ShapingParams,
    episode_feedback,
    run_episode,
    shaped_pomdp,
)
from .solver import Policy, solve

AGENT_KINDS = ("itrs", "random_legal", "repeated_assembly")

#: Exploration budget in cost-seconds per query size, for random_legal.
DEFAULT_BUDGETS = {1: 50.0, 2: 80.0}


@dataclass(frozen=True)
class AgentKind:
    """Strategy selector plus its strategy-specific parameters."""

    tag: str
    name: str = ""
    params: ShapingParams = field(default_factory=ShapingParams)
    budget_seconds: Mapping[int, float] = field(default_factory=lambda: dict(DEFAULT_BUDGETS))

    def __post_init__(self) -> None:
        if self.tag not in AGENT_KINDS:
            raise ConfigurationError(f"unknown agent kind '{self.tag}'")
        if not self.name:
            object.__setattr__(self, "name", self.tag)

    def budget(self, n: int) -> float:
        if n not in self.budget_seconds:
            raise ConfigurationError(f"no exploration budget configured for N={n}")
        return float(self.budget_seconds[n])


def random_legal_step(
    x: ManipState,
    elapsed: float,
    budget: float,
    hidden_belief: np.ndarray,
    model: PomdpModel,
    rng: np.random.Generator,
) -> ActionSpec:
    """Uniformly random legal exploratory action while the budget lasts; once
    it is spent (and a report is legal) report the highest-belief state,
    breaking ties toward the lowest hidden-state index."""
    if x == ManipState.TERM:
        raise ModelError("no actions are legal in the terminal state")
    reports_legal = any(model.legal[int(x), ai] for ai in model.report_indices)
    if elapsed >= budget and reports_legal:
        target = int(np.argmax(hidden_belief))  # first max -> lowest index
        return model.actions[target]
    explore = [ai for ai in model.explore_indices if model.legal[int(x), ai]]
    return model.actions[explore[int(rng.integers(len(explore)))]]


def repeated_assembly_rebuild(
    dataset: Dataset,
    query: Query,
    costs: Mapping[str, float] | None = None,
    gamma: float = 0.99,
    folds: int = 5,
    solver_kwargs: Mapping | None = None,
    **model_kwargs,
) -> tuple[dict, PomdpModel, Policy]:
    """Recompute perception from the current dataset, assemble the unshaped
    POMDP for the query, and solve it."""
    bundle = build_perception_bundle(dataset, list(query.attributes), folds=folds)
    thetas = {
        key: theta
        for key, theta in bundle.thetas.items()
        if key[0] in {a.name for a in query.attributes}
    }
    model = construct_pomdp(query, thetas, costs=costs, gamma=gamma, **model_kwargs)
    policy = solve(model, **(dict(solver_kwargs) if solver_kwargs else {}))
    return thetas, model, policy


class AgentState:
    """Per-agent mutable state: its own dataset fork, experience ledger, and
    the per-batch perception bundle and policy cache."""

    def __init__(
        self,
        kind: AgentKind,
        dataset: Dataset,
        delta: int = 100,
        folds: int = 5,
        costs: Mapping[str, float] | None = None,
        gamma: float = 0.99,
        fail_prob: float = 0.05,
        transition_table=None,
        look_informative: bool = True,
        feedback_mode: str = "full",
        solver_precision: float = 1e-3,
        solver_max_iter: int = 500,
        solver_belief_points: int = 64,
        max_steps: int = 100,
    ) -> None:
        self.kind = kind
        self.dataset = dataset
        self.ledger = ExperienceLedger(delta)
        self.folds = folds
        self.costs = costs
        self.gamma = gamma
        self.fail_prob = fail_prob
        self.transition_table = transition_table
        self.look_informative = look_informative
        self.feedback_mode = feedback_mode
        self.solver_precision = solver_precision
        self.solver_max_iter = solver_max_iter
        self.solver_belief_points = solver_belief_points
        self.max_steps = max_steps
        self.bundle: PerceptionBundle | None = None
        self._models: dict[tuple[str, ...], tuple[PomdpModel, Policy | None]] = {}

    def recompute(self) -> None:
        """Batch boundary: refresh perception and drop cached policies."""
        self.bundle = build_perception_bundle(self.dataset, folds=self.folds)
        self._models.clear()

    def _model_for(self, query: Query) -> tuple[PomdpModel, Policy | None]:
        key = tuple(a.name for a in query.attributes)
        if key in self._models:
            return self._models[key]
        if self.bundle is None:
            self.recompute()
        thetas = {
            (a.name, b.name): self.bundle.theta(a, b)
            for a in query.attributes
            for b in self.dataset.behaviors
        }
        kwargs = dict(
            costs=self.costs,
            gamma=self.gamma,
            fail_prob=self.fail_prob,
            transition_table=self.transition_table,
            look_informative=self.look_informative,
        )
        if self.kind.tag == "itrs":
            model = shaped_pomdp(query, thetas, self.kind.params, self.ledger, **kwargs)
        else:
            model = construct_pomdp(query, thetas, **kwargs)
        if self.kind.tag == "random_legal":
            policy = None  # action choice never consults a policy
        else:
            policy = solve(
                model,
                precision=self.solver_precision,
                max_iter=self.solver_max_iter,
                belief_points=self.solver_belief_points,
            )
        self._models[key] = (model, policy)
        return model, policy

    def run_trial(
        self, query: Query, rng: np.random.Generator, learn: bool
    ) -> EpisodeRecord:
        model, policy = self._model_for(query)
        selector = None
        if self.kind.tag == "random_legal":
            budget = self.kind.budget(query.n)

            def selector(x, hidden, elapsed, step_rng):
                return random_legal_step(x, elapsed, budget, hidden, model, step_rng)

        record = run_episode(
            query,
            policy,
            model,
            self.bundle,
            self.dataset,
            rng,
            max_steps=self.max_steps,
            action_selector=selector,
        )
        if learn:
            episode_feedback(record, self.dataset, self.ledger, self.feedback_mode)
        return record


def agent_run_trial(
    state: AgentState, query: Query, rng: np.random.Generator, learn: bool = True
) -> EpisodeRecord:
    """Run one trial with the agent's strategy; identical record schema for
    every strategy."""
    return state.run_trial(query, rng, learn)
