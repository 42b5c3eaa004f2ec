"""Reward shaping from perception quality and interaction experience, plus the
online episode loop that ties perception, planning, acting and feedback
together.

Shaping adds alpha * entropy(observation row) - beta * mean experience to the
reward of every exploratory action; reporting rewards are never shaped.
Experience is recomputed at batch boundaries only, so shaping is baked into
the reward tensor at model-construction time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .data import Dataset, FeatureInstance, sample_instance
from .domain import AttributeId, BehaviorId, ConfigurationError, Query, ground_truth
from .perception import PerceptionBundle
from .pomdp import (
    ActionSpec,
    ManipState,
    ObservationSym,
    PomdpModel,
    construct_pomdp,
)
from .solver import Belief, Policy, belief_update, best_action, uniform_belief


def entropy_bits(row: Sequence[float] | np.ndarray) -> float:
    """Shannon entropy of an observation distribution in bits, with 0 log 0 = 0."""
    row = np.asarray(row, dtype=float)
    positive = row[row > 0.0]
    return float(-(positive * np.log2(positive)).sum())


@dataclass(frozen=True)
class ShapingParams:
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self) -> None:
        if not (np.isfinite(self.alpha) and np.isfinite(self.beta)):
            raise ConfigurationError("shaping parameters must be finite")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigurationError("shaping parameters must be non-negative")


class ExperienceLedger:
    """Monotone per-(attribute, behavior) counts of labeled instances gathered
    by performing that behavior; normalized to [0, 1) by ``delta``."""

    def __init__(self, delta: int = 100) -> None:
        if delta < 1:
            raise ConfigurationError("delta must be a positive integer")
        self.delta = int(delta)
        self.counts: dict[tuple[str, str], int] = {}

    def count(self, attribute: AttributeId, behavior: BehaviorId) -> int:
        return self.counts.get((attribute.name, behavior.name), 0)

    def increment(self, attribute: AttributeId, behavior: BehaviorId, amount: int = 1) -> None:
        if amount < 0:
            raise ConfigurationError("experience counts never decrease")
        key = (attribute.name, behavior.name)
        self.counts[key] = self.counts.get(key, 0) + amount

    def mean_ie(self, attributes: Sequence[AttributeId], behavior: BehaviorId) -> float:
        values = [interaction_experience(a, behavior, self) for a in attributes]
        return float(np.mean(values))

    def copy(self) -> "ExperienceLedger":
        twin = ExperienceLedger(self.delta)
        twin.counts = dict(self.counts)
        return twin


def interaction_experience(
    attribute: AttributeId, behavior: BehaviorId, ledger: ExperienceLedger
) -> float:
    """Normalized count, clamped so the value always stays below 1."""
    count = ledger.count(attribute, behavior)
    return min(count, ledger.delta - 1) / ledger.delta


def shaped_reward(
    real_reward: float, ent: float, ie_mean: float, params: ShapingParams
) -> float:
    return real_reward + params.alpha * ent - params.beta * ie_mean


def shaped_pomdp(
    query: Query,
    thetas,
    params: ShapingParams,
    ledger: ExperienceLedger,
    **kwargs,
) -> PomdpModel:
    """Construct the query's POMDP with the shaped reward baked in."""
    ie_mean = {}
    for (attr_name, behavior_name) in thetas:
        theta = thetas[(attr_name, behavior_name)]
        ie_mean[behavior_name] = ledger.mean_ie(list(query.attributes), theta.behavior)
    return construct_pomdp(
        query, thetas, shaping=(params.alpha, params.beta, ie_mean), **kwargs
    )


@dataclass
class EpisodeRecord:
    """One identification trial: the actions taken, the data collected, and
    whether the final report matched the ground truth."""

    query: Query
    actions: list[ActionSpec] = field(default_factory=list)
    collected: list[list[FeatureInstance]] = field(default_factory=list)
    observations: list[ObservationSym] = field(default_factory=list)
    report: tuple[bool, ...] | None = None
    correct: bool = False
    total_cost_seconds: float = 0.0
    aborted: bool = False


ActionSelector = Callable[[ManipState, np.ndarray, float, np.random.Generator], ActionSpec]


def run_episode(
    query: Query,
    policy: Policy | None,
    model: PomdpModel,
    perception: PerceptionBundle,
    dataset: Dataset,
    rng: np.random.Generator,
    max_steps: int = 100,
    action_selector: ActionSelector | None = None,
) -> EpisodeRecord:
    """Simulate one trial from the uniform belief at x0.

    Each step selects an action (policy argmax unless ``action_selector`` is
    given), samples the manipulation outcome, samples one behavior execution
    from the dataset, derives the observation by thresholding the fused
    classifier prediction per queried attribute, and applies the Bayes update.
    The episode ends at the report; exceeding ``max_steps`` aborts and flags
    the record.
    """
    record = EpisodeRecord(query)
    belief = uniform_belief(model)
    n_x = len(ManipState)
    for _ in range(max_steps):
        if action_selector is not None:
            action = action_selector(belief.manip, belief.hidden, record.total_cost_seconds, rng)
        else:
            action = best_action(policy, belief)
        record.actions.append(action)
        if action.is_report:
            record.report = action.target.bits
            record.correct = record.report == ground_truth(query, dataset.label_table)
            return record
        ai = model.action_index(action)
        x_next = ManipState(int(rng.choice(n_x, p=model.t_x[int(belief.manip), ai])))
        instances = sample_instance(dataset, query.object, action.behavior, rng)
        record.collected.append(instances)
        bits = perception.predict_bits(
            query.attributes, action.behavior, instances, dataset.contexts
        )
        observation = ObservationSym(bits)
        record.observations.append(observation)
        record.total_cost_seconds += action.cost_seconds
        belief = belief_update(belief, action, observation, x_next, model)
    record.aborted = True
    return record


def episode_feedback(
    record: EpisodeRecord,
    dataset: Dataset,
    ledger: ExperienceLedger,
    feedback_mode: str = "full",
) -> tuple[Dataset, ExperienceLedger]:
    """Attach ground-truth labels to the episode's collected data and update
    the experience counts.

    ``full`` grants labels after every trial. ``strict`` grants them always
    for single-attribute queries but only after correct reports for larger
    ones.
    """
    if feedback_mode not in ("full", "strict"):
        raise ConfigurationError(f"unknown feedback mode '{feedback_mode}'")
    if feedback_mode == "strict" and record.query.n >= 2 and not record.correct:
        return dataset, ledger
    truth = ground_truth(record.query, dataset.label_table)
    for instances in record.collected:
        behavior = instances[0].context.behavior
        for attribute, value in zip(record.query.attributes, truth):
            for inst in instances:
                dataset.add_label(inst, attribute, value)
            ledger.increment(attribute, behavior, len(instances))
    return dataset, ledger
