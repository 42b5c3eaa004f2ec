"""Per-query decision models: a factored POMDP with a fully observable
manipulation component and a hidden attribute-value component.

Manipulation topology (overridable via a transition table):

    x0 --look--> x1 --grasp--> x2 --lift--> x3 --drop--> x4 --grasp--> x2
    x1, x4: push/tap/poke/press stay in place; x3: hold/shake stay in place.

State-advancing actions fail (stay put) with a configurable probability;
in-place actions are deterministic. Reporting actions assert a full value
assignment for the queried attributes and end the episode; they are legal
everywhere except x0, which forces at least one look.

Action order inside a model is reports first (hidden-state order), then
exploratory actions (behavior order). Tie-breaks on action index therefore
prefer answering over exploring when values are exactly equal.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .domain import BehaviorId, ConfigurationError, ModelError, Query
from .perception import ConfusionMatrix

REPORT_REWARD = 300.0

#: Exploratory action costs in seconds. look and press are data-anchored;
#: the rest are configuration defaults and can be overridden per run.
DEFAULT_COSTS: dict[str, float] = {
    "look": 0.5,
    "grasp": 10.0,
    "lift": 8.0,
    "hold": 5.0,
    "shake": 6.0,
    "drop": 3.0,
    "push": 6.0,
    "tap": 4.0,
    "poke": 4.0,
    "press": 22.0,
}


class ManipState(IntEnum):
    X0 = 0
    X1 = 1
    X2 = 2
    X3 = 3
    X4 = 4
    TERM = 5

    @classmethod
    def from_token(cls, token: str) -> "ManipState":
        table = {"x0": cls.X0, "x1": cls.X1, "x2": cls.X2, "x3": cls.X3,
                 "x4": cls.X4, "term": cls.TERM}
        if token not in table:
            raise ConfigurationError(f"unknown manipulation state '{token}'")
        return table[token]

    @property
    def token(self) -> str:
        return ("x0", "x1", "x2", "x3", "x4", "term")[int(self)]


#: behavior -> (from state, to state) for actions that advance the arm.
_ADVANCING: dict[str, tuple[tuple[ManipState, ManipState], ...]] = {
    "look": ((ManipState.X0, ManipState.X1),),
    "grasp": ((ManipState.X1, ManipState.X2), (ManipState.X4, ManipState.X2)),
    "lift": ((ManipState.X2, ManipState.X3),),
    "drop": ((ManipState.X3, ManipState.X4),),
}

#: behavior -> states where it is a deterministic self-loop.
_IN_PLACE: dict[str, tuple[ManipState, ...]] = {
    "push": (ManipState.X1, ManipState.X4),
    "tap": (ManipState.X1, ManipState.X4),
    "poke": (ManipState.X1, ManipState.X4),
    "press": (ManipState.X1, ManipState.X4),
    "hold": (ManipState.X3,),
    "shake": (ManipState.X3,),
}

TransitionTable = dict[tuple[ManipState, str], dict[ManipState, float]]


def default_transition_table(fail_prob: float = 0.05) -> TransitionTable:
    """The default manipulation graph with the given failure probability on
    state-advancing actions."""
    if not (0.0 <= fail_prob < 1.0):
        raise ConfigurationError("failure probability must lie in [0, 1)")
    table: TransitionTable = {}
    for behavior, edges in _ADVANCING.items():
        for src, dst in edges:
            table[(src, behavior)] = {dst: 1.0 - fail_prob, src: fail_prob}
    for behavior, states in _IN_PLACE.items():
        for src in states:
            table[(src, behavior)] = {src: 1.0}
    return table


def load_transition_table(path: str | Path) -> TransitionTable:
    """Read a transition override (columns from_x, action, to_x, prob)."""
    table: TransitionTable = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if i == 0 or not row:
                continue
            src = ManipState.from_token(row[0].strip())
            dst = ManipState.from_token(row[2].strip())
            prob = float(row[3])
            table.setdefault((src, row[1].strip()), {})[dst] = prob
    for (src, behavior), dist in table.items():
        total = sum(dist.values())
        if abs(total - 1.0) > 1e-9:
            raise ConfigurationError(
                f"transition row ({src.token}, {behavior}) sums to {total}, not 1"
            )
    return table


def load_costs(path: str | Path) -> dict[str, float]:
    """Read a cost override (columns action, cost_seconds)."""
    costs: dict[str, float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if i == 0 or not row:
                continue
            value = float(row[1])
            if value < 0:
                raise ConfigurationError(f"negative cost for action '{row[0]}'")
            costs[row[0].strip()] = value
    return costs


@dataclass(frozen=True)
class HiddenState:
    """One joint assignment of the queried attribute values, bit 0 first."""

    bits: tuple[bool, ...]

    @property
    def index(self) -> int:
        return sum(1 << i for i, bit in enumerate(self.bits) if bit)

    @classmethod
    def from_index(cls, index: int, n: int) -> "HiddenState":
        return cls(tuple(bool((index >> i) & 1) for i in range(n)))


@dataclass(frozen=True)
class ObservationSym:
    """Observed attribute values, or the null symbol for perception-free steps."""

    bits: tuple[bool, ...] | None

    @property
    def is_null(self) -> bool:
        return self.bits is None


@dataclass(frozen=True)
class ActionSpec:
    """Either an exploratory behavior (with its cost) or a report asserting a
    hidden state."""

    kind: str  # "explore" | "report"
    behavior: BehaviorId | None = None
    target: HiddenState | None = None
    cost_seconds: float = 0.0

    @classmethod
    def explore(cls, behavior: BehaviorId, cost_seconds: float) -> "ActionSpec":
        if cost_seconds < 0:
            raise ConfigurationError(f"negative cost for behavior '{behavior.name}'")
        return cls("explore", behavior=behavior, cost_seconds=cost_seconds)

    @classmethod
    def report(cls, target: HiddenState) -> "ActionSpec":
        return cls("report", target=target)

    @property
    def is_report(self) -> bool:
        return self.kind == "report"

    @property
    def name(self) -> str:
        if self.is_report:
            return "report_" + "".join("1" if b else "0" for b in self.target.bits)
        return self.behavior.name


def legal_actions(x: ManipState, table: TransitionTable | None = None) -> frozenset[str]:
    """Action kinds legal in ``x``: behavior names, plus "report" where
    reporting is allowed (everywhere except x0)."""
    if x == ManipState.TERM:
        raise ModelError("the terminal state has no legal actions")
    table = default_transition_table() if table is None else table
    names = {behavior for (src, behavior) in table if src == x}
    if x != ManipState.X0:
        names.add("report")
    return frozenset(names)


def build_transition(
    x: ManipState,
    action: ActionSpec,
    fail_prob: float = 0.05,
    table: TransitionTable | None = None,
) -> dict[ManipState, float]:
    """Distribution over the next manipulation state."""
    if action.is_report:
        if x in (ManipState.X0, ManipState.TERM):
            raise ModelError(f"reports are not legal in {x.token}")
        return {ManipState.TERM: 1.0}
    table = default_transition_table(fail_prob) if table is None else table
    key = (x, action.behavior.name)
    if key not in table:
        raise ModelError(
            f"behavior '{action.behavior.name}' is not legal in {x.token}"
        )
    return dict(table[key])


def build_observation(
    hidden: HiddenState,
    action: ActionSpec,
    thetas: Sequence[ConfusionMatrix],
    look_informative: bool = True,
) -> np.ndarray:
    """Observation distribution row over the 2^N value symbols plus null.

    For an exploratory action the probability of each symbol is the product of
    the per-attribute confusion entries; reports (and look when configured
    non-informative) emit the null symbol with probability 1.
    """
    n = len(hidden.bits)
    row = np.zeros(2**n + 1)
    if action.is_report or (
        not look_informative
        and action.behavior is not None
        and action.behavior.name == "look"
    ):
        row[-1] = 1.0
        return row
    if len(thetas) != n:
        raise ModelError(
            f"need one confusion matrix per queried attribute ({n}), got {len(thetas)}"
        )
    for z in range(2**n):
        prob = 1.0
        for i in range(n):
            observed = bool((z >> i) & 1)
            prob *= float(thetas[i].cells[int(hidden.bits[i]), int(observed)])
        row[z] = prob
    return row


def build_real_reward(x: ManipState, hidden: HiddenState, action: ActionSpec) -> float:
    """Identification reward: exploratory actions cost their duration, reports
    pay +/-REPORT_REWARD by correctness, and the terminal state pays nothing."""
    if x == ManipState.TERM:
        return 0.0
    if action.is_report:
        return REPORT_REWARD if action.target.bits == hidden.bits else -REPORT_REWARD
    return -action.cost_seconds


@dataclass
class PomdpModel:
    """Tensors for one query's POMDP, index-addressed throughout.

    t_x[x, a, x'] transitions the observable component (hidden bits never
    change); o[a, y, z] is the observation channel; r[x, y, a] the reward.
    Rows for illegal (x, a) pairs are self-loops so that every row is a valid
    distribution; the legality mask says which actions a policy may use.
    """

    query: Query
    behaviors: tuple[BehaviorId, ...]
    actions: tuple[ActionSpec, ...]
    hidden_states: tuple[HiddenState, ...]
    observations: tuple[ObservationSym, ...]
    t_x: np.ndarray
    o: np.ndarray
    r: np.ndarray
    legal: np.ndarray
    gamma: float
    fail_prob: float

    @property
    def n_hidden(self) -> int:
        return len(self.hidden_states)

    @property
    def n_reports(self) -> int:
        return self.n_hidden

    @property
    def state_count(self) -> int:
        # Factored count contract: manipulation values x hidden values, plus
        # the collapsed absorbing sink.
        return 6 * self.n_hidden + 1

    @property
    def report_indices(self) -> range:
        return range(self.n_hidden)

    @property
    def explore_indices(self) -> range:
        return range(self.n_hidden, len(self.actions))

    def action_index(self, action: ActionSpec) -> int:
        return self.actions.index(action)

    def observation_index(self, obs: ObservationSym) -> int:
        if obs.is_null:
            return len(self.observations) - 1
        return sum(1 << i for i, bit in enumerate(obs.bits) if bit)

    def legal_indices(self, x: ManipState) -> list[int]:
        return [i for i in range(len(self.actions)) if self.legal[int(x), i]]

    def validate(self) -> None:
        if not np.allclose(self.t_x.sum(axis=2), 1.0, atol=1e-9):
            raise ModelError("transition rows must sum to 1")
        if not np.allclose(self.o.sum(axis=2), 1.0, atol=1e-9):
            raise ModelError("observation rows must sum to 1")
        term = int(ManipState.TERM)
        if not np.allclose(self.t_x[term, :, term], 1.0):
            raise ModelError("the terminal state must be absorbing")
        if np.any(self.r[term] != 0.0):
            raise ModelError("the terminal state must be reward-free")


def construct_pomdp(
    query: Query,
    thetas: Mapping[tuple[str, str], ConfusionMatrix],
    costs: Mapping[str, float] | None = None,
    shaping: tuple[float, float, Mapping[str, float]] | None = None,
    gamma: float = 0.99,
    fail_prob: float = 0.05,
    transition_table: TransitionTable | None = None,
    look_informative: bool = True,
) -> PomdpModel:
    """Assemble the minimal POMDP for one query.

    ``thetas`` maps (attribute name, behavior name) to a confusion matrix and
    must cover every queried attribute for every behavior in the transition
    table. ``shaping``, when given, is (alpha, beta, mean interaction
    experience per behavior name) and shifts exploratory rewards by
    alpha * observation entropy - beta * experience; reports are never shaped.
    """
    if not (0.0 < gamma < 1.0):
        raise ConfigurationError("discount must lie in (0, 1)")
    costs = dict(DEFAULT_COSTS) if costs is None else dict(costs)
    table = default_transition_table(fail_prob) if transition_table is None else transition_table

    n = query.n
    n_hidden = 2**n
    hidden_states = tuple(HiddenState.from_index(i, n) for i in range(n_hidden))
    observations = tuple(
        ObservationSym(HiddenState.from_index(i, n).bits) for i in range(n_hidden)
    ) + (ObservationSym(None),)

    behavior_names = sorted({b for (_, b) in table})
    behaviors = []
    for name in behavior_names:
        matched = [
            theta.behavior
            for theta in thetas.values()
            if theta.behavior.name == name
        ]
        if not matched:
            raise ModelError(f"no confusion matrices supplied for behavior '{name}'")
        behaviors.append(matched[0])
    behaviors = tuple(sorted(behaviors, key=lambda b: b.index))

    actions: list[ActionSpec] = [ActionSpec.report(h) for h in hidden_states]
    for behavior in behaviors:
        if behavior.name not in costs:
            raise ConfigurationError(f"no cost configured for behavior '{behavior.name}'")
        actions.append(ActionSpec.explore(behavior, costs[behavior.name]))
    action_tuple = tuple(actions)

    query_thetas: dict[str, list[ConfusionMatrix]] = {}
    for behavior in behaviors:
        per_attr = []
        for attribute in query.attributes:
            key = (attribute.name, behavior.name)
            if key not in thetas:
                raise ModelError(
                    f"missing confusion matrix for attribute '{attribute.name}' "
                    f"and behavior '{behavior.name}'"
                )
            per_attr.append(thetas[key])
        query_thetas[behavior.name] = per_attr

    n_x = len(ManipState)
    n_a = len(action_tuple)
    n_z = n_hidden + 1
    t_x = np.zeros((n_x, n_a, n_x))
    o = np.zeros((n_a, n_hidden, n_z))
    r = np.zeros((n_x, n_hidden, n_a))
    legal = np.zeros((n_x, n_a), dtype=bool)

    for ai, action in enumerate(action_tuple):
        for y, hidden in enumerate(hidden_states):
            o[ai, y] = build_observation(
                hidden,
                action,
                query_thetas.get(action.behavior.name, []) if not action.is_report else (),
                look_informative,
            )
        for x in ManipState:
            if x == ManipState.TERM:
                t_x[int(x), ai, int(ManipState.TERM)] = 1.0
                continue
            if action.is_report:
                if x != ManipState.X0:
                    legal[int(x), ai] = True
                    t_x[int(x), ai, int(ManipState.TERM)] = 1.0
                else:
                    t_x[int(x), ai, int(x)] = 1.0
            else:
                key = (x, action.behavior.name)
                if key in table:
                    legal[int(x), ai] = True
                    for dst, prob in table[key].items():
                        t_x[int(x), ai, int(dst)] = prob
                else:
                    t_x[int(x), ai, int(x)] = 1.0
            for y, hidden in enumerate(hidden_states):
                r[int(x), y, ai] = build_real_reward(x, hidden, action)

    if shaping is not None:
        alpha, beta, ie_mean = shaping
        if alpha != 0.0 or beta != 0.0:
            for ai in range(n_hidden, n_a):
                behavior = action_tuple[ai].behavior
                penalty = beta * float(ie_mean.get(behavior.name, 0.0))
                for y in range(n_hidden):
                    row = o[ai, y]
                    positive = row[row > 0.0]
                    ent = float(-(positive * np.log2(positive)).sum())
                    bonus = alpha * ent - penalty
                    for x in ManipState:
                        if x != ManipState.TERM:
                            r[int(x), y, ai] += bonus

    model = PomdpModel(
        query=query,
        behaviors=behaviors,
        actions=action_tuple,
        hidden_states=hidden_states,
        observations=observations,
        t_x=t_x,
        o=o,
        r=r,
        legal=legal,
        gamma=gamma,
        fail_prob=fail_prob,
    )
    model.validate()
    return model
