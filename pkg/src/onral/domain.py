"""Shared vocabulary: objects, attributes, behaviors, modalities, contexts, queries.

Everything here is immutable after construction and safe to share across
parallel workers. Names are interned to dense integer indices when a dataset
is loaded so that tensor code can be index-addressed throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence


class ConfigurationError(ValueError):
    """A configuration references names or values that do not line up."""


class DataError(ValueError):
    """Dataset contents violate a documented invariant."""


class ModelError(ValueError):
    """A decision model was built or queried inconsistently."""


#: Default exploratory-behavior alphabet.
BEHAVIOR_ALPHABET = (
    "look", "grasp", "lift", "hold", "shake",
    "drop", "push", "tap", "poke", "press",
)

#: Valid object splits.
SPLITS = ("pretrain", "train", "test")


@dataclass(frozen=True)
class AttributeId:
    """A binary object property the agent can be asked about (e.g. ``soft``)."""

    name: str
    index: int


@dataclass(frozen=True)
class BehaviorId:
    """An exploratory behavior from the behavior alphabet (e.g. ``press``)."""

    name: str
    index: int


@dataclass(frozen=True)
class ModalityId:
    """A sensory channel producing feature vectors (e.g. ``audio``)."""

    name: str
    index: int


@dataclass(frozen=True)
class Context:
    """A viable (behavior, modality) pair; the unit classifiers are trained at."""

    behavior: BehaviorId
    modality: ModalityId

    @property
    def key(self) -> tuple[str, str]:
        return (self.behavior.name, self.modality.name)


@dataclass(frozen=True)
class ModalityMap:
    """Coupling from each behavior to the modalities it produces signals in."""

    mapping: Mapping[BehaviorId, frozenset[ModalityId]]

    def __post_init__(self) -> None:
        for behavior, mods in self.mapping.items():
            if not mods:
                raise ConfigurationError(
                    f"behavior '{behavior.name}' maps to an empty modality set"
                )

    def modalities(self, behavior: BehaviorId) -> frozenset[ModalityId]:
        try:
            return self.mapping[behavior]
        except KeyError:
            raise ConfigurationError(
                f"no modality set configured for behavior '{behavior.name}'"
            ) from None

    def __contains__(self, behavior: BehaviorId) -> bool:
        return behavior in self.mapping


@dataclass(frozen=True)
class ObjectId:
    """A named object. ``split`` is bookkeeping only: equality and hashing go
    by name, so re-tagging an object's split does not disturb lookups."""

    name: str
    split: str = field(default="train", compare=False)

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            raise ConfigurationError(f"unknown split '{self.split}' for object '{self.name}'")

    def with_split(self, split: str) -> "ObjectId":
        return ObjectId(self.name, split)


@dataclass(frozen=True)
class Query:
    """An identification question: does each attribute hold for the object?

    Attribute order is preserved as given; every vector over the hidden states
    uses this order positionally (bit 0 = first attribute).
    """

    attributes: tuple[AttributeId, ...]
    object: ObjectId

    def __post_init__(self) -> None:
        if len(self.attributes) == 0:
            raise ConfigurationError("a query needs at least one attribute")
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise ConfigurationError(f"query attributes must be distinct, got {names}")

    @property
    def n(self) -> int:
        return len(self.attributes)


def build_context_set(
    behaviors: Sequence[BehaviorId], gamma: ModalityMap
) -> list[Context]:
    """Viable (behavior, modality) pairs, behavior-index major, modality-index minor.

    Raises ConfigurationError when a behavior has no entry in ``gamma``.
    """
    contexts: list[Context] = []
    for behavior in sorted(behaviors, key=lambda b: b.index):
        mods = gamma.modalities(behavior)
        for modality in sorted(mods, key=lambda m: m.index):
            contexts.append(Context(behavior, modality))
    return contexts


def ground_truth(
    query: Query, labels: Mapping[tuple[ObjectId, AttributeId], bool]
) -> tuple[bool, ...]:
    """True attribute values for the query, in query attribute order."""
    values = []
    for attribute in query.attributes:
        key = (query.object, attribute)
        if key not in labels:
            raise DataError(
                f"no ground-truth label for object '{query.object.name}' "
                f"and attribute '{attribute.name}'"
            )
        values.append(bool(labels[key]))
    return tuple(values)


def intern_names(names: Iterable[str], kind: type) -> list:
    """Map distinct names to ``kind(name, index)`` in first-appearance order."""
    seen: dict[str, int] = {}
    out = []
    for name in names:
        if name not in seen:
            seen[name] = len(seen)
            out.append(kind(name, seen[name]))
    return out
