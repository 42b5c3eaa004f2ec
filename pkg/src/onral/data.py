"""Dataset handling: CSV loading, synthetic generation, splits, pretraining.

Interchange format (one directory, UTF-8, '.' decimal separator):

* ``features.csv`` — columns ``object, behavior, modality, trial, f0..f{d-1}``.
  Dimensionality is per context and inferred from the first row seen for that
  context; later rows of the same context must match it.
* ``labels.csv``   — columns ``object, attribute, value`` with value 0/1.
* ``gamma.csv``    — columns ``behavior, modality``, one row per viable pair.

A Dataset is append-only: the learning loop is the single writer (it appends
labels), readers hold immutable snapshots via :meth:`Dataset.copy`.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .domain import (
    AttributeId,
    BehaviorId,
    ConfigurationError,
    Context,
    DataError,
    ModalityId,
    ModalityMap,
    ObjectId,
    build_context_set,
    intern_names,
)

#: Modality coupling used by synthetic datasets unless overridden.
DEFAULT_GAMMA: dict[str, tuple[str, ...]] = {
    "look": ("vision",),
    "grasp": ("haptics", "audio"),
    "lift": ("haptics", "audio"),
    "hold": ("haptics", "audio"),
    "shake": ("audio", "haptics"),
    "drop": ("audio", "vision"),
    "push": ("haptics", "audio"),
    "tap": ("audio", "haptics"),
    "poke": ("haptics", "audio"),
    "press": ("haptics", "audio"),
}

#: Behaviors assigned as the informative channel for attribute 0, 1, 2, ...
#: when building banded synthetic configurations. Cheap, early-reachable
#: behaviors come first so small attribute sets stay learnable everywhere.
BAND_ORDER = ("tap", "poke", "push", "grasp", "look", "press", "shake", "hold", "lift", "drop")


@dataclass(frozen=True, eq=False)
class FeatureInstance:
    """One recorded feature vector: an execution of a behavior seen through
    one modality. ``trial`` indexes the repetition in the source data."""

    object: ObjectId
    context: Context
    trial: int
    features: np.ndarray

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.features)):
            raise DataError(
                f"non-finite features for object '{self.object.name}' in context "
                f"{self.context.key} trial {self.trial}"
            )


@dataclass(frozen=True, eq=False)
class LabeledExample:
    instance: FeatureInstance
    attribute: AttributeId
    label: bool


def _label_key(instance: FeatureInstance, attribute: AttributeId) -> tuple:
    return (
        instance.object.name,
        instance.context.key,
        instance.trial,
        attribute.name,
    )


class Dataset:
    """Feature corpus plus the (growing) labeled subset and ground truth.

    ``instances`` is the fixed world data; ``labels`` grows online as episodes
    receive feedback. At most one label exists per (instance, attribute).
    """

    def __init__(
        self,
        attributes: Sequence[AttributeId],
        behaviors: Sequence[BehaviorId],
        modalities: Sequence[ModalityId],
        gamma: ModalityMap,
        objects: Sequence[ObjectId],
        instances: Sequence[FeatureInstance],
        label_table: Mapping[tuple[ObjectId, AttributeId], bool],
    ) -> None:
        self.attributes = list(attributes)
        self.behaviors = list(behaviors)
        self.modalities = list(modalities)
        self.gamma = gamma
        self.contexts = build_context_set(self.behaviors, gamma)
        self.objects = list(objects)
        self.instances = list(instances)
        self.label_table = dict(label_table)
        self.labels: list[LabeledExample] = []

        self._trials: dict[tuple[str, str], dict[int, list[FeatureInstance]]] = {}
        self._context_dim: dict[tuple[str, str], int] = {}
        for inst in self.instances:
            self._index_instance(inst)
        self._label_keys: set[tuple] = set()
        # (attribute, context) -> parallel lists of features / labels / object names
        self._labeled_ctx: dict[tuple[str, tuple[str, str]], list[tuple[np.ndarray, bool, str, int]]] = {}
        # (attribute, behavior) -> {(object, trial) -> (label, {context key -> features})}
        self._labeled_exec: dict[tuple[str, str], dict[tuple[str, int], tuple[bool, dict]]] = {}

        self._check_coverage()

    # -- construction helpers -------------------------------------------------

    def _index_instance(self, inst: FeatureInstance) -> None:
        ckey = inst.context.key
        dim = self._context_dim.setdefault(ckey, inst.features.shape[0])
        if inst.features.shape[0] != dim:
            raise DataError(
                f"feature dimensionality {inst.features.shape[0]} for context {ckey} "
                f"(object '{inst.object.name}', trial {inst.trial}) does not match "
                f"the context's dimensionality {dim}"
            )
        bucket = self._trials.setdefault((inst.object.name, ckey[0]), {})
        bucket.setdefault(inst.trial, []).append(inst)

    def _check_coverage(self) -> None:
        for obj in self.objects:
            for attr in self.attributes:
                if (obj, attr) not in self.label_table:
                    raise DataError(
                        f"ground-truth table is missing object '{obj.name}' "
                        f"/ attribute '{attr.name}'"
                    )

    # -- online labeling ------------------------------------------------------

    def add_label(self, instance: FeatureInstance, attribute: AttributeId, label: bool) -> bool:
        """Append one labeled example; returns False when the (instance,
        attribute) pair is already labeled (labels never duplicate)."""
        key = _label_key(instance, attribute)
        if key in self._label_keys:
            return False
        self._label_keys.add(key)
        example = LabeledExample(instance, attribute, bool(label))
        self.labels.append(example)
        ckey = instance.context.key
        self._labeled_ctx.setdefault((attribute.name, ckey), []).append(
            (instance.features, bool(label), instance.object.name, instance.trial)
        )
        execs = self._labeled_exec.setdefault((attribute.name, ckey[0]), {})
        ekey = (instance.object.name, instance.trial)
        if ekey not in execs:
            execs[ekey] = (bool(label), {})
        execs[ekey][1][ckey] = instance.features
        return True

    # -- read access ----------------------------------------------------------

    def labeled_examples(
        self, attribute: AttributeId, context: Context
    ) -> tuple[np.ndarray, np.ndarray, list[str]]:
        """(features matrix, boolean labels, object names) for one (attribute,
        context) pair; empty arrays when nothing is labeled yet."""
        rows = self._labeled_ctx.get((attribute.name, context.key), [])
        if not rows:
            dim = self._context_dim.get(context.key, 0)
            return np.zeros((0, dim)), np.zeros(0, dtype=bool), []
        feats = np.stack([r[0] for r in rows])
        labels = np.array([r[1] for r in rows], dtype=bool)
        objects = [r[2] for r in rows]
        return feats, labels, objects

    def labeled_executions(
        self, attribute: AttributeId, behavior: BehaviorId
    ) -> list[tuple[str, int, bool, dict]]:
        """Labeled behavior executions as (object, trial, label, {context key
        -> features}), ordered deterministically."""
        execs = self._labeled_exec.get((attribute.name, behavior.name), {})
        out = []
        for (obj, trial) in sorted(execs):
            label, by_ctx = execs[(obj, trial)]
            out.append((obj, trial, label, by_ctx))
        return out

    def trials_for(self, obj: ObjectId, behavior: BehaviorId) -> list[int]:
        return sorted(self._trials.get((obj.name, behavior.name), {}))

    def instances_for(self, obj: ObjectId, behavior: BehaviorId, trial: int) -> list[FeatureInstance]:
        return list(self._trials[(obj.name, behavior.name)][trial])

    def attribute_by_name(self, name: str) -> AttributeId:
        for a in self.attributes:
            if a.name == name:
                return a
        raise ConfigurationError(f"unknown attribute '{name}'")

    def behavior_by_name(self, name: str) -> BehaviorId:
        for b in self.behaviors:
            if b.name == name:
                return b
        raise ConfigurationError(f"unknown behavior '{name}'")

    @property
    def n_labels(self) -> int:
        return len(self.labels)

    def copy(self) -> "Dataset":
        """Independent view sharing the immutable corpus; labels are forked."""
        twin = Dataset.__new__(Dataset)
        twin.attributes = self.attributes
        twin.behaviors = self.behaviors
        twin.modalities = self.modalities
        twin.gamma = self.gamma
        twin.contexts = self.contexts
        twin.objects = list(self.objects)
        twin.instances = self.instances
        twin.label_table = self.label_table
        twin.labels = list(self.labels)
        twin._trials = self._trials
        twin._context_dim = self._context_dim
        twin._label_keys = set(self._label_keys)
        twin._labeled_ctx = {k: list(v) for k, v in self._labeled_ctx.items()}
        twin._labeled_exec = {
            k: {ek: (lab, dict(ctxs)) for ek, (lab, ctxs) in v.items()}
            for k, v in self._labeled_exec.items()
        }
        return twin

    def fingerprint(self) -> str:
        """Digest of the labeled set; used to audit that evaluation never writes."""
        h = hashlib.sha256()
        for key in sorted(self._label_keys):
            h.update(repr(key).encode())
        return h.hexdigest()


# -- CSV loading --------------------------------------------------------------


def _read_rows(path: Path) -> list[list[str]]:
    if not path.exists():
        raise DataError(f"missing file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise DataError(f"{path} is empty (header row is mandatory)")
    return rows


def load_dataset(path: str | Path) -> Dataset:
    """Load a dataset directory (features.csv / labels.csv / gamma.csv)."""
    root = Path(path)

    gamma_rows = _read_rows(root / "gamma.csv")[1:]
    behavior_names = [r[0].strip() for r in gamma_rows]
    modality_names = [r[1].strip() for r in gamma_rows]
    behaviors = intern_names(behavior_names, BehaviorId)
    modalities = intern_names(modality_names, ModalityId)
    b_by_name = {b.name: b for b in behaviors}
    m_by_name = {m.name: m for m in modalities}
    pairs: dict[BehaviorId, set[ModalityId]] = {b: set() for b in behaviors}
    for r in gamma_rows:
        pairs[b_by_name[r[0].strip()]].add(m_by_name[r[1].strip()])
    gamma = ModalityMap({b: frozenset(ms) for b, ms in pairs.items()})

    label_rows = _read_rows(root / "labels.csv")[1:]
    attributes = intern_names((r[1].strip() for r in label_rows), AttributeId)
    a_by_name = {a.name: a for a in attributes}

    feat_rows = _read_rows(root / "features.csv")[1:]
    objects = intern_names((r[0].strip() for r in feat_rows), ObjectId)
    o_by_name = {o.name: o for o in objects}

    context_dim: dict[tuple[str, str], int] = {}
    instances = []
    for i, row in enumerate(feat_rows, start=2):  # 1-based, +1 for the header
        if len(row) < 5:
            raise DataError(f"features.csv row {i}: expected at least 5 columns")
        obj_name, b_name, m_name = row[0].strip(), row[1].strip(), row[2].strip()
        if b_name not in b_by_name:
            raise DataError(f"features.csv row {i}: unknown behavior '{b_name}'")
        if m_name not in m_by_name:
            raise DataError(f"features.csv row {i}: unknown modality '{m_name}'")
        behavior, modality = b_by_name[b_name], m_by_name[m_name]
        if modality not in gamma.modalities(behavior):
            raise DataError(
                f"features.csv row {i}: ({b_name}, {m_name}) is not a viable context"
            )
        try:
            trial = int(row[3])
            feats = np.array([float(v) for v in row[4:]], dtype=float)
        except ValueError as exc:
            raise DataError(f"features.csv row {i}: {exc}") from None
        if trial < 0:
            raise DataError(f"features.csv row {i}: negative trial index")
        ckey = (b_name, m_name)
        dim = context_dim.setdefault(ckey, feats.shape[0])
        if feats.shape[0] != dim:
            raise DataError(
                f"features.csv row {i}: {feats.shape[0]} feature values, but context "
                f"{ckey} has dimensionality {dim}"
            )
        if not np.all(np.isfinite(feats)):
            raise DataError(f"features.csv row {i}: non-finite feature value")
        instances.append(
            FeatureInstance(o_by_name[obj_name], Context(behavior, modality), trial, feats)
        )

    label_table: dict[tuple[ObjectId, AttributeId], bool] = {}
    for i, row in enumerate(label_rows, start=2):
        obj_name, attr_name, value = row[0].strip(), row[1].strip(), row[2].strip()
        if obj_name not in o_by_name:
            raise DataError(f"labels.csv row {i}: unknown object '{obj_name}'")
        if value not in ("0", "1"):
            raise DataError(f"labels.csv row {i}: label value must be 0 or 1, got '{value}'")
        label_table[(o_by_name[obj_name], a_by_name[attr_name])] = value == "1"

    return Dataset(attributes, behaviors, modalities, gamma, objects, instances, label_table)


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write a dataset directory in the interchange format (corpus + truth only)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "gamma.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["behavior", "modality"])
        for ctx in dataset.contexts:
            w.writerow([ctx.behavior.name, ctx.modality.name])
    max_dim = max((inst.features.shape[0] for inst in dataset.instances), default=0)
    with open(root / "features.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["object", "behavior", "modality", "trial"] + [f"f{i}" for i in range(max_dim)])
        for inst in dataset.instances:
            w.writerow(
                [inst.object.name, inst.context.behavior.name, inst.context.modality.name, inst.trial]
                + [repr(float(v)) for v in inst.features]
            )
    with open(root / "labels.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["object", "attribute", "value"])
        for obj in dataset.objects:
            for attr in dataset.attributes:
                w.writerow([obj.name, attr.name, int(dataset.label_table[(obj, attr)])])


# -- synthetic generation -----------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    """Controls the synthetic data generator.

    ``informativeness`` maps (behavior, modality, attribute) name triples to a
    separation level in [0, 1]; unlisted contexts fall back to
    ``default_informativeness``. Separation 0 means the two classes draw from
    identical distributions; 1 means well separated relative to the noise.
    """

    n_objects: int = 15
    n_attributes: int = 10
    trials_per_behavior: int = 5
    feature_dim: int = 6
    noise_scale: float = 1.0
    seed: int = 0
    default_informativeness: float = 0.0
    informativeness: Mapping[tuple[str, str, str], float] = field(default_factory=dict)
    gamma: Mapping[str, tuple[str, ...]] = field(default_factory=lambda: dict(DEFAULT_GAMMA))

    def __post_init__(self) -> None:
        if self.n_objects < 3:
            raise ConfigurationError("need at least 3 objects (one per split)")
        if self.n_attributes < 1 or self.trials_per_behavior < 1 or self.feature_dim < 1:
            raise ConfigurationError("attribute count, trials and feature_dim must be positive")
        if self.noise_scale <= 0:
            raise ConfigurationError("noise_scale must be positive")
        levels = list(self.informativeness.values()) + [self.default_informativeness]
        if any(not (0.0 <= s <= 1.0) for s in levels):
            raise ConfigurationError("informativeness levels must lie in [0, 1]")

    def sigma(self, behavior: str, modality: str, attribute: str) -> float:
        return self.informativeness.get((behavior, modality, attribute), self.default_informativeness)


def banded_informativeness(
    n_attributes: int,
    sigma: float,
    low: float = 0.0,
    gamma: Mapping[str, tuple[str, ...]] | None = None,
    band_order: Sequence[str] = BAND_ORDER,
) -> tuple[float, dict[tuple[str, str, str], float]]:
    """Assign each attribute one informative behavior (round-robin over
    ``band_order``); all that behavior's contexts get ``sigma``, the rest
    ``low``. Returns (default level, explicit map) for a SynthConfig."""
    gamma = dict(DEFAULT_GAMMA) if gamma is None else gamma
    table: dict[tuple[str, str, str], float] = {}
    for i in range(n_attributes):
        behavior = band_order[i % len(band_order)]
        for modality in gamma[behavior]:
            table[(behavior, modality, f"attr{i}")] = sigma
    return low, table


def synth_generate(config: SynthConfig) -> Dataset:
    """Deterministic synthetic dataset: class-conditional Gaussian features with
    per-(context, attribute) mean separation proportional to the configured
    separation level."""
    rng = np.random.default_rng(config.seed)

    attributes = [AttributeId(f"attr{i}", i) for i in range(config.n_attributes)]
    behavior_names = list(config.gamma)
    behaviors = intern_names(behavior_names, BehaviorId)
    modality_names: list[str] = []
    for b in behavior_names:
        modality_names.extend(config.gamma[b])
    modalities = intern_names(modality_names, ModalityId)
    m_by_name = {m.name: m for m in modalities}
    gamma = ModalityMap(
        {
            b: frozenset(m_by_name[m] for m in config.gamma[b.name])
            for b in behaviors
        }
    )
    objects = [ObjectId(f"obj{i:03d}") for i in range(config.n_objects)]

    # Balanced labels; the majority side (for odd counts) varies per attribute.
    label_table: dict[tuple[ObjectId, AttributeId], bool] = {}
    n = config.n_objects
    for attr in attributes:
        n_pos = n // 2 + (int(rng.integers(2)) if n % 2 else 0)
        perm = rng.permutation(n)
        positive = set(perm[:n_pos].tolist())
        for j, obj in enumerate(objects):
            label_table[(obj, attr)] = j in positive

    contexts = build_context_set(behaviors, gamma)
    d = config.feature_dim
    instances: list[FeatureInstance] = []
    for ctx in contexts:
        # One random unit direction per attribute; separation rides along it.
        directions = rng.normal(size=(config.n_attributes, d))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        sigmas = np.array(
            [config.sigma(ctx.behavior.name, ctx.modality.name, a.name) for a in attributes]
        )
        # Class means sit +/- 2*sigma*noise_scale along the direction, so the
        # separation at sigma=1 is four noise standard deviations.
        offsets = directions * (2.0 * config.noise_scale * sigmas)[:, None]
        for obj in objects:
            signs = np.array(
                [1.0 if label_table[(obj, a)] else -1.0 for a in attributes]
            )
            mean = signs @ offsets
            for trial in range(config.trials_per_behavior):
                feats = mean + config.noise_scale * rng.normal(size=d)
                instances.append(FeatureInstance(obj, ctx, trial, feats))

    return Dataset(attributes, behaviors, modalities, gamma, objects, instances, label_table)


# -- splits, pretraining, sampling ---------------------------------------------


def split_objects(
    dataset: Dataset, seed: int
) -> tuple[tuple[ObjectId, ...], tuple[ObjectId, ...], tuple[ObjectId, ...]]:
    """Random three-way object split (pretrain, train, test) with sizes
    differing by at most one. Re-tags the dataset's objects in place."""
    if len(dataset.objects) < 3:
        raise DataError("need at least 3 objects to split three ways")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset.objects))
    shuffled = [dataset.objects[i] for i in order]
    parts = np.array_split(np.arange(len(shuffled)), 3)
    tagged: dict[str, ObjectId] = {}
    out = []
    for split, idx in zip(("pretrain", "train", "test"), parts):
        group = tuple(shuffled[i].with_split(split) for i in idx)
        for obj in group:
            tagged[obj.name] = obj
        out.append(group)
    dataset.objects = [tagged[o.name] for o in dataset.objects]
    return out[0], out[1], out[2]


def pretrain(dataset: Dataset, objects: Sequence[ObjectId]) -> Dataset:
    """Seed the labeled set: each behavior applied once per pretraining object,
    with ground-truth labels attached for every attribute."""
    for obj in objects:
        for behavior in dataset.behaviors:
            trials = dataset.trials_for(obj, behavior)
            if not trials:
                raise DataError(
                    f"no trials for object '{obj.name}' / behavior '{behavior.name}'"
                )
            for inst in dataset.instances_for(obj, behavior, trials[0]):
                for attr in dataset.attributes:
                    dataset.add_label(inst, attr, dataset.label_table[(obj, attr)])
    return dataset


def sample_instance(
    dataset: Dataset, obj: ObjectId, behavior: BehaviorId, rng: np.random.Generator
) -> list[FeatureInstance]:
    """All modality instances from one uniformly drawn trial of the behavior
    (the modalities of one physical execution are co-sampled)."""
    trials = dataset.trials_for(obj, behavior)
    if not trials:
        raise DataError(f"no trials for object '{obj.name}' / behavior '{behavior.name}'")
    trial = trials[int(rng.integers(len(trials)))]
    return dataset.instances_for(obj, behavior, trial)
