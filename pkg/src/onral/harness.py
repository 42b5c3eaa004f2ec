"""Experiment driver: batch-based training, frozen-policy evaluation, learning
curves, per-attribute accuracy, parameter sweeps, and the CSV/plot outputs.

All randomness flows from the run seed. Query sequences are pre-drawn per
batch and shared by every agent, and each agent replays an identically seeded
execution stream, so two agents whose decisions coincide produce identical
episode logs.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .agents import DEFAULT_BUDGETS, AgentKind, AgentState, agent_run_trial
from .data import (
    Dataset,
    SynthConfig,
    banded_informativeness,
    load_dataset,
    pretrain,
    split_objects,
    synth_generate,
)
from .domain import AttributeId, ConfigurationError, ObjectId, Query, ground_truth
from .pomdp import ManipState, load_costs, load_transition_table
from .shaping import ShapingParams

logger = logging.getLogger("onral")


@dataclass(frozen=True)
class SolverSettings:
    precision: float = 1e-3
    max_iter: int = 500
    belief_points: int = 64


@dataclass(frozen=True)
class AgentSpec:
    kind: str
    name: str = ""
    alpha: float = 0.0
    beta: float = 0.0
    budgets: Mapping[int, float] = field(default_factory=lambda: dict(DEFAULT_BUDGETS))

    def to_agent_kind(self) -> AgentKind:
        return AgentKind(
            tag=self.kind,
            name=self.name or self.kind,
            params=ShapingParams(self.alpha, self.beta),
            budget_seconds=dict(self.budgets),
        )


@dataclass
class ExperimentConfig:
    """Everything a run needs; every field is overridable from the CLI."""

    dataset_path: str | None = None
    synth: SynthConfig | None = None
    n_query_attributes: int = 1
    max_query_attributes: int = 3
    batch_size: int | None = None  # default 40 for N=1, 50 for N=2
    n_batches: int = 10
    eval_trials: int = 1000
    agents: tuple[AgentSpec, ...] = (AgentSpec("itrs", alpha=1.0, beta=1.0),)
    alpha_grid: tuple[float, ...] = (0.0, 1.0, 2.0)
    beta_grid: tuple[float, ...] = (0.0, 1.0, 2.0)
    seed: int = 0
    solver: SolverSettings = field(default_factory=SolverSettings)
    costs_path: str | None = None
    transitions_path: str | None = None
    fail_prob: float = 0.05
    discount: float = 0.99
    feedback_mode: str = "full"
    folds: int = 5
    delta: int = 100
    look_informative: bool = True
    max_steps: int = 100

    def __post_init__(self) -> None:
        if self.dataset_path is None and self.synth is None:
            self.synth = SynthConfig()
        if not (1 <= self.n_query_attributes <= self.max_query_attributes):
            raise ConfigurationError(
                f"queries must carry between 1 and {self.max_query_attributes} attributes"
            )
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigurationError("batch size must be at least 1")
        if self.eval_trials < 1:
            raise ConfigurationError("eval trials must be at least 1")
        if self.n_batches < 0:
            raise ConfigurationError("batch count cannot be negative")
        if not self.agents:
            raise ConfigurationError("configure at least one agent")
        for spec in self.agents:
            if spec.kind == "random_legal" and self.n_query_attributes not in spec.budgets:
                raise ConfigurationError(
                    f"random_legal budget table lacks N={self.n_query_attributes}"
                )

    @property
    def effective_batch_size(self) -> int:
        if self.batch_size is not None:
            return self.batch_size
        return 40 if self.n_query_attributes == 1 else 50


@dataclass
class BatchMetrics:
    batch: int
    cum_cost_hours: float
    accuracy: float
    mean_episode_cost: float
    per_attribute: dict[str, float | None] = field(default_factory=dict)


@dataclass
class EvalResult:
    accuracy: float
    mean_cost: float
    per_attribute: dict[str, float | None]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    metrics: dict[str, list[BatchMetrics]]
    episodes: dict[str, list[dict]]
    agent_kinds: dict[str, str]


def _build_dataset(config: ExperimentConfig) -> Dataset:
    if config.dataset_path is not None:
        return load_dataset(config.dataset_path)
    return synth_generate(config.synth)


def _sample_query(
    rng: np.random.Generator,
    attributes: Sequence[AttributeId],
    objects: Sequence[ObjectId],
    n: int,
) -> Query:
    if n == 1:
        chosen = (attributes[int(rng.integers(len(attributes)))],)
    else:
        idx = sorted(rng.choice(len(attributes), size=n, replace=False).tolist())
        chosen = tuple(attributes[i] for i in idx)
    obj = objects[int(rng.integers(len(objects)))]
    return Query(chosen, obj)


def evaluate_policy(
    state: AgentState,
    test_objects: Sequence[ObjectId],
    trials: int,
    seed,
    n_query_attributes: int = 1,
) -> EvalResult:
    """Frozen-policy evaluation: accuracy and mean episode cost over seeded
    queries on the test objects. Never writes to the dataset or ledger
    (audited by fingerprint)."""
    if trials < 1:
        raise ConfigurationError("evaluation needs at least one trial")
    before = state.dataset.fingerprint()
    query_rng = np.random.default_rng([_seed_scalar(seed), 11])
    episode_rng = np.random.default_rng([_seed_scalar(seed), 13])
    attributes = state.dataset.attributes
    correct = 0
    total_cost = 0.0
    per_attr: dict[str, list[int]] = {}
    for _ in range(trials):
        query = _sample_query(query_rng, attributes, test_objects, n_query_attributes)
        record = agent_run_trial(state, query, episode_rng, learn=False)
        correct += int(record.correct)
        total_cost += record.total_cost_seconds
        truth = ground_truth(query, state.dataset.label_table)
        for i, attribute in enumerate(query.attributes):
            tally = per_attr.setdefault(attribute.name, [0, 0])
            tally[1] += 1
            if record.report is not None and record.report[i] == truth[i]:
                tally[0] += 1
    after = state.dataset.fingerprint()
    if before != after:
        raise RuntimeError("evaluation mutated the dataset; this is a bug")
    per_attribute: dict[str, float | None] = {
        a.name: (per_attr[a.name][0] / per_attr[a.name][1] if a.name in per_attr else None)
        for a in attributes
    }
    return EvalResult(correct / trials, total_cost / trials, per_attribute)


def _seed_scalar(seed) -> int:
    if isinstance(seed, (tuple, list)):
        return int(np.random.SeedSequence(list(seed)).generate_state(1)[0])
    return int(seed)


def run_experiment(config: ExperimentConfig, out_dir: str | Path | None = None) -> ExperimentResult:
    """Batch-based learning for every configured agent.

    Per batch: run the training trials (queries drawn uniformly over the
    attribute set and the train split), recompute perception/shaping/policies,
    then evaluate the frozen policy on the test split. The metrics list starts
    with the pretrained-policy evaluation point (batch 0).
    """
    dataset = _build_dataset(config)
    pre_objects, train_objects, test_objects = split_objects(dataset, config.seed)
    pretrain(dataset, pre_objects)
    logger.info(
        "dataset ready: %d objects, %d attributes, %d contexts, %d pretraining labels",
        len(dataset.objects), len(dataset.attributes), len(dataset.contexts), dataset.n_labels,
    )

    n = config.n_query_attributes
    batch_size = config.effective_batch_size
    costs = load_costs(config.costs_path) if config.costs_path else None
    table = (
        load_transition_table(config.transitions_path)
        if config.transitions_path
        else None
    )

    # Pre-draw the per-batch training query sequences once; every agent sees
    # the same queries, mirroring a shared human questioner.
    train_queries: list[list[Query]] = []
    for k in range(1, config.n_batches + 1):
        rng = np.random.default_rng([config.seed, 100, k])
        train_queries.append(
            [
                _sample_query(rng, dataset.attributes, train_objects, n)
                for _ in range(batch_size)
            ]
        )

    metrics: dict[str, list[BatchMetrics]] = {}
    episodes: dict[str, list[dict]] = {}
    agent_kinds: dict[str, str] = {}
    for spec in config.agents:
        kind = spec.to_agent_kind()
        if kind.name in metrics:
            raise ConfigurationError(f"duplicate agent name '{kind.name}'")
        agent_kinds[kind.name] = kind.tag
        state = AgentState(
            kind,
            dataset.copy(),
            delta=config.delta,
            folds=config.folds,
            costs=costs,
            gamma=config.discount,
            fail_prob=config.fail_prob,
            transition_table=table,
            look_informative=config.look_informative,
            feedback_mode=config.feedback_mode,
            solver_precision=config.solver.precision,
            solver_max_iter=config.solver.max_iter,
            solver_belief_points=config.solver.belief_points,
            max_steps=config.max_steps,
        )
        state.recompute()
        agent_metrics: list[BatchMetrics] = []
        agent_episodes: list[dict] = []
        cum_cost = 0.0

        ev = evaluate_policy(state, test_objects, config.eval_trials,
                             [config.seed, 200, 0], n)
        agent_metrics.append(
            BatchMetrics(0, 0.0, ev.accuracy, ev.mean_cost, ev.per_attribute)
        )
        logger.info("%s batch 0: accuracy %.3f", kind.name, ev.accuracy)

        for k in range(1, config.n_batches + 1):
            rng = np.random.default_rng([config.seed, 300, k])
            for t, query in enumerate(train_queries[k - 1]):
                record = agent_run_trial(state, query, rng, learn=True)
                cum_cost += record.total_cost_seconds
                agent_episodes.append(
                    {
                        "batch": k,
                        "trial": t,
                        "attributes": ";".join(a.name for a in query.attributes),
                        "object": query.object.name,
                        "actions": ";".join(a.name for a in record.actions),
                        "report": ""
                        if record.report is None
                        else "".join("1" if b else "0" for b in record.report),
                        "correct": int(record.correct),
                        "cost_seconds": record.total_cost_seconds,
                    }
                )
            state.recompute()
            if out_dir is not None:
                _dump_confusions(state, Path(out_dir), kind.name, k)
            ev = evaluate_policy(state, test_objects, config.eval_trials,
                                 [config.seed, 200, k], n)
            agent_metrics.append(
                BatchMetrics(k, cum_cost / 3600.0, ev.accuracy, ev.mean_cost, ev.per_attribute)
            )
            logger.info(
                "%s batch %d: accuracy %.3f, cum cost %.2f h",
                kind.name, k, ev.accuracy, cum_cost / 3600.0,
            )
        metrics[kind.name] = agent_metrics
        episodes[kind.name] = agent_episodes

    return ExperimentResult(config, metrics, episodes, agent_kinds)


def _dump_confusions(state: AgentState, out_dir: Path, agent: str, batch: int) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"confusions_{agent}_{batch}.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["attribute", "behavior", "tn", "fp", "fn", "tp"])
        for (attr, behavior), theta in sorted(state.bundle.thetas.items()):
            c = theta.cells
            w.writerow([attr, behavior, repr(c[0, 0]), repr(c[0, 1]), repr(c[1, 0]), repr(c[1, 1])])


def per_attribute_report(
    result: ExperimentResult, batch: int = -1
) -> list[tuple[str, dict[str, float | None]]]:
    """Accuracy per attribute per agent at one batch, rows sorted descending
    by the first itrs-kind agent's column (stable for ties); attributes never
    queried stay None."""
    reference = None
    for name, tag in result.agent_kinds.items():
        if tag == "itrs":
            reference = name
            break
    if reference is None:
        reference = next(iter(result.metrics))
    attr_names = list(next(iter(result.metrics.values()))[batch].per_attribute)
    rows = []
    for attr in attr_names:
        values = {name: result.metrics[name][batch].per_attribute.get(attr) for name in result.metrics}
        rows.append((attr, values))
    rows.sort(
        key=lambda row: -(row[1][reference] if row[1][reference] is not None else -np.inf)
    )
    return rows


@dataclass
class SweepCell:
    alpha: float
    beta: float
    accuracy_early: float | None = None
    accuracy_middle: float | None = None
    accuracy_late: float | None = None
    error: str | None = None


def sweep_params(config: ExperimentConfig) -> list[SweepCell]:
    """One full run per (alpha, beta) grid cell, recording accuracy at the
    first, middle and last trained batch. Failed cells are marked and the
    sweep continues."""
    if not config.alpha_grid or not config.beta_grid:
        raise ConfigurationError("sweep grids must be non-empty")
    cells = []
    for alpha in config.alpha_grid:
        for beta in config.beta_grid:
            cell = SweepCell(alpha, beta)
            try:
                run_config = replace(
                    config,
                    agents=(AgentSpec("itrs", name="itrs", alpha=alpha, beta=beta),),
                )
                result = run_experiment(run_config)
                series = result.metrics["itrs"]
                trained = series[1:] if len(series) > 1 else series
                cell.accuracy_early = trained[0].accuracy
                cell.accuracy_middle = trained[len(trained) // 2].accuracy
                cell.accuracy_late = trained[-1].accuracy
            except Exception as exc:  # noqa: BLE001 - cell isolation is the contract
                logger.warning("sweep cell (%s, %s) failed: %s", alpha, beta, exc)
                cell.error = str(exc)
            cells.append(cell)
    return cells


def emit_outputs(
    result: ExperimentResult,
    out_dir: str | Path,
    sweep: Sequence[SweepCell] | None = None,
) -> list[Path]:
    """Write learning_curve.csv, per_attribute.csv, sweep.csv, per-agent
    episode logs, and a learning-curve SVG. CSVs are byte-stable for a fixed
    seed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "learning_curve.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["agent", "batch", "cum_cost_hours", "accuracy"])
        for name, series in result.metrics.items():
            for m in series:
                w.writerow([name, m.batch, repr(m.cum_cost_hours), repr(m.accuracy)])
    written.append(path)

    path = out / "per_attribute.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        agents = list(result.metrics)
        w.writerow(["attribute"] + agents)
        if result.metrics:
            for attr, values in per_attribute_report(result):
                w.writerow(
                    [attr]
                    + ["" if values[a] is None else repr(values[a]) for a in agents]
                )
    written.append(path)

    path = out / "sweep.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "beta", "accuracy_early", "accuracy_middle", "accuracy_late", "error"])
        for cell in sweep or ():
            w.writerow(
                [
                    repr(cell.alpha),
                    repr(cell.beta),
                    "" if cell.accuracy_early is None else repr(cell.accuracy_early),
                    "" if cell.accuracy_middle is None else repr(cell.accuracy_middle),
                    "" if cell.accuracy_late is None else repr(cell.accuracy_late),
                    cell.error or "",
                ]
            )
    written.append(path)

    for name, rows in result.episodes.items():
        path = out / f"episodes_{name}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["batch", "trial", "attributes", "object", "actions", "report", "correct", "cost_seconds"]
            )
            for row in rows:
                w.writerow(
                    [
                        row["batch"], row["trial"], row["attributes"], row["object"],
                        row["actions"], row["report"], row["correct"], repr(row["cost_seconds"]),
                    ]
                )
        written.append(path)

    written.append(_plot_learning_curves(result, out))
    return written


def _plot_learning_curves(result: ExperimentResult, out: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for name, series in result.metrics.items():
        ax.plot(
            [m.cum_cost_hours for m in series],
            [m.accuracy for m in series],
            marker="o",
            label=name,
        )
    ax.set_xlabel("training exploration cost (hours)")
    ax.set_ylabel("identification accuracy")
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    ax.grid(True, alpha=0.3)
    path = out / "learning_curve.svg"
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
    return path


def make_banded_synth(
    n_objects: int,
    n_attributes: int,
    sigma: float,
    low: float = 0.0,
    seed: int = 0,
    **kwargs,
) -> SynthConfig:
    """SynthConfig where each attribute has one informative behavior at
    ``sigma`` and everything else sits at ``low``."""
    default, table = banded_informativeness(n_attributes, sigma, low)
    return SynthConfig(
        n_objects=n_objects,
        n_attributes=n_attributes,
        seed=seed,
        default_informativeness=default,
        informativeness=table,
        **kwargs,
    )
