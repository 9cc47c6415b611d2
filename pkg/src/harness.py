# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Leave-one-subject-out protocol: folds, batching, Adam, model selection and aggregation."""

import hashlib
import itertools
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from data import Domain, DomainData, prepare_domain, split_source_domains
from dg_methods import DGConfig, DGMethod, DomainBatch, MultiDomainBatch, representation_alignment
from exceptions import (
    ConfigurationError,
    ContractError,
    DGForgeError,
    DimensionError,
    ReportError,
    TrainingError,
)
from models import CLASS_COUNT, Model, ModelSpec, Parameters, build_model, model_inputs
from tensor_core import Tensor, backward, no_grad

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:  # pylint: disable=too-many-instance-attributes
    """Optimizer and schedule.

    Attrs:
        learning_rate: Adam step size.
        batch_size: rows per minibatch B.
        epochs: passes over the training domains.
        weight_decay: decoupled decay on weight tensors.
        beta1: first moment decay.
        beta2: second moment decay.
        eps: denominator offset.
        seed: master seed.
        representation: "pooled" or "flat" model input.
    """

    learning_rate: float = 1e-2
    batch_size: int = 32
    epochs: int = 50
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    representation: str = "pooled"

    def __post_init__(self):
        """Validate the settings.

        Raises:
            ConfigurationError: on a value out of range.
        """
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigurationError("batch_size and epochs must be at least 1")
        if self.weight_decay < 0 or self.eps <= 0:
            raise ConfigurationError("weight_decay must be nonnegative and eps positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError("Adam betas must lie in [0, 1)")
        if self.representation not in ("pooled", "flat"):
            raise ConfigurationError(f"unknown representation {self.representation!r}")


@dataclass(frozen=True)
class Fold:
    """One LOSO rotation.

    Attrs:
        index: fold number, 0-based.
        target: held-out subject.
        sources: every other subject, in input order.
    """

    index: int
    target: Domain
    sources: Tuple[Domain, ...]


@dataclass
class FoldResult:  # pylint: disable=too-many-instance-attributes
    """Outcome of one fold.

    Attrs:
        fold: fold index.
        target_subject: held-out subject id.
        baseline: baseline id.
        method: method id.
        seed: master seed.
        status: "ok" or "failed".
        error: failure message.
        best_epoch: 1-based epoch of the selected snapshot.
        best_val_accuracy: validation accuracy of the selected snapshot.
        final_val_accuracy: validation accuracy after the last epoch.
        target_accuracy: accuracy of the selected snapshot on the target subject.
        train_loss: mean training loss per epoch.
        train_accuracy: training accuracy per epoch.
        val_accuracy: validation accuracy per epoch.
        train_subjects: training subject ids.
        val_subjects: validation subject ids.
        alignment: pairwise representation statistics of the training subjects at the snapshot.
        final_alignment: the same statistics after the last epoch.
    """

    fold: int
    target_subject: int
    baseline: str
    method: str
    seed: int
    status: str = "ok"
    error: Optional[str] = None
    best_epoch: int = 0
    best_val_accuracy: float = 0.0
    final_val_accuracy: float = 0.0
    target_accuracy: float = 0.0
    train_loss: List[float] = field(default_factory=list)
    train_accuracy: List[float] = field(default_factory=list)
    val_accuracy: List[float] = field(default_factory=list)
    train_subjects: List[int] = field(default_factory=list)
    val_subjects: List[int] = field(default_factory=list)
    alignment: Optional[Dict[str, float]] = None
    final_alignment: Optional[Dict[str, float]] = None

    def to_dict(self) -> dict:
        """JSON-ready record.

        Returns:
            The fields as plain values.
        """
        return asdict(self)

    @classmethod
    def from_dict(cls, record: dict) -> "FoldResult":
        """Rebuild a result from its JSON record.

        Args:
            record: output of to_dict.

        Returns:
            The result.
        """
        return cls(**record)


def loso_folds(domains: Sequence[Domain]) -> List[Fold]:
    """Rotate every subject into the target role once.

    Args:
        domains: all subjects, at least 3.

    Returns:
        One fold per subject, fold i targeting domains[i].

    Raises:
        ContractError: on fewer than 3 subjects or a repeated subject id.
    """
    if len(domains) < 3:
        raise ContractError(f"LOSO needs at least 3 subjects, got {len(domains)}")
    subjects = [d.subject for d in domains]
    if len(set(subjects)) != len(subjects):
        raise ContractError(f"subject ids repeat: {subjects}")
    return [
        Fold(i, target, tuple(d for j, d in enumerate(domains) if j != i))
        for i, target in enumerate(domains)
    ]


def make_batches(
    domains: Sequence[DomainData], batch_size: int, rng: np.random.Generator
) -> Iterator[MultiDomainBatch]:
    """One epoch of domain-stratified minibatches.

    Every batch takes ⌊B/M⌋ rows per domain and one extra row from a rotating
    subset of B mod M domains, until every row was visited once. Domains that
    run out simply contribute nothing further.

    Args:
        domains: training domains; batch domain index is the position here.
        batch_size: rows per batch B.
        rng: shuffling generator.

    Yields:
        Minibatches, the last one possibly partial.

    Raises:
        ConfigurationError: if B is smaller than the number of domains.
    """
    count = len(domains)
    if batch_size < count:
        raise ConfigurationError(
            f"batch size {batch_size} cannot hold one row of each of {count} domains"
        )
    orders = [rng.permutation(len(d.labels)) for d in domains]
    onehot = np.eye(CLASS_COUNT)
    base, extra = divmod(batch_size, count)
    cursors = [0] * count
    for number in itertools.count():
        if all(c >= len(o) for c, o in zip(cursors, orders)):
            return
        bonus = {(number * extra + j) % count for j in range(extra)}
        parts = []
        for index, domain in enumerate(domains):
            take = base + (1 if index in bonus else 0)
            rows = orders[index][cursors[index] : cursors[index] + take]
            cursors[index] += take
            if len(rows):
                parts.append(
                    DomainBatch(domain.features[rows], onehot[domain.labels[rows]], index)
                )
        yield MultiDomainBatch(tuple(parts))


@dataclass
class AdamState:
    """Moment estimates by parameter name.

    Attrs:
        step: updates applied so far.
        first: first moments.
        second: second moments.
    """

    step: int = 0
    first: Dict[str, np.ndarray] = field(default_factory=dict)
    second: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Parameters, grads: Sequence[np.ndarray], state: AdamState, cfg: TrainConfig
) -> AdamState:
    """Apply one Adam update in place, with decoupled weight decay on ".weight" tensors.

    Args:
        params: named parameters.
        grads: gradient of every parameter, in the same order.
        state: moments from previous steps.
        cfg: optimizer settings.

    Returns:
        The advanced state.

    Raises:
        TrainingError: on a non-finite gradient.
        DimensionError: if a gradient or moment shape differs from its parameter.
    """
    step = state.step + 1
    for (name, tensor), gradient in zip(params, grads):
        if not np.all(np.isfinite(gradient)):
            raise TrainingError(name, step)
        if gradient.shape != tensor.shape:
            raise DimensionError(f"{name}: gradient {gradient.shape} vs parameter {tensor.shape}")
    for (name, tensor), gradient in zip(params, grads):
        first = state.first.get(name, np.zeros_like(tensor.data))
        second = state.second.get(name, np.zeros_like(tensor.data))
        if first.shape != tensor.shape:
            raise DimensionError(f"{name}: optimizer state {first.shape} vs {tensor.shape}")
        first = cfg.beta1 * first + (1 - cfg.beta1) * gradient
        second = cfg.beta2 * second + (1 - cfg.beta2) * gradient * gradient
        state.first[name], state.second[name] = first, second
        first_hat = first / (1 - cfg.beta1**step)
        second_hat = second / (1 - cfg.beta2**step)
        update = cfg.learning_rate * first_hat / (np.sqrt(second_hat) + cfg.eps)
        if name.endswith(".weight") and cfg.weight_decay:
            update = update + cfg.learning_rate * cfg.weight_decay * tensor.data
        tensor.data -= update
    state.step = step
    return state


def _correct(model: Model, data: DomainData) -> int:
    """Count rows whose argmax logit matches the label.

    Args:
        model: network.
        data: rows already in model input space.

    Returns:
        Number of correct predictions; argmax ties go to the lowest class.
    """
    with no_grad():
        _, logits = model.forward(Tensor(data.features))
    return int(np.sum(np.argmax(logits.data, axis=1) == data.labels))


def evaluate(model: Model, domain: DomainData) -> float:
    """Classification accuracy on a domain.

    Args:
        model: network.
        domain: rows in model input space.

    Returns:
        Fraction of correct predictions.

    Raises:
        ContractError: on an empty domain.
    """
    if len(domain.labels) == 0:
        raise ContractError(f"cannot evaluate on empty domain {domain.subject}")
    return _correct(model, domain) / len(domain.labels)


def pooled_accuracy(model: Model, domains: Sequence[DomainData]) -> float:
    """Accuracy over the rows of several domains taken together.

    Args:
        model: network.
        domains: rows in model input space.

    Returns:
        Correct predictions over total rows.
    """
    total = sum(len(d.labels) for d in domains)
    if total == 0:
        raise ContractError("cannot evaluate on empty domains")
    return sum(_correct(model, d) for d in domains) / total


def fold_seed(master_seed: int, fold_index: int) -> int:
    """Seed of a fold's generators.

    Args:
        master_seed: run seed.
        fold_index: fold number.

    Returns:
        master_seed XOR fold_index.
    """
    return master_seed ^ fold_index


def _scaled(model: Model, data: DomainData) -> DomainData:
    """Map a domain to the model input space.

    Args:
        model: network.
        data: raw domain matrices.

    Returns:
        The domain with scaled features.
    """
    return replace(data, features=model_inputs(model, data.features))


def _check_leakage(fold: Fold, train: Sequence[Domain], val: Sequence[Domain]) -> None:
    """Assert the target never takes part in training or validation.

    Args:
        fold: the fold.
        train: training domains.
        val: validation domains.

    Raises:
        ContractError: if a target subject or sample identity is in train or val.
    """
    seen = {identity for domain in [*train, *val] for identity in domain.identities}
    subjects = {domain.subject for domain in [*train, *val]}
    if fold.target.subject in subjects or seen & set(fold.target.identities):
        raise ContractError(f"fold {fold.index}: target subject {fold.target.subject} leaked")
    if {d.subject for d in train} & {d.subject for d in val}:
        raise ContractError(f"fold {fold.index}: train and validation subjects overlap")


@dataclass
class SnapshotSelector:
    """Keep the parameters of the epoch with the highest validation accuracy.

    Attrs:
        best_epoch: 1-based epoch of the kept snapshot, 0 before the first offer.
        best_accuracy: validation accuracy of the kept snapshot.
        state: the kept parameter values.
    """

    best_epoch: int = 0
    best_accuracy: float = -math.inf
    state: Optional[Dict[str, np.ndarray]] = None

    def offer(self, epoch: int, accuracy: float, model: Model) -> bool:
        """Consider the model after an epoch; ties keep the earlier snapshot.

        Args:
            epoch: 1-based epoch number.
            accuracy: validation accuracy after the epoch.
            model: network whose parameters are copied when kept.

        Returns:
            Whether the snapshot was replaced.
        """
        if accuracy <= self.best_accuracy:
            return False
        self.best_epoch, self.best_accuracy = epoch, accuracy
        self.state = model.state_dict()
        return True


def fit_fold(
    fold: Fold, method: DGConfig, train: TrainConfig, spec: ModelSpec
) -> Tuple[FoldResult, Model]:
    """Train on the fold's sources and evaluate the selected snapshot on its target.

    Args:
        fold: the fold.
        method: training strategy.
        train: optimizer settings.
        spec: baseline.

    Returns:
        (result, model holding the selected snapshot).
    """
    seed = fold_seed(train.seed, fold.index)
    rng = np.random.default_rng(seed)
    train_domains, val_domains = split_source_domains(fold.sources, seed)
    _check_leakage(fold, train_domains, val_domains)
    result = FoldResult(
        fold=fold.index,
        target_subject=fold.target.subject,
        baseline=spec.name,
        method=method.method.value,
        seed=train.seed,
        train_subjects=[d.subject for d in train_domains],
        val_subjects=[d.subject for d in val_domains],
    )
    logger.info(
        "Fold %s: target %s, %s train / %s val subjects, %s + %s",
        fold.index,
        fold.target.subject,
        len(train_domains),
        len(val_domains),
        spec.label,
        method.label,
    )
    raw = [prepare_domain(d, train.representation) for d in train_domains]
    model = build_model(spec, np.concatenate([d.features for d in raw]), CLASS_COUNT, seed)
    train_data = [_scaled(model, d) for d in raw]
    val_data = [_scaled(model, prepare_domain(d, train.representation)) for d in val_domains]
    strategy = DGMethod(method, model.representation_dim, len(train_data), seed + 1)
    params = model.parameters() + strategy.parameters()
    state = AdamState()
    selector = SnapshotSelector()
    for epoch in range(1, train.epochs + 1):
        batches = list(make_batches(train_data, train.batch_size, rng))
        loss_sum = 0.0
        for number, batch in enumerate(batches):
            for _, tensor in params:
                tensor.zero_grad()
            progress = (epoch - 1 + number / len(batches)) / train.epochs
            loss = strategy.loss(batch, model, rng, progress)
            backward(loss)
            grads = [
                tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
                for _, tensor in params
            ]
            adam_step(params, grads, state, train)
            loss_sum += loss.item() * batch.n
        result.train_loss.append(loss_sum / sum(len(d.labels) for d in train_data))
        result.train_accuracy.append(pooled_accuracy(model, train_data))
        accuracy = pooled_accuracy(model, val_data)
        result.val_accuracy.append(accuracy)
        selector.offer(epoch, accuracy, model)
        logger.debug(
            "Fold %s epoch %s: loss %.5f, val accuracy %.4f",
            fold.index,
            epoch,
            result.train_loss[-1],
            accuracy,
        )
    result.final_val_accuracy = result.val_accuracy[-1]
    result.best_epoch, result.best_val_accuracy = selector.best_epoch, selector.best_accuracy
    train_features = [d.features for d in train_data]
    if len(train_data) >= 2:
        result.final_alignment = representation_alignment(model, train_features)
    model.load_state_dict(selector.state)
    if len(train_data) >= 2:
        result.alignment = representation_alignment(model, train_features)
    target = _scaled(model, prepare_domain(fold.target, train.representation))
    result.target_accuracy = evaluate(model, target)
    logger.info(
        "Fold %s: best epoch %s (val %.4f), target accuracy %.4f",
        fold.index,
        result.best_epoch,
        result.best_val_accuracy,
        result.target_accuracy,
    )
    return result, model


def train_fold(fold: Fold, method: DGConfig, train: TrainConfig, spec: ModelSpec) -> FoldResult:
    """Run one fold; a failure is recorded instead of raised.

    Args:
        fold: the fold.
        method: training strategy.
        train: optimizer settings.
        spec: baseline.

    Returns:
        The fold result, with status "failed" and the error message on failure.
    """
    try:
        result, _ = fit_fold(fold, method, train, spec)
        return result
    except DGForgeError as exc:
        logger.error("Fold %s (target %s) failed: %s", fold.index, fold.target.subject, exc)
        error = str(exc)
    except Exception as exc:  # pylint: disable=broad-except
        logger.exception("Fold %s (target %s) crashed", fold.index, fold.target.subject)
        error = f"{type(exc).__name__}: {exc}"
    return FoldResult(
        fold=fold.index,
        target_subject=fold.target.subject,
        baseline=spec.name,
        method=method.method.value,
        seed=train.seed,
        status="failed",
        error=error,
    )


def run_benchmark(
    domains: Sequence[Domain],
    baselines: Sequence[ModelSpec],
    methods: Sequence[DGConfig],
    train: TrainConfig,
    jobs: int = 1,
) -> List[FoldResult]:
    """Run every fold of every (baseline, method) cell.

    Args:
        domains: all subjects.
        baselines: baselines (table rows).
        methods: methods (table columns).
        train: optimizer settings.
        jobs: folds run concurrently.

    Returns:
        Results ordered by (baseline, method, fold).
    """
    if jobs < 1:
        raise ConfigurationError(f"jobs must be at least 1, got {jobs}")
    folds = loso_folds(domains)
    tasks = [(spec, method, fold) for spec in baselines for method in methods for fold in folds]
    logger.info("Benchmark: %s folds on %s workers", len(tasks), jobs)
    if jobs == 1:
        return [train_fold(fold, method, train, spec) for spec, method, fold in tasks]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [
            pool.submit(train_fold, fold, method, train, spec) for spec, method, fold in tasks
        ]
        return [future.result() for future in futures]


@dataclass
class CellSummary:
    """Mean and spread of one (baseline, method) cell.

    Attrs:
        baseline: baseline id.
        method: method id.
        folds: number of folds.
        mean: mean target accuracy.
        std: population standard deviation.
        variance: population variance.
        values: per-fold target accuracies in fold order.
    """

    baseline: str
    method: str
    folds: int
    mean: float
    std: float
    variance: float
    values: List[float]


@dataclass
class BenchmarkReport:
    """Table of cell summaries plus row and column averages.

    Attrs:
        baselines: row ids in table order.
        methods: column ids in table order.
        cells: summaries in (baseline, method) order.
        row_average: per baseline, (mean of cell means, mean of cell stds).
        column_average: per method, (mean of cell means, mean of cell stds).
        fingerprint: SHA-256 of the canonical run configuration.
    """

    baselines: List[str]
    methods: List[str]
    cells: List[CellSummary]
    row_average: Dict[str, Tuple[float, float]]
    column_average: Dict[str, Tuple[float, float]]
    fingerprint: str = ""

    def cell(self, baseline: str, method: str) -> CellSummary:
        """Look up one cell.

        Args:
            baseline: baseline id.
            method: method id.

        Returns:
            The cell summary.
        """
        return next(c for c in self.cells if c.baseline == baseline and c.method == method)

    def to_dict(self) -> dict:
        """JSON-ready record.

        Returns:
            The report as plain values.
        """
        return {
            "baselines": self.baselines,
            "methods": self.methods,
            "cells": [asdict(cell) for cell in self.cells],
            "row_average": {k: list(v) for k, v in self.row_average.items()},
            "column_average": {k: list(v) for k, v in self.column_average.items()},
            "fingerprint": self.fingerprint,
        }

    @classmethod
    def from_dict(cls, record: dict) -> "BenchmarkReport":
        """Rebuild a report from its JSON record.

        Args:
            record: output of to_dict.

        Returns:
            The report.
        """
        return cls(
            baselines=record["baselines"],
            methods=record["methods"],
            cells=[CellSummary(**cell) for cell in record["cells"]],
            row_average={k: tuple(v) for k, v in record["row_average"].items()},
            column_average={k: tuple(v) for k, v in record["column_average"].items()},
            fingerprint=record.get("fingerprint", ""),
        )


def config_fingerprint(config: dict) -> str:
    """Hash a configuration document.

    Args:
        config: JSON-serializable configuration.

    Returns:
        Hex SHA-256 of its canonical JSON form.
    """
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _ordered(values: Sequence[str]) -> List[str]:
    """Distinct values in first-seen order.

    Args:
        values: ids.

    Returns:
        The ids without repeats.
    """
    return list(dict.fromkeys(values))


def aggregate(results: Sequence[FoldResult], fingerprint: str = "") -> BenchmarkReport:
    """Summarize fold results per (baseline, method) cell.

    Args:
        results: fold results of one or more cells.
        fingerprint: configuration hash stored with the report.

    Returns:
        The report; rows and columns keep the order the results list them in.

    Raises:
        ReportError: on no results, failed folds or cells with different fold counts.
    """
    if not results:
        raise ReportError("no fold results to aggregate")
    failed = [r for r in results if r.status != "ok"]
    if failed:
        names = ", ".join(f"{r.baseline}/{r.method}/fold {r.fold}" for r in failed)
        raise ReportError(f"cannot aggregate failed folds: {names}")
    grouped: Dict[Tuple[str, str], List[FoldResult]] = {}
    for result in sorted(results, key=lambda r: r.fold):
        grouped.setdefault((result.baseline, result.method), []).append(result)
    counts = {key: len(group) for key, group in grouped.items()}
    if len(set(counts.values())) > 1:
        raise ReportError(f"cells disagree on fold counts: {counts}")
    baselines = _ordered([r.baseline for r in results])
    methods = _ordered([r.method for r in results])
    cells = []
    for baseline in baselines:
        for method in methods:
            if (baseline, method) not in grouped:
                raise ReportError(f"missing cell {baseline}/{method}")
            values = np.array([r.target_accuracy for r in grouped[(baseline, method)]])
            cells.append(
                CellSummary(
                    baseline,
                    method,
                    len(values),
                    float(values.mean()),
                    float(values.std()),
                    float(values.var()),
                    values.tolist(),
                )
            )
    report = BenchmarkReport(baselines, methods, cells, {}, {}, fingerprint)
    for baseline in baselines:
        row = [report.cell(baseline, m) for m in methods]
        report.row_average[baseline] = (
            float(np.mean([c.mean for c in row])),
            float(np.mean([c.std for c in row])),
        )
    for method in methods:
        column = [report.cell(b, method) for b in baselines]
        report.column_average[method] = (
            float(np.mean([c.mean for c in column])),
            float(np.mean([c.std for c in column])),
        )
    return report


@dataclass(frozen=True)
class SweepRecord:
    """One grid cell of the sweep in long format.

    Attrs:
        method: method id.
        baseline: baseline id.
        epochs: epochs of the cell.
        batch: batch size of the cell.
        mean: mean target accuracy (NaN when the cell failed).
        std: population standard deviation (NaN when the cell failed).
        status: "ok" or "failed".
        error: failure message.
    """

    method: str
    baseline: str
    epochs: int
    batch: int
    mean: float
    std: float
    status: str = "ok"
    error: Optional[str] = None


def sweep(
    domains: Sequence[Domain],
    grid: Dict[str, Sequence[int]],
    baselines: Sequence[ModelSpec],
    methods: Sequence[DGConfig],
    train: TrainConfig,
    jobs: int = 1,
) -> List[SweepRecord]:
    """Run the LOSO benchmark for every (epochs, batch size) pair of a grid.

    Args:
        domains: all subjects.
        grid: {"epochs": [...], "batch_sizes": [...]}.
        baselines: baselines.
        methods: methods.
        train: base optimizer settings; epochs and batch size are overridden per cell.
        jobs: folds run concurrently.

    Returns:
        Records sorted by (method, baseline, epochs, batch).

    Raises:
        ConfigurationError: on an empty grid.
    """
    epochs, batches = list(grid.get("epochs", [])), list(grid.get("batch_sizes", []))
    if not epochs or not batches:
        raise ConfigurationError("sweep grid needs at least one epoch count and batch size")
    records = []
    for epoch_count, batch_size in itertools.product(epochs, batches):
        logger.info("Sweep cell: %s epochs, batch %s", epoch_count, batch_size)
        try:
            cell_train = replace(train, epochs=epoch_count, batch_size=batch_size)
            report = aggregate(run_benchmark(domains, baselines, methods, cell_train, jobs))
        except DGForgeError as exc:
            logger.error(
                "Sweep cell %s epochs / batch %s failed: %s", epoch_count, batch_size, exc
            )
            records.extend(
                SweepRecord(
                    m.method.value,
                    b.name,
                    epoch_count,
                    batch_size,
                    math.nan,
                    math.nan,
                    "failed",
                    str(exc),
                )
                for b in baselines
                for m in methods
            )
            continue
        records.extend(
            SweepRecord(c.method, c.baseline, epoch_count, batch_size, c.mean, c.std)
            for c in report.cells
        )
    return sorted(records, key=lambda r: (r.method, r.baseline, r.epochs, r.batch))
