"""Teacher training and student distillation (joint, decoupled, ablation suites)."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import LabeledDataset, SplitPlan, apply_subtask, make_split
from .errors import DivergenceError, InputError, RankError, SubDistillError
from .losses import (
    Adapter,
    LayerBinding,
    LossReport,
    WbAdapter,
    alpha_l_normalizer,
    cross_entropy,
    orthogonality_penalty,
    output_kl,
    subdistill_layer_loss,
    wb_layer_loss,
)
from .model import NetworkSpec, NetworkState, accuracy, backward, checkpoint_bytes, forward, init_network
from .numerics import orthogonality_error, qr_orthonormalize, stiefel_retract
from .subspace import (
    Subspace,
    SubtaskSpec,
    identity_subspace,
    pca_subspace,
    prca_subspace,
    random_subspace,
    response_vectors,
    subspace_bytes,
)

log = logging.getLogger(__name__)

METHODS = ("subdistill", "wb_baseline", "output_only")
ABLATIONS = ("no_centering", "no_normalization", "no_dimred_v1", "no_dimred_v2", "pca_subspace", "random_subspace")
TRAINING_MODES = ("joint", "decoupled")
ALPHA_GRID = (1e-2, 1e-1, 1.0, 1e1, 1e2)
DEFAULT_BINDING_MAP = ((1, 1), (2, 2), (3, 3), (4, 5))  # (student layer, teacher layer)
DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class DistillConfig:
    alpha: float = 1.0
    temperature: float = 1.0
    layers: tuple[int, ...] = (1, 2, 3, 4)  # 1-based positions in binding_map
    binding_map: tuple[tuple[int, int], ...] = DEFAULT_BINDING_MAP
    method: str = "subdistill"
    ablations: tuple[str, ...] = ()
    training_fraction: float = 0.8
    epochs: int = 30
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_size: int = 32
    seed: int = 0
    training_mode: str = "joint"
    orthogonality: str = "stiefel"
    penalty_weight: float = 1000.0
    beta: float | None = None  # None: automatic

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(int(l) for l in self.layers))
        object.__setattr__(self, "binding_map", tuple((int(s), int(t)) for s, t in self.binding_map))
        object.__setattr__(self, "ablations", tuple(self.ablations))
        if self.method not in METHODS:
            raise InputError(f"unknown method {self.method!r}; expected one of {METHODS}")
        unknown = set(self.ablations) - set(ABLATIONS)
        if unknown:
            raise InputError(f"unknown ablation(s) {sorted(unknown)}")
        if self.ablations and self.method != "subdistill":
            raise InputError("ablation switches apply only to method=subdistill")
        if len({"no_dimred_v1", "no_dimred_v2", "pca_subspace", "random_subspace"} & set(self.ablations)) > 1:
            raise InputError("at most one subspace/dimensionality ablation at a time")
        if self.training_mode not in TRAINING_MODES:
            raise InputError(f"unknown training mode {self.training_mode!r}")
        if self.orthogonality not in ("stiefel", "soft_penalty"):
            raise InputError(f"unknown orthogonality mode {self.orthogonality!r}")
        bad = [l for l in self.layers if not 1 <= l <= len(self.binding_map)]
        if bad:
            raise InputError(f"layer selector(s) {bad} outside 1..{len(self.binding_map)}")
        if not 0 < self.training_fraction <= 1:
            raise InputError("training_fraction must lie in (0, 1]")
        if self.alpha < 0 or self.temperature <= 0 or self.learning_rate <= 0:
            raise InputError("alpha must be >= 0; temperature and learning rate > 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise InputError("epochs must be >= 0 and batch_size >= 1")

    def selected_bindings(self) -> list[tuple[int, int]]:
        return [self.binding_map[i - 1] for i in sorted(set(self.layers))]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layers"] = list(self.layers)
        d["binding_map"] = [list(p) for p in self.binding_map]
        d["ablations"] = list(self.ablations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DistillConfig":
        names = set(cls.__dataclass_fields__)
        unknown = set(d) - names
        if unknown:
            raise InputError(f"unknown distill config keys {sorted(unknown)}")
        d = dict(d)
        if "binding_map" in d:
            d["binding_map"] = tuple(tuple(p) for p in d["binding_map"])
        return cls(**d)

    def label(self) -> str:
        parts = [self.method]
        if self.training_mode != "joint":
            parts.append(self.training_mode)
        parts.extend(self.ablations)
        if self.method != "output_only" and tuple(sorted(set(self.layers))) != tuple(range(1, len(self.binding_map) + 1)):
            parts.append("layers=" + "".join(str(l) for l in sorted(set(self.layers))) if self.layers else "layers=none")
        return "+".join(parts)


@dataclass
class TaskData:
    """Subtask data after splitting; labels are dense subtask labels."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    subtask: SubtaskSpec
    split: SplitPlan | None = None


def prepare_task(
    dataset: LabeledDataset,
    subtask: SubtaskSpec,
    training_fraction: float = 1.0,
    split_seed: int = 0,
    fractions=(0.6, 0.2, 0.2),
) -> TaskData:
    sub = apply_subtask(dataset, subtask)
    plan = make_split(sub, fractions, training_fraction, split_seed)
    return TaskData(
        sub.inputs[plan.train], sub.labels[plan.train],
        sub.inputs[plan.val], sub.labels[plan.val],
        sub.inputs[plan.test], sub.labels[plan.test],
        subtask, plan,
    )


@dataclass
class RunRecord:
    config: DistillConfig
    epochs: list[dict] = field(default_factory=list)
    student: NetworkState | None = None
    subspaces: dict[int, Subspace] = field(default_factory=dict)
    adapters: dict[int, np.ndarray] = field(default_factory=dict)
    val_accuracy: float = float("nan")
    test_accuracy: float = float("nan")
    max_orthogonality_error: float = 0.0
    wall_clock: float = 0.0
    status: str = "ok"
    error: str = ""
    metadata: dict = field(default_factory=dict)

    @property
    def final_losses(self) -> dict:
        return self.epochs[-1] if self.epochs else {}


# -- SGD --------------------------------------------------------------------------------


class _SGD:
    """Plain SGD with optional heavy-ball momentum over a network's parameters."""

    def __init__(self, state: NetworkState, lr: float, momentum: float):
        self.state, self.lr, self.momentum = state, lr, momentum
        self.vel_w = [np.zeros_like(w) for w in state.weights]
        self.vel_b = [np.zeros_like(b) for b in state.biases]

    def step(self, grads, layers: Iterable[int] | None = None) -> None:
        """Update weight layers (1-based); all layers when ``layers`` is None."""
        idx = range(len(self.state.weights)) if layers is None else [l - 1 for l in layers]
        for i in idx:
            if self.momentum:
                self.vel_w[i] = self.momentum * self.vel_w[i] + grads.weights[i]
                self.vel_b[i] = self.momentum * self.vel_b[i] + grads.biases[i]
                self.state.weights[i] = self.state.weights[i] - self.lr * self.vel_w[i]
                self.state.biases[i] = self.state.biases[i] - self.lr * self.vel_b[i]
            else:
                self.state.weights[i] = self.state.weights[i] - self.lr * grads.weights[i]
                self.state.biases[i] = self.state.biases[i] - self.lr * grads.biases[i]


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


# -- teacher ------------------------------------------------------------------------------


def train_teacher(
    spec: NetworkSpec,
    inputs,
    labels,
    epochs: int = 100,
    learning_rate: float = 0.05,
    seed: int = 0,
    batch_size: int = 32,
    momentum: float = 0.9,
) -> NetworkState:
    """Seeded mini-batch SGD on cross-entropy."""
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(labels)
    if x.shape[0] == 0:
        raise InputError("cannot train a teacher on an empty dataset")
    state = init_network(spec)
    opt = _SGD(state, learning_rate, momentum)
    rng = np.random.default_rng([seed, 1])
    # overflow is caught by the finiteness check below
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(epochs):
            for b in _batches(len(x), batch_size, rng):
                trace = forward(state, x[b])
                loss, g = cross_entropy(trace.logits, y[b])
                if not math.isfinite(loss):
                    raise DivergenceError(f"teacher training diverged in epoch {epoch}", epoch)
                opt.step(backward(state, trace, g))
    log.info("teacher training accuracy %.4f after %d epochs", accuracy(state, x, y), epochs)
    return state


# -- subspaces ----------------------------------------------------------------------------


def compute_subspaces(
    teacher: NetworkState,
    x_train,
    student_spec: NetworkSpec,
    config: DistillConfig,
    subtask: SubtaskSpec,
) -> dict[int, Subspace]:
    """Subspaces keyed by student layer, as dictated by the config's ablations."""
    out: dict[int, Subspace] = {}
    if config.method != "subdistill":
        return out
    trace = forward(teacher, x_train)
    for s_layer, t_layer in config.selected_bindings():
        k = student_spec.layer_widths[s_layer]
        acts = trace.activations[t_layer]
        if "no_dimred_v1" in config.ablations or "no_dimred_v2" in config.ablations:
            out[s_layer] = identity_subspace(acts.mean(axis=0), t_layer)
        elif "pca_subspace" in config.ablations:
            out[s_layer] = pca_subspace(acts, k, t_layer)
        elif "random_subspace" in config.ablations:
            out[s_layer] = random_subspace(acts.shape[1], k, seed=config.seed * 1000 + s_layer, mu_teacher=acts.mean(axis=0), layer_index=t_layer)
        else:
            resp = response_vectors(teacher, x_train, t_layer, subtask)
            out[s_layer] = prca_subspace(acts, resp.values, k, config.beta, t_layer)
    return out


def _subspace_cache_key(config: DistillConfig) -> tuple:
    # random subspaces depend on the seed; everything else only on the data
    seedful = "random_subspace" in config.ablations
    kind = next((a for a in config.ablations if a in ("no_dimred_v1", "no_dimred_v2", "pca_subspace", "random_subspace")), "prca")
    return (kind, config.beta, config.seed if seedful else None, tuple(config.selected_bindings()), config.training_fraction)


# -- distillation -------------------------------------------------------------------------


@dataclass
class _LayerTerm:
    student_layer: int
    teacher_layer: int
    alpha_l: float
    binding: LayerBinding | None = None
    wb: WbAdapter | None = None
    mu_sum: np.ndarray | None = None
    mu_count: int = 0


class _Distiller:
    """Shared state for one distillation run."""

    def __init__(self, teacher, student_spec, config: DistillConfig, task: TaskData, subspaces=None):
        self.teacher, self.config, self.task = teacher, config, task
        self.class_ids = np.asarray(task.subtask.class_ids)
        if student_spec.layer_widths[-1] != len(self.class_ids):
            raise InputError(
                f"student output width {student_spec.layer_widths[-1]} != subtask size {len(self.class_ids)}"
            )
        if student_spec.layer_widths[0] != teacher.spec.layer_widths[0]:
            raise InputError("student and teacher input widths differ")
        self.student_spec = replace(student_spec, seed=config.seed)
        self.student = init_network(self.student_spec)
        self.opt = _SGD(self.student, config.learning_rate, config.momentum)
        self.rng = np.random.default_rng([config.seed, 2])
        teacher_trace = forward(teacher, task.x_train)
        self.teacher_acts = teacher_trace.activations
        self.teacher_logits = teacher_trace.logits[:, self.class_ids]
        if subspaces is None:
            subspaces = compute_subspaces(teacher, task.x_train, self.student_spec, config, task.subtask)
        self.subspaces = subspaces
        self.terms = self._build_terms()
        self.max_ortho = 0.0
        self.record = RunRecord(config, subspaces=subspaces)

    def _build_terms(self) -> list[_LayerTerm]:
        cfg = self.config
        terms = []
        if cfg.method == "output_only":
            return terms
        adapter_rng = np.random.default_rng([cfg.seed, 3])
        for s_layer, t_layer in cfg.selected_bindings():
            if s_layer >= self.student_spec.depth or t_layer >= self.teacher.depth:
                raise InputError(f"binding ({s_layer}, {t_layer}) does not address hidden layers")
            k = self.student_spec.layer_widths[s_layer]
            t_acts = self.teacher_acts[t_layer]
            d = t_acts.shape[1]
            if cfg.method == "wb_baseline":
                w = qr_orthonormalize(adapter_rng.standard_normal((d, k))) if d >= k else adapter_rng.standard_normal((d, k)) / np.sqrt(k)
                terms.append(_LayerTerm(s_layer, t_layer, cfg.alpha, wb=WbAdapter(w, np.zeros(d))))
                continue
            sub = self.subspaces[s_layer]
            if sub.k < k:
                raise InputError(f"subspace at student layer {s_layer} has K={sub.k} < student width {k}")
            mode = cfg.orthogonality
            if "no_dimred_v1" in cfg.ablations:
                mode = "soft_penalty"
            elif "no_dimred_v2" in cfg.ablations:
                mode = "stiefel"
            v = qr_orthonormalize(adapter_rng.standard_normal((sub.k, k)))
            policy = "zero" if "no_centering" in cfg.ablations else "batch_mean"
            adapter = Adapter(v, mode, cfg.penalty_weight, policy)
            binding = LayerBinding(t_layer, s_layer, sub, adapter)
            if "no_normalization" in cfg.ablations:
                binding.alpha_l = cfg.alpha
            else:
                binding.alpha_l = alpha_l_normalizer(sub, t_acts, cfg.alpha)
            terms.append(_LayerTerm(s_layer, t_layer, binding.alpha_l, binding=binding))
        return terms

    # one mini-batch of layer terms; returns losses, penalties, activation grads
    def _layer_step(self, terms, trace, rows, epoch):
        lr = self.config.learning_rate
        losses, penalties, extras = [], [], []
        for term in terms:
            s_acts = trace.activations[term.student_layer]
            t_acts = self.teacher_acts[term.teacher_layer][rows]
            weight = term.alpha_l
            if term.wb is not None:
                loss, g_w, g_b, g_s = wb_layer_loss(term.wb, t_acts, s_acts)
                term.wb.w = term.wb.w - lr * weight * g_w
                term.wb.b = term.wb.b - lr * weight * g_b
                losses.append(loss)
                extras.append((term.student_layer, weight * g_s))
                continue
            binding = term.binding
            loss, g_v, g_s = subdistill_layer_loss(binding, t_acts, s_acts)
            if not math.isfinite(weight * loss) or weight * loss > DIVERGENCE_LIMIT:
                raise DivergenceError(f"layer {term.student_layer} loss {loss!r} in epoch {epoch}", epoch)
            adapter = binding.adapter
            if adapter.orthogonality_mode == "stiefel":
                try:
                    adapter.v = stiefel_retract(adapter.v, lr * weight * g_v)
                except RankError as exc:
                    raise DivergenceError(f"adapter update collapsed in epoch {epoch}: {exc}", epoch) from exc
                penalties.append(0.0)
            else:
                pen, _ = orthogonality_penalty(adapter.v, adapter.penalty_weight)
                adapter.v = _soft_penalty_step(adapter.v, weight * g_v, adapter.penalty_weight, lr)
                penalties.append(pen)
            self.max_ortho = max(self.max_ortho, orthogonality_error(adapter.v)) if adapter.orthogonality_mode == "stiefel" else self.max_ortho
            if term.mu_sum is None:
                term.mu_sum = np.zeros(s_acts.shape[1])
            term.mu_sum = term.mu_sum + s_acts.sum(axis=0)
            term.mu_count += s_acts.shape[0]
            losses.append(loss)
            extras.append((term.student_layer, weight * g_s))
        return losses, penalties, extras

    def _check(self, report: LossReport, epoch: int) -> None:
        if not math.isfinite(report.total) or abs(report.total) > DIVERGENCE_LIMIT:
            raise DivergenceError(f"total loss {report.total!r} in epoch {epoch}", epoch)

    def _epoch_row(self, epoch: int, stage: str, reports: list[LossReport], terms) -> dict:
        n = len(reports)
        row = {"epoch": epoch, "stage": stage}
        row["output_loss"] = sum(r.output_loss for r in reports) / n if n else 0.0
        for j, term in enumerate(terms):
            row[f"layer_{term.student_layer}"] = sum(r.per_layer_losses[j] for r in reports) / n if n else 0.0
        row["penalty"] = sum(sum(r.penalty_terms) for r in reports) / n if n else 0.0
        row["total"] = sum(r.total for r in reports) / n if n else 0.0
        row["val_accuracy"] = accuracy(self.student, self.task.x_val, self.task.y_val)
        row["max_orthogonality_error"] = self._current_ortho()
        return row

    def _current_ortho(self) -> float:
        errs = [orthogonality_error(t.binding.adapter.v) for t in self.terms if t.binding is not None]
        return max(errs) if errs else 0.0

    def run_joint(self) -> RunRecord:
        cfg, task = self.config, self.task
        n = len(task.x_train)
        for epoch in range(cfg.epochs):
            reports = []
            for term in self.terms:
                term.mu_sum, term.mu_count = None, 0
            for rows in _batches(n, cfg.batch_size, self.rng):
                trace = forward(self.student, task.x_train[rows])
                out_loss, g_logits = output_kl(self.teacher_logits[rows], trace.logits, cfg.temperature)
                losses, penalties, extras = self._layer_step(self.terms, trace, rows, epoch)
                report = LossReport(out_loss, losses, [t.alpha_l for t in self.terms], penalties)
                self._check(report, epoch)
                reports.append(report)
                self.opt.step(backward(self.student, trace, g_logits, extras))
            self.record.epochs.append(self._epoch_row(epoch, "joint", reports, self.terms))
        return self._finish()

    def run_decoupled(self) -> RunRecord:
        """Stage-wise: each binding trains its own block of layers, then the head.

        Stage weights are the normalized α_l, so with the default α = 1 every
        stage sees a unit-scale loss and nothing needs tuning.  With α = 0 no
        layer stage is active and the run reduces to output-only training.
        """
        cfg, task = self.config, self.task
        n = len(task.x_train)
        terms = sorted(self.terms, key=lambda t: t.student_layer) if cfg.alpha > 0 else []
        lower = 0
        epoch_counter = 0
        self.record.metadata["decoupled_stages"] = []
        for term in terms:
            block = list(range(lower + 1, term.student_layer + 1))
            self.record.metadata["decoupled_stages"].append(block)
            opt = _SGD(self.student, cfg.learning_rate, cfg.momentum)
            for _ in range(cfg.epochs):
                reports = []
                term.mu_sum, term.mu_count = None, 0
                for rows in _batches(n, cfg.batch_size, self.rng):
                    trace = forward(self.student, task.x_train[rows])
                    losses, penalties, extras = self._layer_step([term], trace, rows, epoch_counter)
                    report = LossReport(0.0, losses, [term.alpha_l], penalties)
                    self._check(report, epoch_counter)
                    reports.append(report)
                    opt.step(backward(self.student, trace, np.zeros_like(trace.logits), extras), block)
                self.record.epochs.append(self._epoch_row(epoch_counter, f"layer_{term.student_layer}", reports, [term]))
                epoch_counter += 1
            lower = term.student_layer
        block = list(range(lower + 1, self.student.depth + 1))
        self.record.metadata["decoupled_stages"].append(block)
        opt = _SGD(self.student, cfg.learning_rate, cfg.momentum)
        for _ in range(cfg.epochs):
            reports = []
            for rows in _batches(n, cfg.batch_size, self.rng):
                trace = forward(self.student, task.x_train[rows])
                out_loss, g_logits = output_kl(self.teacher_logits[rows], trace.logits, cfg.temperature)
                report = LossReport(out_loss)
                self._check(report, epoch_counter)
                reports.append(report)
                opt.step(backward(self.student, trace, g_logits), block)
            self.record.epochs.append(self._epoch_row(epoch_counter, "output", reports, []))
            epoch_counter += 1
        return self._finish()

    def _finish(self) -> RunRecord:
        rec = self.record
        rec.student = self.student
        rec.val_accuracy = accuracy(self.student, self.task.x_val, self.task.y_val)
        rec.test_accuracy = accuracy(self.student, self.task.x_test, self.task.y_test)
        rec.max_orthogonality_error = self.max_ortho
        rec.adapters = {
            t.student_layer: (t.binding.adapter.v if t.binding is not None else t.wb.w) for t in self.terms
        }
        rec.metadata.update(
            {
                "student_mean_policy": "running mean of last epoch for reports",
                "response_model": "local gradient of the subtask margin",
                "optimizer": f"sgd(momentum={self.config.momentum})",
                "alpha_l": {str(t.student_layer): t.alpha_l for t in self.terms},
                "running_mean": {
                    str(t.student_layer): (t.mu_sum / t.mu_count).tolist()
                    for t in self.terms
                    if t.mu_count
                },
            }
        )
        return rec


def _soft_penalty_step(v, grad_loss, weight, lr):
    """Gradient step on loss + weight·‖VᵀV − I‖², sub-stepped to stay stable.

    The penalty's curvature near the manifold is about 8·weight, so one
    explicit step of size lr is split into enough sub-steps that each has
    h·8·weight ≤ 0.5; the loss gradient is held fixed across sub-steps.
    """
    substeps = max(1, math.ceil(lr * 8.0 * weight / 0.5))
    h = lr / substeps
    for _ in range(substeps):
        _, g_pen = orthogonality_penalty(v, weight)
        v = v - h * (grad_loss + g_pen)
    return v


def distill_joint(teacher, student_spec, config: DistillConfig, task: TaskData, subspaces=None) -> RunRecord:
    if config.training_mode != "joint":
        config = replace(config, training_mode="joint")
    start = time.perf_counter()
    rec = _Distiller(teacher, student_spec, config, task, subspaces).run_joint()
    rec.wall_clock = time.perf_counter() - start
    return rec


def distill_decoupled(teacher, student_spec, config: DistillConfig, task: TaskData, subspaces=None) -> RunRecord:
    if config.training_mode != "decoupled":
        config = replace(config, training_mode="decoupled")
    start = time.perf_counter()
    rec = _Distiller(teacher, student_spec, config, task, subspaces).run_decoupled()
    rec.wall_clock = time.perf_counter() - start
    return rec


def distill(teacher, student_spec, config: DistillConfig, task: TaskData, subspaces=None) -> RunRecord:
    fn = distill_decoupled if config.training_mode == "decoupled" else distill_joint
    return fn(teacher, student_spec, config, task, subspaces)


# -- sweeps and suites ----------------------------------------------------------------------


def alpha_sweep(teacher, student_spec, config: DistillConfig, task: TaskData, grid=ALPHA_GRID, subspaces=None):
    """Run each α in the grid; return (best α by val accuracy, records)."""
    records = []
    for a in grid:
        records.append(_safe_run(teacher, student_spec, replace(config, alpha=a), task, subspaces))
    scored = [(r.val_accuracy if r.status == "ok" else -1.0, -i) for i, r in enumerate(records)]
    best = max(range(len(grid)), key=lambda i: scored[i])
    return grid[best], records


def _safe_run(teacher, student_spec, config, task, subspaces=None) -> RunRecord:
    try:
        return distill(teacher, student_spec, config, task, subspaces)
    except DivergenceError as exc:
        return RunRecord(config, status="diverged", error=str(exc))
    except SubDistillError as exc:
        return RunRecord(config, status="failed", error=str(exc))


@dataclass
class SuiteCell:
    name: str
    config: DistillConfig
    records: list[RunRecord]

    @property
    def accuracies(self) -> list[float]:
        return [r.val_accuracy for r in self.records if r.status == "ok"]

    @property
    def mean(self) -> float:
        acc = self.accuracies
        return float(np.mean(acc)) if acc else float("nan")

    @property
    def stderr(self) -> float:
        return standard_error(self.accuracies)


def standard_error(values: Sequence[float]) -> float:
    values = [v for v in values if math.isfinite(v)]
    if len(values) < 2:
        return float("nan") if not values else 0.0
    return float(np.std(values, ddof=1) / math.sqrt(len(values)))


def default_threads() -> int:
    import os

    try:
        return max(1, int(os.environ.get("SUBDISTILL_THREADS", "1")))
    except ValueError:
        return 1


def run_ablation_suite(
    teacher,
    student_spec,
    base_config: DistillConfig,
    task: TaskData,
    ablations: Sequence[str] = ABLATIONS,
    layer_subsets: Sequence[tuple[int, ...]] = (),
    seeds: Sequence[int] = (0, 1, 2),
    threads: int | None = None,
) -> list[SuiteCell]:
    """Base method, each single-switch ablation, and each layer subset, across seeds."""
    variants: list[tuple[str, DistillConfig]] = [("base", base_config)]
    for ab in ablations:
        variants.append((ab, replace(base_config, ablations=(ab,))))
    for subset in layer_subsets:
        name = "layers={" + ",".join(str(l) for l in subset) + "}" if subset else "layers=∅"
        variants.append((name, replace(base_config, layers=tuple(subset))))

    cache: dict[tuple, dict[int, Subspace]] = {}

    def subspaces_for(cfg):
        key = _subspace_cache_key(cfg)
        if key not in cache:
            cache[key] = compute_subspaces(teacher, task.x_train, replace(student_spec, seed=cfg.seed), cfg, task.subtask)
        return cache[key]

    jobs = []
    for name, cfg in variants:
        for seed in seeds:
            run_cfg = replace(cfg, seed=seed)
            jobs.append((name, run_cfg, subspaces_for(run_cfg) if run_cfg.method == "subdistill" else {}))
    threads = threads or default_threads()
    run = lambda job: _safe_run(teacher, student_spec, job[1], task, job[2])  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            records = list(pool.map(run, jobs))
    else:
        records = [run(j) for j in jobs]
    cells: dict[str, SuiteCell] = {}
    for (name, cfg, _), rec in zip(jobs, records):
        cells.setdefault(name, SuiteCell(name, replace(cfg, seed=seeds[0]), [])).records.append(rec)
    return list(cells.values())


def league_table_csv(cells: Sequence[SuiteCell]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    n_seeds = max((len(c.records) for c in cells), default=0)
    writer.writerow(["cell", "mean_accuracy", "std_error", "n_ok"] + [f"seed_{i}" for i in range(n_seeds)])
    for c in cells:
        accs = [f"{r.val_accuracy:.6f}" if r.status == "ok" else r.status for r in c.records]
        writer.writerow([c.name, f"{c.mean:.6f}", f"{c.stderr:.6f}", len(c.accuracies)] + accs)
    largest = max((c.stderr for c in cells if math.isfinite(c.stderr)), default=float("nan"))
    writer.writerow(["largest_std_error", "", f"{largest:.6f}", ""] + [""] * n_seeds)
    return buf.getvalue()


# -- run directories ------------------------------------------------------------------------

LOSS_COLUMNS_FIXED = ("epoch", "stage", "output_loss")


def losses_csv(record: RunRecord) -> str:
    layer_cols = sorted({k for row in record.epochs for k in row if k.startswith("layer_")})
    cols = list(LOSS_COLUMNS_FIXED) + layer_cols + ["penalty", "total", "val_accuracy", "max_orthogonality_error"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for row in record.epochs:
        out = []
        for c in cols:
            v = row.get(c, "")
            out.append(repr(float(v)) if isinstance(v, (float, np.floating)) else v)
        writer.writerow(out)
    return buf.getvalue()


def write_run_dir(record: RunRecord, out_dir, extra: dict | None = None, deterministic: bool = False) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "losses.csv").write_text(losses_csv(record))
    subspace_paths = []
    for s_layer, sub in sorted(record.subspaces.items()):
        p = out / f"subspace_l{s_layer}.sdsu"
        p.write_bytes(subspace_bytes(sub))
        subspace_paths.append(p.name)
    if record.student is not None:
        (out / "student.sdck").write_bytes(checkpoint_bytes(record.student))
    summary = {
        "config": record.config.to_dict(),
        "label": record.config.label(),
        "status": record.status,
        "error": record.error,
        "seed": record.config.seed,
        "val_accuracy": record.val_accuracy,
        "test_accuracy": record.test_accuracy,
        "max_orthogonality_error": record.max_orthogonality_error,
        "final_losses": record.final_losses,
        "student_checkpoint": "student.sdck" if record.student is not None else None,
        "subspace_files": subspace_paths,
        "metadata": record.metadata,
        "wall_clock_seconds": None if deterministic else record.wall_clock,
    }
    if extra:
        summary.update(extra)
    (out / "run.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=_json_default) + "\n")
    return out


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")
