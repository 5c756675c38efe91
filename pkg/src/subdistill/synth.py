"""Synthetic 1-D manifold experiment: kernel band structure under two distillation losses.

The manifold is a random Fourier-feature embedding of t ∈ [0, 1], so the
input kernel is approximately Gaussian in t and shows a band along the
diagonal.  Only the middle third of the manifold carries the subtask (two
classes split at its midpoint); the rest is a background class.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .analysis import band_alignment_score, centered_kernel, kernel_mass_fraction, lag_profile
from .errors import InputError
from .losses import Adapter, LayerBinding, WbAdapter, subdistill_layer_loss, wb_layer_loss
from .model import NetworkSpec, NetworkState, backward, forward, init_network
from .numerics import qr_orthonormalize, save_matrix, stiefel_retract
from .subspace import SubtaskSpec, prca_subspace, response_vectors
from .trainer import train_teacher

log = logging.getLogger(__name__)

LAGS = (0, 1, 2, 4, 8)


@dataclass
class ManifoldDataset:
    inputs: np.ndarray
    t: np.ndarray
    labels: np.ndarray
    relevant_range: tuple[int, int]

    @property
    def relevant(self) -> slice:
        return slice(*self.relevant_range)


def generate_manifold(n: int, d0: int, seed: int, noise_scale: float = 0.0, length_scale: float = 0.01) -> ManifoldDataset:
    """Points x(t) = sqrt(2/d0)·cos(ω t + φ) + noise, sorted by t.

    ω ~ N(0, 1/length_scale²), φ ~ U[0, 2π).  The middle third is relevant and
    split into classes 0 and 1 at its midpoint; everything else is class 2.
    """
    if n < 16 or d0 < 2:
        raise InputError(f"need n >= 16 and d0 >= 2, got n={n}, d0={d0}")
    if noise_scale < 0 or length_scale <= 0:
        raise InputError("noise_scale must be >= 0 and length_scale > 0")
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 1.0, n)
    omega = rng.standard_normal(d0) / length_scale
    phase = rng.uniform(0.0, 2.0 * np.pi, d0)
    x = np.sqrt(2.0 / d0) * np.cos(np.outer(t, omega) + phase)
    if noise_scale > 0:
        x = x + noise_scale * rng.standard_normal(x.shape)
    start, stop = n // 3, 2 * n // 3
    labels = np.full(n, 2, dtype=np.int64)
    mid = (start + stop) // 2
    labels[start:mid] = 0
    labels[mid:stop] = 1
    return ManifoldDataset(x, t, labels, (start, stop))


@dataclass
class BandConfig:
    n: int = 150
    d0: int = 128
    noise_scale: float = 0.0
    length_scale: float = 0.01
    teacher_widths: tuple[int, ...] = (64, 64)
    teacher_layer: int = 1
    teacher_epochs: int = 200
    student_hidden: int = 32
    k: int = 4
    epochs: int = 300
    learning_rate: float = 0.01
    batch_size: int = 32
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)

    @classmethod
    def from_dict(cls, d: dict) -> "BandConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InputError(f"unknown band-experiment keys {sorted(unknown)}")
        d = dict(d)
        for key in ("teacher_widths", "seeds"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["teacher_widths"] = list(self.teacher_widths)
        d["seeds"] = list(self.seeds)
        return d


@dataclass
class SeedResult:
    seed: int
    teacher_kernel: np.ndarray
    subdistill_kernel: np.ndarray
    wb_kernel: np.ndarray
    subdistill_score: float
    wb_score: float
    subdistill_mass: float
    wb_mass: float
    teacher_mass: float
    teacher_lag_profile: np.ndarray


@dataclass
class BandReport:
    config: BandConfig
    relevant_range: tuple[int, int]
    results: list[SeedResult] = field(default_factory=list)

    def scores_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["seed", "subdistill_score", "wb_score", "subdistill_mass", "wb_mass", "teacher_mass"])
        for r in self.results:
            w.writerow([r.seed] + [repr(float(v)) for v in (r.subdistill_score, r.wb_score, r.subdistill_mass, r.wb_mass, r.teacher_mass)])
        return buf.getvalue()

    @property
    def score_wins(self) -> int:
        return sum(r.subdistill_score > r.wb_score for r in self.results)

    @property
    def mass_wins(self) -> int:
        return sum(r.subdistill_mass > r.wb_mass for r in self.results)


def _train_student(student: NetworkState, layer: int, x, teacher_acts, update, params, cfg: BandConfig, rng):
    """Train student layers 1..layer on the layer loss alone; the head is left untouched."""
    n = len(x)
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            rows = perm[start : start + cfg.batch_size]
            trace = forward(student, x[rows])
            g_act = update(params, teacher_acts[rows], trace.activations[layer], cfg.learning_rate)
            grads = backward(student, trace, np.zeros_like(trace.logits), [(layer, g_act)])
            for i in range(layer):
                student.weights[i] -= cfg.learning_rate * grads.weights[i]
                student.biases[i] -= cfg.learning_rate * grads.biases[i]
    return student


def _subdistill_update(binding: LayerBinding, t_acts, s_acts, lr):
    _, g_v, g_s = subdistill_layer_loss(binding, t_acts, s_acts)
    binding.adapter.v = stiefel_retract(binding.adapter.v, lr * binding.alpha_l * g_v)
    return binding.alpha_l * g_s


@dataclass
class _ScaledWb:
    adapter: WbAdapter
    scale: float


def _wb_update(wb: _ScaledWb, t_acts, s_acts, lr):
    _, g_w, g_b, g_s = wb_layer_loss(wb.adapter, t_acts, s_acts)
    wb.adapter.w = wb.adapter.w - lr * wb.scale * g_w
    wb.adapter.b = wb.adapter.b - lr * wb.scale * g_b
    return wb.scale * g_s


def run_band_seed(cfg: BandConfig, seed: int) -> SeedResult:
    data = generate_manifold(cfg.n, cfg.d0, seed, cfg.noise_scale, cfg.length_scale)
    teacher_spec = NetworkSpec((cfg.d0,) + tuple(cfg.teacher_widths) + (3,), seed=seed)
    teacher = train_teacher(teacher_spec, data.inputs, data.labels, cfg.teacher_epochs, 0.02, seed)
    t_acts = forward(teacher, data.inputs).activations[cfg.teacher_layer]
    rel = data.relevant
    subtask = SubtaskSpec((0, 1), "relevant")
    # subspace estimated on the subtask (relevant) samples only
    resp = response_vectors(teacher, data.inputs[rel], cfg.teacher_layer, subtask)
    sub = prca_subspace(t_acts[rel], resp.values, cfg.k, layer_index=cfg.teacher_layer)

    # bound layer 2 has width K so V is square; the 3-way head stays at init
    student_spec = NetworkSpec((cfg.d0, cfg.student_hidden, cfg.k, 3), seed=seed + 10_000)
    layer = 2
    adapter_rng = np.random.default_rng([seed, 3])
    energy = float(np.mean(np.sum(sub.project(t_acts) ** 2, axis=1)))
    v0 = qr_orthonormalize(adapter_rng.standard_normal((cfg.k, cfg.k)))
    binding = LayerBinding(cfg.teacher_layer, layer, sub, Adapter(v0), 1.0 / energy)
    sd_student = _train_student(
        init_network(student_spec), layer, data.inputs, t_acts, _subdistill_update, binding, cfg, np.random.default_rng([seed, 2])
    )
    # both losses are scaled to unit size at init so one learning rate serves both
    t_energy = float(np.mean(np.sum((t_acts - t_acts.mean(axis=0)) ** 2, axis=1)))
    w0 = qr_orthonormalize(adapter_rng.standard_normal((t_acts.shape[1], cfg.k)))
    wb = _ScaledWb(WbAdapter(w0, t_acts.mean(axis=0)), 1.0 / t_energy)
    wb_student = _train_student(
        init_network(student_spec), layer, data.inputs, t_acts, _wb_update, wb, cfg, np.random.default_rng([seed, 2])
    )

    k_teacher = centered_kernel(t_acts).values
    k_sd = centered_kernel(forward(sd_student, data.inputs).activations[layer]).values
    k_wb = centered_kernel(forward(wb_student, data.inputs).activations[layer]).values
    return SeedResult(
        seed,
        k_teacher,
        k_sd,
        k_wb,
        band_alignment_score(k_teacher, k_sd, rel),
        band_alignment_score(k_teacher, k_wb, rel),
        kernel_mass_fraction(k_sd, rel),
        kernel_mass_fraction(k_wb, rel),
        kernel_mass_fraction(k_teacher, rel),
        lag_profile(k_teacher, LAGS),
    )


def run_band_experiment(cfg: BandConfig, out_dir=None, deterministic: bool = True) -> BandReport:
    report = BandReport(cfg, (cfg.n // 3, 2 * cfg.n // 3))
    for seed in cfg.seeds:
        res = run_band_seed(cfg, seed)
        log.info("seed %d: score subdistill %.3f vs wb %.3f", seed, res.subdistill_score, res.wb_score)
        report.results.append(res)
    if out_dir is not None:
        write_band_report(report, out_dir, deterministic)
    return report


def write_band_report(report: BandReport, out_dir, deterministic: bool = True) -> Path:
    from .plotting import kernel_panels

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    first = report.results[0]
    save_matrix(out / "kernels_teacher.sdmx", first.teacher_kernel)
    save_matrix(out / "kernels_subdistill.sdmx", first.subdistill_kernel)
    save_matrix(out / "kernels_wb.sdmx", first.wb_kernel)
    (out / "scores.csv").write_text(report.scores_csv())
    kernel_panels(
        {"teacher": first.teacher_kernel, "(W,b)": first.wb_kernel, "SubDistill": first.subdistill_kernel},
        report.relevant_range,
        out / "kernels.svg",
        deterministic=deterministic,
    )
    return out
