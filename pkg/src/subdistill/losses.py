"""Distillation loss terms with exact gradients.

Every loss is a batch mean and returns its gradients with respect to the
quantities the trainer updates: student logits or activations, and adapter
parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateError, DimensionError, InputError
from .model import log_softmax, softmax_probs
from .subspace import Subspace


@dataclass
class Adapter:
    """Orthonormal adapter V (K x K, or tall d x K when U = I)."""

    v: np.ndarray
    orthogonality_mode: str = "stiefel"  # or "soft_penalty"
    penalty_weight: float = 1000.0
    mu_student_policy: str = "batch_mean"  # or "zero"

    def __post_init__(self):
        if self.orthogonality_mode not in ("stiefel", "soft_penalty"):
            raise InputError(f"unknown orthogonality mode {self.orthogonality_mode!r}")
        if self.mu_student_policy not in ("batch_mean", "zero"):
            raise InputError(f"unknown student-mean policy {self.mu_student_policy!r}")


@dataclass
class WbAdapter:
    w: np.ndarray  # d x K
    b: np.ndarray  # d


@dataclass
class LayerBinding:
    teacher_layer: int
    student_layer: int
    subspace: Subspace
    adapter: Adapter
    alpha_l: float = 1.0

    def __post_init__(self):
        if self.adapter.v.shape != (self.subspace.k, self.adapter.v.shape[1]):
            raise DimensionError(
                f"adapter shape {self.adapter.v.shape} does not match subspace K={self.subspace.k}"
            )

    @property
    def k(self) -> int:
        return self.adapter.v.shape[1]


@dataclass
class LossReport:
    output_loss: float
    per_layer_losses: list[float] = field(default_factory=list)
    alphas: list[float] = field(default_factory=list)
    penalty_terms: list[float] = field(default_factory=list)

    @property
    def total(self) -> float:
        layer = sum(a * l for a, l in zip(self.alphas, self.per_layer_losses))
        return self.output_loss + layer + sum(self.penalty_terms)


def output_kl(teacher_logits, student_logits, temperature: float = 1.0):
    """Batch-mean KL(p_teacher || p_student) at a temperature, and d/d student logits."""
    t = np.asarray(teacher_logits, dtype=np.float64)
    s = np.asarray(student_logits, dtype=np.float64)
    if t.shape != s.shape or t.ndim != 2:
        raise DimensionError(f"teacher logits {t.shape} and student logits {s.shape} must match")
    p_t = softmax_probs(t, temperature)
    log_pt = log_softmax(t, temperature)
    log_ps = log_softmax(s, temperature)
    n = t.shape[0]
    loss = float(np.sum(p_t * (log_pt - log_ps)) / n)
    grad = (np.exp(log_ps) - p_t) / (temperature * n)
    return loss, grad


def cross_entropy(logits, labels):
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n = logits.shape[0]
    logp = log_softmax(logits)
    loss = float(-np.mean(logp[np.arange(n), labels]))
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def subdistill_layer_loss(binding: LayerBinding, teacher_acts, student_acts, mu_student=None):
    """Orthogonal subspace matching loss E‖V(a_s − μ_s) − Uᵀ(a_T − μ_T)‖².

    μ_T is the subspace's frozen teacher mean.  μ_s is the batch mean of the
    student activations under the ``batch_mean`` policy (and its dependence
    on the activations is part of the gradient), zero under ``zero``, or the
    explicit ``mu_student`` when one is given (evaluation with a frozen
    running mean).

    Returns ``(loss, grad_v, grad_student_acts)``.
    """
    t = np.asarray(teacher_acts, dtype=np.float64)
    s = np.asarray(student_acts, dtype=np.float64)
    v = binding.adapter.v
    if t.ndim != 2 or s.ndim != 2 or t.shape[0] != s.shape[0]:
        raise DimensionError("teacher and student batches must be row-aligned 2-D arrays")
    n = s.shape[0]
    if n == 0:
        raise DimensionError("empty batch")
    if t.shape[1] != binding.subspace.dim or s.shape[1] != v.shape[1]:
        raise DimensionError(
            f"batch widths ({t.shape[1]}, {s.shape[1]}) do not match binding ({binding.subspace.dim}, {v.shape[1]})"
        )
    batch_mean = mu_student is None and binding.adapter.mu_student_policy == "batch_mean"
    if mu_student is not None:
        mu = np.asarray(mu_student, dtype=np.float64)
    elif batch_mean:
        mu = s.mean(axis=0)
    else:
        mu = np.zeros(s.shape[1])
    s_c = s - mu
    residual = s_c @ v.T - binding.subspace.project(t)
    loss = float(np.sum(residual**2) / n)
    grad_v = 2.0 / n * residual.T @ s_c
    grad_s = 2.0 / n * residual @ v
    if batch_mean:
        grad_s = grad_s - grad_s.mean(axis=0)
    return loss, grad_v, grad_s


def alpha_l_normalizer(subspace: Subspace, teacher_acts, alpha: float) -> float:
    """α divided by the mean squared norm of the projected, centered teacher activations."""
    if not alpha >= 0:
        raise InputError(f"alpha must be non-negative, got {alpha}")
    proj = subspace.project(np.asarray(teacher_acts, dtype=np.float64))
    energy = float(np.mean(np.sum(proj**2, axis=1)))
    if energy == 0.0:
        raise DegenerateError(f"teacher layer {subspace.layer_index} has zero projected variance")
    return alpha / energy


def wb_layer_loss(adapter: WbAdapter, teacher_acts, student_acts):
    """(W,b) matching loss E‖W a_s + b − a_T‖².

    Returns ``(loss, grad_w, grad_b, grad_student_acts)``.
    """
    t = np.asarray(teacher_acts, dtype=np.float64)
    s = np.asarray(student_acts, dtype=np.float64)
    if t.ndim != 2 or s.ndim != 2 or t.shape[0] != s.shape[0] or t.shape[0] == 0:
        raise DimensionError("teacher and student batches must be non-empty and row-aligned")
    if adapter.w.shape != (t.shape[1], s.shape[1]) or adapter.b.shape != (t.shape[1],):
        raise DimensionError(f"W {adapter.w.shape} / b {adapter.b.shape} do not fit batches {t.shape}, {s.shape}")
    n = t.shape[0]
    residual = s @ adapter.w.T + adapter.b - t
    loss = float(np.sum(residual**2) / n)
    grad_w = 2.0 / n * residual.T @ s
    grad_b = 2.0 / n * residual.sum(axis=0)
    grad_s = 2.0 / n * residual @ adapter.w
    return loss, grad_w, grad_b, grad_s


def orthogonality_penalty(m, weight: float):
    """weight·‖MᵀM − I‖²_F and its gradient 4·weight·M(MᵀM − I)."""
    if weight < 0:
        raise InputError("penalty weight must be non-negative")
    m = np.asarray(m, dtype=np.float64)
    gap = m.T @ m - np.eye(m.shape[1])
    return float(weight * np.sum(gap**2)), 4.0 * weight * m @ gap
