"""Task-relevant teacher subspaces: PRCA, plus PCA and random baselines.

The PRCA subspace maximises, under UᵀU = I,

    E<ã, c>_U + β⁻¹ E<ã, ã>_U + β E<c, c>_U,   <x, y>_U = <Uᵀx, Uᵀy>

where ã is the centered teacher activation and c the response vector (the
gradient of the classification margin with respect to that activation).
Writing each term as tr(Uᵀ S U) turns the problem into a trace maximisation
whose solution is the top-k eigenvectors of the symmetric matrix

    M = ½(Σ_ac + Σ_ca) + β⁻¹ Σ_a + β Σ_c.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateError, DimensionError, FormatError, InputError
from .model import NetworkState, backprop_to_layer, forward
from .numerics import covariance, qr_orthonormalize, read_matrix, sym_eig, write_matrix

SUBSPACE_MAGIC = b"SDSU"
METHODS = ("prca", "pca", "random")


@dataclass(frozen=True)
class SubtaskSpec:
    class_ids: tuple[int, ...]
    name: str = "subtask"

    def __post_init__(self):
        ids = tuple(int(c) for c in self.class_ids)
        if len(ids) < 2:
            raise InputError(f"subtask {self.name!r} needs at least 2 classes")
        if len(set(ids)) != len(ids):
            raise InputError(f"subtask {self.name!r} has duplicate class ids")
        if min(ids) < 0:
            raise InputError(f"subtask {self.name!r} has negative class ids")
        object.__setattr__(self, "class_ids", ids)

    def validate_for(self, n_classes: int) -> None:
        bad = [c for c in self.class_ids if c >= n_classes]
        if bad:
            raise InputError(f"subtask {self.name!r} class ids {bad} exceed teacher output size {n_classes}")


@dataclass
class Subspace:
    u: np.ndarray  # d x K, orthonormal columns
    mu_teacher: np.ndarray  # length d
    layer_index: int
    beta_used: float  # 0.0 for pca/random, where it plays no role
    method: str = "prca"
    eigenvalues: np.ndarray | None = None

    @property
    def k(self) -> int:
        return self.u.shape[1]

    @property
    def dim(self) -> int:
        return self.u.shape[0]

    def project(self, teacher_acts) -> np.ndarray:
        """Uᵀ(a_T − μ_T) for every row."""
        return (np.asarray(teacher_acts) - self.mu_teacher) @ self.u


# -- margin and responses -------------------------------------------------------


def margin_delta(probs_row, subtask: SubtaskSpec) -> tuple[float, int, int]:
    """Log-ratio between the top and runner-up subtask classes.

    Returns ``(delta, j_star, j_dagger)`` with class ids in the original
    (teacher) numbering.  Ties rank the lower class id first.
    """
    p = np.asarray(probs_row, dtype=np.float64)
    ids = subtask.class_ids
    subtask.validate_for(p.shape[-1])
    ranked = sorted(ids, key=lambda c: (-p[c], c))
    j_star, j_dagger = ranked[0], ranked[1]
    if p[j_star] <= 0 or p[j_dagger] <= 0:
        raise DegenerateError("margin needs positive probabilities on the subtask classes")
    return float(np.log(p[j_star] / p[j_dagger])), j_star, j_dagger


def _top_two(logits: np.ndarray, ids: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    # row-wise ranking by (-logit, class id); same order as probabilities
    ids_arr = np.asarray(ids)
    sub = logits[:, ids_arr]
    order = np.lexsort((np.broadcast_to(ids_arr, sub.shape), -sub), axis=1)
    return ids_arr[order[:, 0]], ids_arr[order[:, 1]]


def margins(logits, subtask: SubtaskSpec) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    j_star, j_dagger = _top_two(logits, subtask.class_ids)
    rows = np.arange(len(logits))
    return logits[rows, j_star] - logits[rows, j_dagger]


@dataclass
class ResponseBatch:
    values: np.ndarray  # n x d
    layer_index: int


def response_vectors(teacher: NetworkState, inputs, layer_index: int, subtask: SubtaskSpec) -> ResponseBatch:
    """Gradient of the subtask margin with respect to a teacher layer, per sample.

    The runner-up pair (j*, j†) is held fixed at its value for each sample,
    which makes Δ locally equal to the logit difference z_j* − z_j†.
    """
    L = teacher.depth
    if not 1 <= layer_index <= L - 1:
        raise DimensionError(f"response layer {layer_index} outside [1, {L - 1}]")
    subtask.validate_for(teacher.spec.layer_widths[-1])
    trace = forward(teacher, inputs)
    j_star, j_dagger = _top_two(trace.logits, subtask.class_ids)
    seed = np.zeros_like(trace.logits)
    rows = np.arange(len(seed))
    seed[rows, j_star] = 1.0
    seed[rows, j_dagger] = -1.0
    return ResponseBatch(backprop_to_layer(teacher, trace, seed, layer_index), layer_index)


# -- subspace extraction ------------------------------------------------------------


def auto_beta(centered_acts: np.ndarray, responses: np.ndarray) -> float:
    tr_a = float(np.mean(np.sum(centered_acts**2, axis=1)))
    tr_c = float(np.mean(np.sum(responses**2, axis=1)))
    if tr_c == 0.0:
        raise DegenerateError("responses are identically zero; automatic beta is undefined")
    if tr_a == 0.0:
        raise DegenerateError("activations have zero variance; automatic beta is undefined")
    return float(np.sqrt(tr_a / tr_c))


def prca_objective_matrix(centered_acts, responses, beta: float) -> np.ndarray:
    a = np.asarray(centered_acts, dtype=np.float64)
    c = np.asarray(responses, dtype=np.float64)
    n = a.shape[0]
    cross = a.T @ c / n
    m = 0.5 * (cross + cross.T) + covariance(a) / beta + beta * covariance(c)
    return 0.5 * (m + m.T)


def trace_objective(u, m) -> float:
    u = np.asarray(u)
    return float(np.trace(u.T @ m @ u))


def _check_k(k: int, d: int) -> None:
    if not 1 <= k <= d:
        raise DimensionError(f"subspace size k={k} must lie in [1, {d}]")


def prca_subspace(activations, responses, k: int, beta: float | None = None, layer_index: int = 0) -> Subspace:
    """PRCA subspace of a teacher layer.

    ``beta=None`` selects β = sqrt(tr Σ_a / tr Σ_c) (uncentered second moments
    of the centered activations and of the responses); otherwise β is used as
    given.
    """
    a = np.asarray(activations, dtype=np.float64)
    c = np.asarray(responses, dtype=np.float64)
    if a.ndim != 2 or a.shape != c.shape:
        raise DimensionError(f"activations {a.shape} and responses {c.shape} must be aligned n x d")
    if a.shape[0] < 2:
        raise DimensionError("PRCA needs at least 2 samples")
    _check_k(k, a.shape[1])
    mu = a.mean(axis=0)
    a_centered = a - mu
    if beta is None:
        beta = auto_beta(a_centered, c)
    elif not beta > 0:
        raise InputError(f"beta must be positive, got {beta}")
    res = sym_eig(prca_objective_matrix(a_centered, c, beta))
    return Subspace(res.eigenvectors[:, :k], mu, layer_index, float(beta), "prca", res.eigenvalues)


def pca_subspace(activations, k: int, layer_index: int = 0) -> Subspace:
    a = np.asarray(activations, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1:
        raise DimensionError("PCA needs a non-empty n x d batch")
    _check_k(k, a.shape[1])
    res = sym_eig(covariance(a, center=True))
    return Subspace(res.eigenvectors[:, :k], a.mean(axis=0), layer_index, 0.0, "pca", res.eigenvalues)


def random_subspace(d: int, k: int, seed: int, mu_teacher=None, layer_index: int = 0) -> Subspace:
    _check_k(k, d)
    rng = np.random.default_rng(seed)
    u = qr_orthonormalize(rng.standard_normal((d, k)))
    mu = np.zeros(d) if mu_teacher is None else np.asarray(mu_teacher, dtype=np.float64)
    return Subspace(u, mu, layer_index, 0.0, "random")


def identity_subspace(mu_teacher, layer_index: int = 0) -> Subspace:
    """U = I_d; used when the dimensionality reduction is switched off."""
    mu = np.asarray(mu_teacher, dtype=np.float64)
    return Subspace(np.eye(mu.shape[0]), mu, layer_index, 0.0, "identity")


# -- SDSU files -------------------------------------------------------------------

_SDSU_HEAD = struct.Struct("<4sIBId")
_METHOD_CODES = METHODS + ("identity",)


def subspace_bytes(sub: Subspace) -> bytes:
    buf = io.BytesIO()
    buf.write(_SDSU_HEAD.pack(SUBSPACE_MAGIC, sub.layer_index, _METHOD_CODES.index(sub.method), sub.k, sub.beta_used))
    write_matrix(buf, sub.mu_teacher[None, :])
    write_matrix(buf, sub.u)
    return buf.getvalue()


def save_subspace(sub: Subspace, path) -> None:
    Path(path).write_bytes(subspace_bytes(sub))


def load_subspace(path) -> Subspace:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read subspace file {path}: {exc}") from exc
    if len(raw) < _SDSU_HEAD.size:
        raise FormatError(f"{path}: truncated subspace header")
    magic, layer, code, k, beta = _SDSU_HEAD.unpack_from(raw)
    if magic != SUBSPACE_MAGIC:
        raise FormatError(f"{path}: bad subspace magic {magic!r}")
    if code >= len(_METHOD_CODES):
        raise FormatError(f"{path}: unknown method code {code}")
    src = io.BytesIO(raw[_SDSU_HEAD.size :])
    mu = read_matrix(src)[0]
    u = read_matrix(src)
    if u.shape != (mu.shape[0], k):
        raise FormatError(f"{path}: U shape {u.shape} inconsistent with K={k}, d={mu.shape[0]}")
    return Subspace(u, mu, layer, beta, _METHOD_CODES[code])
