"""Teacher/student alignment measures: linear CKA, kernels, LRP attributions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateError, DimensionError, InputError
from .model import NetworkState, forward

DEFAULT_GAMMA = 0.25
DEFAULT_EPSILON = 1e-6


def _center_columns(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return x - x.mean(axis=0)


def linear_cka(x, y) -> float:
    """Linear centered kernel alignment between two representations of the same n samples."""
    xc, yc = _center_columns(x), _center_columns(y)
    if xc.shape[0] != yc.shape[0]:
        raise DimensionError(f"CKA needs the same sample count, got {xc.shape[0]} and {yc.shape[0]}")
    if xc.shape[0] < 2:
        raise DimensionError("CKA needs at least 2 samples")
    # scale each side first so the Frobenius norms below cannot underflow
    nx, ny = np.max(np.abs(xc)), np.max(np.abs(yc))
    if nx == 0 or ny == 0:
        raise DegenerateError("CKA is undefined for a representation with zero centered variance")
    xc, yc = xc / nx, yc / ny
    cross = np.linalg.norm(xc.T @ yc) ** 2
    value = cross / (np.linalg.norm(xc.T @ xc) * np.linalg.norm(yc.T @ yc))
    return float(min(max(value, 0.0), 1.0))


@dataclass
class KernelMatrix:
    values: np.ndarray
    centered: bool = True


def centered_kernel(acts) -> KernelMatrix:
    """K = X̃X̃ᵀ on row-centered activations (mean over the batch removed)."""
    x = np.asarray(acts, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DimensionError("centered kernel needs at least 2 rows")
    xc = x - x.mean(axis=0)
    k = xc @ xc.T
    return KernelMatrix(0.5 * (k + k.T), True)


def _range(relevant) -> slice:
    start, stop = (relevant.start, relevant.stop) if isinstance(relevant, slice) else relevant
    if stop is None or start is None or stop <= start:
        raise InputError(f"empty relevant range {relevant}")
    return slice(int(start), int(stop))


def band_alignment_score(teacher_kernel, student_kernel, relevant) -> float:
    """Pearson correlation of the two kernels on the relevant-by-relevant block."""
    kt = getattr(teacher_kernel, "values", teacher_kernel)
    ks = getattr(student_kernel, "values", student_kernel)
    if kt.shape != ks.shape:
        raise DimensionError(f"kernel shapes differ: {kt.shape} vs {ks.shape}")
    r = _range(relevant)
    bt, bs = kt[r, r], ks[r, r]
    if bt.size == 0:
        raise InputError("relevant range selects no entries")
    nt, ns = np.linalg.norm(bt), np.linalg.norm(bs)
    if nt == 0 or ns == 0:
        raise DegenerateError("a kernel block is identically zero")
    return _pearson((bt / nt).ravel(), (bs / ns).ravel())


def kernel_mass_fraction(kernel, relevant) -> float:
    """Share of the kernel's squared Frobenius mass inside the relevant block."""
    k = getattr(kernel, "values", kernel)
    r = _range(relevant)
    total = float(np.sum(k**2))
    if total == 0:
        raise DegenerateError("kernel is identically zero")
    return float(np.sum(k[r, r] ** 2) / total)


def lag_profile(kernel, lags: Sequence[int]) -> np.ndarray:
    """Mean cosine-normalised kernel value κ(i, i+ℓ) for each lag ℓ."""
    k = getattr(kernel, "values", kernel)
    d = np.sqrt(np.clip(np.diag(k), 1e-300, None))
    cos = k / np.outer(d, d)
    return np.array([np.mean(np.diag(cos, lag)) for lag in lags])


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateError("Pearson correlation undefined for zero-variance input")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


# -- LRP ------------------------------------------------------------------------------


@dataclass
class RelevanceMap:
    values: np.ndarray
    target: int
    rule_trace: list[str] = field(default_factory=list)
    shape: tuple[int, ...] | None = None  # feature grid, e.g. (8, 8)

    def grid(self) -> np.ndarray:
        return self.values.reshape(self.shape) if self.shape else self.values


def default_rules(depth: int, gamma: float = DEFAULT_GAMMA, epsilon: float = DEFAULT_EPSILON) -> list[tuple[str, float]]:
    """γ for the hidden layers, ε for the output layer."""
    return [("gamma", gamma)] * (depth - 1) + [("epsilon", epsilon)]


def _lrp_layer(a: np.ndarray, w: np.ndarray, b: np.ndarray, relevance: np.ndarray, rule: str, param: float) -> np.ndarray:
    if rule == "epsilon":
        z = w @ a + b
        z = z + param * np.where(z >= 0, 1.0, -1.0)
        w_eff = w
    elif rule == "gamma":
        w_eff = w + param * np.maximum(w, 0.0)
        z = w_eff @ a + b + param * np.maximum(b, 0.0)
        z = z + 1e-12 * np.where(z >= 0, 1.0, -1.0)
    else:
        raise InputError(f"unknown LRP rule {rule!r}")
    s = relevance / z
    return a * (w_eff.T @ s)


def lrp_attribute(
    state: NetworkState,
    input_row,
    target_class: int,
    rules: Sequence[tuple[str, float]] | None = None,
    shape: tuple[int, ...] | None = None,
) -> RelevanceMap:
    """Relevance of each input feature for one target logit.

    ``rules`` gives one ``(name, parameter)`` per weight layer, bottom to top,
    with name ``"epsilon"`` or ``"gamma"``.  Relevance that flows into bias
    terms is dropped, so conservation is exact only for zero-bias networks.
    """
    x = np.asarray(input_row, dtype=np.float64).ravel()
    L = state.depth
    n_out = state.spec.layer_widths[-1]
    if not 0 <= target_class < n_out:
        raise InputError(f"target class {target_class} outside [0, {n_out})")
    rules = list(rules) if rules is not None else default_rules(L)
    if len(rules) != L:
        raise InputError(f"need {L} LRP rules, got {len(rules)}")
    acts = forward(state, x[None, :]).activations
    relevance = np.zeros(n_out)
    relevance[target_class] = acts[L][0, target_class]
    trace = []
    for l in range(L, 0, -1):
        name, param = rules[l - 1]
        relevance = _lrp_layer(acts[l - 1][0], state.weights[l - 1], state.biases[l - 1], relevance, name, param)
        trace.append(f"layer{l}:{name}={param:g}")
    return RelevanceMap(relevance, target_class, trace[::-1], shape)


def average_maps(maps: Sequence[RelevanceMap]) -> RelevanceMap:
    if not maps:
        raise InputError("nothing to average")
    first = maps[0]
    return RelevanceMap(np.mean([m.values for m in maps], axis=0), first.target, list(first.rule_trace), first.shape)


def patch_sums(rmap: RelevanceMap, patch_size) -> np.ndarray:
    """Relevance summed over non-overlapping patches; edge remainders form smaller patches."""
    grid = rmap.grid()
    sizes = (patch_size,) * grid.ndim if np.isscalar(patch_size) else tuple(patch_size)
    if len(sizes) != grid.ndim or min(sizes) < 1:
        raise InputError(f"patch size {patch_size} does not fit a {grid.ndim}-D grid")
    out = grid
    for axis, size in enumerate(sizes):
        starts = np.arange(0, out.shape[axis], size)
        out = np.add.reduceat(out, starts, axis=axis)
    return out.ravel()


def patch_correlation(map_a, map_b, patch_size=8) -> tuple[float, np.ndarray]:
    """Pearson correlation between patch-summed relevance of two explanations.

    Either argument may be a single map or a sequence of maps (pooled over
    the sequence, pairs aligned by position).  Returns the correlation and
    the ``(n_patches, 2)`` scatter points.
    """
    maps_a = [map_a] if isinstance(map_a, RelevanceMap) else list(map_a)
    maps_b = [map_b] if isinstance(map_b, RelevanceMap) else list(map_b)
    if len(maps_a) != len(maps_b):
        raise DimensionError("explanation lists differ in length")
    xs, ys = [], []
    for a, b in zip(maps_a, maps_b):
        if a.grid().shape != b.grid().shape:
            raise DimensionError(f"relevance grids differ: {a.grid().shape} vs {b.grid().shape}")
        xs.append(patch_sums(a, patch_size))
        ys.append(patch_sums(b, patch_size))
    points = np.column_stack([np.concatenate(xs), np.concatenate(ys)])
    return _pearson(points[:, 0], points[:, 1]), points
