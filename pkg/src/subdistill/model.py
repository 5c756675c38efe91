"""Dense feedforward networks with activation capture and exact backprop.

Layer indexing: activation 0 is the input, activation ``l`` is the output of
layer ``l`` after its nonlinearity, and activation ``L`` is the logits.
Weights are stored as ``(fan_out, fan_in)`` so that ``z = a @ W.T + b``.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionError, FormatError, InputError
from .numerics import read_matrix, write_matrix

ACTIVATIONS = ("relu", "identity")
CHECKPOINT_MAGIC = b"SDCK"


@dataclass(frozen=True)
class NetworkSpec:
    layer_widths: tuple[int, ...]
    activations: tuple[str, ...] | None = None  # one per hidden layer; default relu
    seed: int = 0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2 or min(widths) < 1:
            raise InputError(f"need at least 2 positive widths, got {widths}")
        acts = self.activations
        if acts is None:
            acts = ("relu",) * (len(widths) - 2)
        acts = tuple(acts)
        if len(acts) != len(widths) - 2:
            raise InputError(f"{len(widths) - 2} hidden layers but {len(acts)} activations")
        unknown = set(acts) - set(ACTIVATIONS)
        if unknown:
            raise InputError(f"unknown activation(s) {sorted(unknown)}")
        if self.seed < 0:
            raise InputError("seed must be non-negative")
        object.__setattr__(self, "layer_widths", widths)
        object.__setattr__(self, "activations", acts)

    @property
    def depth(self) -> int:
        """Number of weight layers L (the last one produces logits)."""
        return len(self.layer_widths) - 1

    def activation(self, layer: int) -> str:
        return self.activations[layer - 1] if layer < self.depth else "identity"


@dataclass
class NetworkState:
    spec: NetworkSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        widths = self.spec.layer_widths
        if len(self.weights) != self.spec.depth or len(self.biases) != self.spec.depth:
            raise DimensionError("parameter count does not match spec depth")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (widths[l + 1], widths[l]) or b.shape != (widths[l + 1],):
                raise DimensionError(f"layer {l + 1} parameter shapes {w.shape}, {b.shape} do not match spec")

    @property
    def depth(self) -> int:
        return self.spec.depth

    def copy(self) -> "NetworkState":
        return NetworkState(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def equals(self, other: "NetworkState") -> bool:
        return self.spec == other.spec and all(
            np.array_equal(a, b) for a, b in zip(self.parameters(), other.parameters())
        )


@dataclass
class ForwardTrace:
    activations: list[np.ndarray]  # index 0 .. L

    @property
    def logits(self) -> np.ndarray:
        return self.activations[-1]


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    inputs: np.ndarray | None = field(default=None)


def init_network(spec: NetworkSpec) -> NetworkState:
    """Seeded uniform init with half-width sqrt(6 / fan_in); zero biases."""
    rng = np.random.default_rng(spec.seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return NetworkState(spec, weights, biases)


def _apply(name: str, z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) if name == "relu" else z


def forward(state: NetworkState, inputs, start_layer: int = 0) -> ForwardTrace:
    """Run the network, keeping every layer's post-activation batch.

    With ``start_layer > 0`` the inputs are taken to be the activation of
    that layer and only the remaining layers are evaluated; the returned
    trace then starts at ``start_layer``.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if not 0 <= start_layer <= state.depth:
        raise DimensionError(f"start layer {start_layer} outside [0, {state.depth}]")
    width = state.spec.layer_widths[start_layer]
    if x.ndim != 2 or x.shape[1] != width:
        raise DimensionError(f"expected {width} input columns, got shape {x.shape}")
    acts = [x]
    for l in range(start_layer + 1, state.depth + 1):
        z = acts[-1] @ state.weights[l - 1].T + state.biases[l - 1]
        acts.append(_apply(state.spec.activation(l), z))
    return ForwardTrace(acts)


def backward(
    state: NetworkState,
    trace: ForwardTrace,
    logit_gradients,
    extra_activation_gradients: Sequence[tuple[int, np.ndarray]] = (),
) -> Gradients:
    """Reverse-mode gradients of the scalar whose cotangents are supplied.

    ``logit_gradients`` is the derivative with respect to the logits and each
    ``(layer, g)`` in ``extra_activation_gradients`` is added to the
    derivative with respect to that layer's post-activation on the way down.
    The trace must be a full trace (starting at the input).
    """
    L = state.depth
    if len(trace.activations) != L + 1:
        raise DimensionError("backward needs a full forward trace")
    extras: dict[int, np.ndarray] = {}
    for layer, g in extra_activation_gradients:
        if not 0 <= layer <= L:
            raise IndexError(f"activation gradient layer {layer} outside [0, {L}]")
        g = np.asarray(g, dtype=np.float64)
        if g.shape != trace.activations[layer].shape:
            raise DimensionError(f"gradient for layer {layer} has shape {g.shape}")
        extras[layer] = extras[layer] + g if layer in extras else g
    g = np.asarray(logit_gradients, dtype=np.float64)
    if g.shape != trace.logits.shape:
        raise DimensionError(f"logit gradient shape {g.shape} != logits {trace.logits.shape}")

    grad_w: list[np.ndarray] = [None] * L  # type: ignore[list-item]
    grad_b: list[np.ndarray] = [None] * L  # type: ignore[list-item]
    for l in range(L, 0, -1):
        if l in extras:
            g = g + extras[l]
        if state.spec.activation(l) == "relu":
            g = g * (trace.activations[l] > 0)
        grad_w[l - 1] = g.T @ trace.activations[l - 1]
        grad_b[l - 1] = g.sum(axis=0)
        g = g @ state.weights[l - 1]
    if 0 in extras:
        g = g + extras[0]
    return Gradients(grad_w, grad_b, g)


def backprop_to_layer(state: NetworkState, trace: ForwardTrace, logit_gradients, layer: int) -> np.ndarray:
    """Derivative of the implicit scalar with respect to one layer's post-activation."""
    L = state.depth
    if not 0 <= layer <= L:
        raise IndexError(f"layer {layer} outside [0, {L}]")
    g = np.asarray(logit_gradients, dtype=np.float64)
    for l in range(L, layer, -1):
        if state.spec.activation(l) == "relu":
            g = g * (trace.activations[l] > 0)
        g = g @ state.weights[l - 1]
    return g


def softmax_probs(logits, temperature: float = 1.0) -> np.ndarray:
    if not temperature > 0:
        raise InputError(f"temperature must be positive, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits, temperature: float = 1.0) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def predict(state: NetworkState, inputs) -> np.ndarray:
    return np.argmax(forward(state, inputs).logits, axis=1)


def accuracy(state: NetworkState, inputs, labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        return float("nan")
    return float(np.mean(predict(state, inputs) == labels))


# -- checkpoints ----------------------------------------------------------------


def _encode_spec(spec: NetworkSpec) -> bytes:
    widths = spec.layer_widths
    codes = bytes(ACTIVATIONS.index(a) for a in spec.activations)
    return (
        struct.pack("<I", len(widths))
        + struct.pack(f"<{len(widths)}I", *widths)
        + codes
        + struct.pack("<Q", spec.seed)
    )


def checkpoint_bytes(state: NetworkState) -> bytes:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(_encode_spec(state.spec))
    for w, b in zip(state.weights, state.biases):
        write_matrix(buf, w)
        write_matrix(buf, b[None, :])
    return buf.getvalue()


def save_checkpoint(state: NetworkState, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(state))


def _read_exact(src: io.BytesIO, n: int, what: str) -> bytes:
    data = src.read(n)
    if len(data) < n:
        raise FormatError(f"truncated checkpoint while reading {what} at byte {src.tell()}")
    return data


def load_checkpoint(path, expected_spec: NetworkSpec | None = None) -> NetworkState:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read checkpoint {path}: {exc}") from exc
    src = io.BytesIO(raw)
    if _read_exact(src, 4, "magic") != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    (count,) = struct.unpack("<I", _read_exact(src, 4, "width count"))
    if count < 2 or count > 10_000:
        raise FormatError(f"{path}: implausible layer count {count}")
    widths = struct.unpack(f"<{count}I", _read_exact(src, 4 * count, "widths"))
    codes = _read_exact(src, count - 2, "activations")
    if any(c >= len(ACTIVATIONS) for c in codes):
        raise FormatError(f"{path}: unknown activation code")
    (seed,) = struct.unpack("<Q", _read_exact(src, 8, "seed"))
    spec = NetworkSpec(widths, tuple(ACTIVATIONS[c] for c in codes), seed)
    if expected_spec is not None and spec != expected_spec:
        raise InputError(f"{path}: checkpoint spec {spec} does not match expected {expected_spec}")
    weights, biases = [], []
    for _ in range(spec.depth):
        weights.append(read_matrix(src))
        biases.append(read_matrix(src)[0])
    if src.read(1):
        raise FormatError(f"{path}: trailing bytes after last layer")
    return NetworkState(spec, weights, biases)
