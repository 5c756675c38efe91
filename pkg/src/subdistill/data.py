"""Dataset loading, subtask filtering, and stratified splitting."""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError
from .subspace import SubtaskSpec

_IDX_UBYTE = 0x08


@dataclass
class LabeledDataset:
    inputs: np.ndarray  # n x d0
    labels: np.ndarray  # int, dense in [0, C)
    class_names: list[str]
    source_digest: str
    # original class id of each dense label, and original row of each sample
    class_map: tuple[int, ...] = ()
    source_rows: np.ndarray | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or len(self.inputs) != len(self.labels) or len(self.labels) == 0:
            raise InputError("dataset needs n >= 1 rows with one label each")
        if not self.class_map:
            self.class_map = tuple(range(len(self.class_names)))
        if self.source_rows is None:
            self.source_rows = np.arange(len(self.labels))

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def subset(self, rows) -> "LabeledDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return LabeledDataset(
            self.inputs[rows], self.labels[rows], self.class_names, self.source_digest, self.class_map, self.source_rows[rows]
        )

    def original_label(self, dense_label: int) -> int:
        return self.class_map[dense_label]


@dataclass
class SplitPlan:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    full_train: np.ndarray
    training_fraction: float
    seed: int


def _digest(*blobs: bytes) -> str:
    h = hashlib.sha256()
    for b in blobs:
        h.update(b)
    return h.hexdigest()


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def _dense_names(labels: np.ndarray, names: list[str] | None) -> list[str]:
    n_classes = int(labels.max()) + 1
    if names is None:
        return [str(i) for i in range(n_classes)]
    if len(names) < n_classes:
        raise InputError(f"{len(names)} class names for {n_classes} classes")
    return list(names)


def load_csv(path, class_names: list[str] | None = None) -> LabeledDataset:
    raw = _read_bytes(path)
    reader = csv.reader(raw.decode("utf-8").splitlines())
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError(f"{path}: empty file, expected a header row") from None
    if len(header) < 2:
        raise FormatError(f"{path}: line 1: header needs at least one feature and a label column")
    rows, labels = [], []
    for lineno, record in enumerate(reader, start=2):
        if not record:
            continue
        if len(record) != len(header):
            raise FormatError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(record)}")
        try:
            rows.append([float(v) for v in record[:-1]])
            label = int(record[-1])
        except ValueError as exc:
            raise FormatError(f"{path}: line {lineno}: {exc}") from None
        if label < 0:
            raise FormatError(f"{path}: line {lineno}: label {label} out of range")
        labels.append(label)
    if not rows:
        raise FormatError(f"{path}: no data rows")
    labels_arr = np.asarray(labels)
    if class_names is not None and labels_arr.max() >= len(class_names):
        bad = int(np.argmax(labels_arr >= len(class_names)))
        raise FormatError(f"{path}: line {bad + 2}: label {labels_arr[bad]} out of range")
    return LabeledDataset(np.asarray(rows), labels_arr, _dense_names(labels_arr, class_names), _digest(raw))


def _parse_idx(raw: bytes, path) -> np.ndarray:
    if len(raw) < 4:
        raise FormatError(f"{path}: byte 0: truncated IDX magic")
    zero, dtype, ndim = raw[0:2], raw[2], raw[3]
    if zero != b"\x00\x00":
        raise FormatError(f"{path}: byte 0: bad IDX magic {raw[:4].hex()}")
    if dtype != _IDX_UBYTE:
        raise FormatError(f"{path}: byte 2: unsupported IDX element type 0x{dtype:02x}")
    if ndim < 1:
        raise FormatError(f"{path}: byte 3: IDX needs at least one dimension")
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise FormatError(f"{path}: byte {len(raw)}: truncated IDX dimension table")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    count = int(np.prod(dims))
    if len(raw) != head + count:
        raise FormatError(f"{path}: byte {head}: expected {count} data bytes, found {len(raw) - head}")
    return np.frombuffer(raw, dtype=np.uint8, offset=head).reshape(dims)


def _labels_path_for(images_path: Path) -> Path:
    name = images_path.name
    if "images" not in name:
        raise InputError(f"cannot infer labels file for {images_path}; pass labels_path")
    return images_path.with_name(name.replace("images", "labels").replace("idx3", "idx1"))


def load_idx_pair(images_path, labels_path=None, class_names: list[str] | None = None) -> LabeledDataset:
    images_path = Path(images_path)
    labels_path = Path(labels_path) if labels_path else _labels_path_for(images_path)
    img_raw = _read_bytes(images_path)
    lab_raw = _read_bytes(labels_path)
    images = _parse_idx(img_raw, images_path)
    labels = _parse_idx(lab_raw, labels_path)
    if labels.ndim != 1:
        raise FormatError(f"{labels_path}: byte 3: labels must be 1-D, got {labels.ndim} dims")
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images_path}: {images.shape[0]} images but {labels.shape[0]} labels")
    labels = labels.astype(np.int64)
    if class_names is not None and labels.max() >= len(class_names):
        bad = int(np.argmax(labels >= len(class_names)))
        raise FormatError(f"{labels_path}: byte {4 + 4 + bad}: label {labels[bad]} out of range")
    inputs = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return LabeledDataset(inputs, labels, _dense_names(labels, class_names), _digest(img_raw, lab_raw))


def load_dataset(path, format: str = "csv_labeled", labels_path=None, class_names=None) -> LabeledDataset:
    if format == "csv_labeled":
        return load_csv(path, class_names)
    if format == "idx_pair":
        return load_idx_pair(path, labels_path, class_names)
    raise InputError(f"unknown dataset format {format!r}")


def write_idx(path, array) -> None:
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise InputError("only unsigned-byte IDX files are written")
    head = bytes([0, 0, _IDX_UBYTE, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(head + np.ascontiguousarray(arr).tobytes())


# -- subtasks -------------------------------------------------------------------------


def load_subtask(path) -> tuple[SubtaskSpec, list[str] | None]:
    try:
        doc = json.loads(_read_bytes(path))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    unknown = set(doc) - {"name", "class_ids", "class_names"}
    if unknown:
        raise InputError(f"{path}: unknown subtask keys {sorted(unknown)}")
    if "class_ids" not in doc:
        raise InputError(f"{path}: subtask needs class_ids")
    return SubtaskSpec(tuple(doc["class_ids"]), doc.get("name", Path(path).stem)), doc.get("class_names")


def apply_subtask(dataset: LabeledDataset, subtask: SubtaskSpec) -> LabeledDataset:
    """Keep rows of the subtask classes, relabelled 0..k-1 in subtask order."""
    missing = [c for c in subtask.class_ids if c >= dataset.n_classes]
    if missing:
        raise InputError(f"subtask {subtask.name!r}: unknown class ids {missing}")
    relabel = np.full(dataset.n_classes, -1, dtype=np.int64)
    for new, old in enumerate(subtask.class_ids):
        relabel[old] = new
    rows = np.flatnonzero(relabel[dataset.labels] >= 0)
    if rows.size == 0:
        raise InputError(f"subtask {subtask.name!r} selects no rows")
    return LabeledDataset(
        dataset.inputs[rows],
        relabel[dataset.labels[rows]],
        [dataset.class_names[c] for c in subtask.class_ids],
        dataset.source_digest,
        tuple(dataset.class_map[c] for c in subtask.class_ids),
        dataset.source_rows[rows],
    )


def make_split(dataset: LabeledDataset, fractions=(0.6, 0.2, 0.2), training_fraction: float = 1.0, seed: int = 0) -> SplitPlan:
    """Seeded stratified train/val/test split.

    Each class is shuffled by a generator keyed on (seed, original class id),
    so a split of a subtask dataset selects the same samples as the
    corresponding rows of a split of the full dataset.  The train list is
    interleaved across classes by within-class rank, and the training
    fraction takes a prefix of it: smaller fractions are nested in larger
    ones and stay close to stratified.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise InputError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    if not 0 < training_fraction <= 1:
        raise InputError(f"training fraction must lie in (0, 1], got {training_fraction}")
    needed = sum(1 for f in fractions if f > 0)
    train, val, test, keys = [], [], [], []
    for label in range(dataset.n_classes):
        idx = np.flatnonzero(dataset.labels == label)
        if idx.size == 0:
            continue
        if idx.size < needed:
            raise InputError(f"class {dataset.class_names[label]!r} has {idx.size} samples, fewer than {needed} strata")
        rng = np.random.default_rng([seed, dataset.class_map[label]])
        # order by original row so the permutation does not depend on filtering
        idx = idx[np.argsort(dataset.source_rows[idx], kind="stable")]
        idx = idx[rng.permutation(idx.size)]
        n_train = int(round(fractions[0] * idx.size))
        n_val = int(round(fractions[1] * idx.size))
        if fractions[0] > 0:
            n_train = max(n_train, 1)
        n_val = min(n_val, idx.size - n_train)
        train.append(idx[:n_train])
        val.append(idx[n_train : n_train + n_val])
        test.append(idx[n_train + n_val :])
        keys.append(np.column_stack([(np.arange(n_train) + 0.5) / max(n_train, 1), np.full(n_train, dataset.class_map[label])]))
    full_train = np.concatenate(train)
    k = np.concatenate(keys)
    full_train = full_train[np.lexsort((k[:, 1], k[:, 0]))]
    n_keep = max(1, int(round(training_fraction * full_train.size)))
    return SplitPlan(
        train=full_train[:n_keep],
        val=np.sort(np.concatenate(val)),
        test=np.sort(np.concatenate(test)),
        full_train=full_train,
        training_fraction=training_fraction,
        seed=seed,
    )


def export_digits(out_dir) -> tuple[Path, Path]:
    """Write scikit-learn's bundled 8x8 handwritten digits as an IDX pair."""
    from sklearn.datasets import load_digits

    digits = load_digits()
    images = np.clip(np.round(digits.images * 255.0 / 16.0), 0, 255).astype(np.uint8)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    img_path, lab_path = out / "digits-images-idx3-ubyte", out / "digits-labels-idx1-ubyte"
    write_idx(img_path, images)
    write_idx(lab_path, digits.target.astype(np.uint8))
    return img_path, lab_path
