"""JSON run-configuration files for the command-line pipeline.

Relative paths are resolved against the directory of the config file, and
unknown keys are rejected at every level.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import FormatError, InputError
from .trainer import DistillConfig

_TOP_KEYS = {"dataset", "subtask", "teacher", "student", "split", "distill", "output_dir"}
_DATASET_KEYS = {"path", "format", "labels_path", "class_names"}
_SUBTASK_KEYS = {"path", "name", "class_ids", "class_names"}
_TEACHER_KEYS = {"checkpoint", "hidden_widths", "epochs", "learning_rate", "momentum", "batch_size", "seed"}
_STUDENT_KEYS = {"hidden_widths"}
_SPLIT_KEYS = {"seed", "fractions"}


def _check_keys(section: str, doc, allowed: set) -> dict:
    if not isinstance(doc, dict):
        raise InputError(f"config section {section!r} must be an object")
    unknown = set(doc) - allowed
    if unknown:
        raise InputError(f"unknown keys in {section!r}: {sorted(unknown)}")
    return doc


@dataclass
class TeacherSettings:
    checkpoint: Path
    hidden_widths: tuple[int, ...] = (64, 64, 64, 64, 64)
    epochs: int = 60
    learning_rate: float = 0.02
    momentum: float = 0.9
    batch_size: int = 32
    seed: int = 0


@dataclass
class RunConfigFile:
    dataset_path: Path
    dataset_format: str = "idx_pair"
    labels_path: Path | None = None
    class_names: list[str] | None = None
    subtask: dict = field(default_factory=dict)  # {"path"} or inline {"class_ids", "name"}
    teacher: TeacherSettings | None = None
    student_hidden_widths: tuple[int, ...] = (8, 8, 8, 8)
    split_seed: int = 0
    split_fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    distill: DistillConfig = field(default_factory=DistillConfig)
    output_dir: Path = Path("runs")
    source: Path | None = field(default=None, compare=False)

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | str = ".") -> "RunConfigFile":
        base = Path(base_dir)

        def resolve(p):
            if p is None:
                return None
            return Path(os.path.normpath(p if Path(p).is_absolute() else base / p))

        _check_keys("config", doc, _TOP_KEYS)
        if "dataset" not in doc:
            raise InputError("config needs a 'dataset' section")
        ds = _check_keys("dataset", doc["dataset"], _DATASET_KEYS)
        if "path" not in ds:
            raise InputError("dataset section needs 'path'")
        sub = dict(_check_keys("subtask", doc.get("subtask", {}), _SUBTASK_KEYS))
        if "path" in sub:
            sub["path"] = str(resolve(sub["path"]))
        teacher = None
        if "teacher" in doc:
            t = _check_keys("teacher", doc["teacher"], _TEACHER_KEYS)
            if "checkpoint" not in t:
                raise InputError("teacher section needs 'checkpoint'")
            t = dict(t)
            t["checkpoint"] = resolve(t["checkpoint"])
            if "hidden_widths" in t:
                t["hidden_widths"] = tuple(int(w) for w in t["hidden_widths"])
            teacher = TeacherSettings(**t)
        student = _check_keys("student", doc.get("student", {}), _STUDENT_KEYS)
        split = _check_keys("split", doc.get("split", {}), _SPLIT_KEYS)
        fractions = tuple(float(f) for f in split.get("fractions", (0.6, 0.2, 0.2)))
        if len(fractions) != 3:
            raise InputError("split fractions must have three entries")
        return cls(
            dataset_path=resolve(ds["path"]),
            dataset_format=ds.get("format", "idx_pair"),
            labels_path=resolve(ds.get("labels_path")),
            class_names=ds.get("class_names"),
            subtask=sub,
            teacher=teacher,
            student_hidden_widths=tuple(int(w) for w in student.get("hidden_widths", (8, 8, 8, 8))),
            split_seed=int(split.get("seed", 0)),
            split_fractions=fractions,
            distill=DistillConfig.from_dict(doc.get("distill", {})),
            output_dir=resolve(doc.get("output_dir", "runs")),
        )

    def to_dict(self) -> dict:
        """Fully resolved form; parses back to an equal object."""
        out = {
            "dataset": {"path": str(self.dataset_path), "format": self.dataset_format},
            "subtask": dict(self.subtask),
            "student": {"hidden_widths": list(self.student_hidden_widths)},
            "split": {"seed": self.split_seed, "fractions": list(self.split_fractions)},
            "distill": self.distill.to_dict(),
            "output_dir": str(self.output_dir),
        }
        if self.labels_path is not None:
            out["dataset"]["labels_path"] = str(self.labels_path)
        if self.class_names is not None:
            out["dataset"]["class_names"] = list(self.class_names)
        if self.teacher is not None:
            t = self.teacher
            out["teacher"] = {
                "checkpoint": str(t.checkpoint),
                "hidden_widths": list(t.hidden_widths),
                "epochs": t.epochs,
                "learning_rate": t.learning_rate,
                "momentum": t.momentum,
                "batch_size": t.batch_size,
                "seed": t.seed,
            }
        return out

    def with_distill(self, **changes) -> "RunConfigFile":
        return replace(self, distill=replace(self.distill, **changes))


def load_config(path) -> RunConfigFile:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    cfg = RunConfigFile.from_dict(doc, path.parent)
    cfg.source = path
    return cfg


def dump_config(cfg: RunConfigFile, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return path
