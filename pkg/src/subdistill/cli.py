"""Command-line entry point: ``subdistill <subcommand> ...``.

Every subcommand exits 0 on success.  Failures print one JSON object to
stderr and exit with 2 (bad input), 3 (degenerate math), 4 (divergence) or
5 (runs that cannot be aggregated).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfigFile, dump_config, load_config
from .data import LabeledDataset, export_digits, load_dataset, load_subtask, make_split
from .errors import AggregationError, DivergenceError, InputError, SubDistillError
from .model import NetworkSpec, accuracy, forward, load_checkpoint, save_checkpoint
from .subspace import SubtaskSpec, save_subspace
from .trainer import (
    ABLATIONS,
    ALPHA_GRID,
    DistillConfig,
    TaskData,
    alpha_sweep,
    compute_subspaces,
    default_threads,
    distill,
    league_table_csv,
    prepare_task,
    run_ablation_suite,
    standard_error,
    train_teacher,
    write_run_dir,
)

log = logging.getLogger("subdistill")

RUN_SCHEMA = "subdistill-run/1"


# -- shared loading ---------------------------------------------------------------------


def _dataset(cfg: RunConfigFile) -> LabeledDataset:
    if not Path(cfg.dataset_path).exists():
        raise InputError(f"dataset not found: {cfg.dataset_path}")
    return load_dataset(cfg.dataset_path, cfg.dataset_format, cfg.labels_path, cfg.class_names)


def _subtask(cfg: RunConfigFile, n_classes: int) -> SubtaskSpec:
    if "path" in cfg.subtask:
        spec, _ = load_subtask(cfg.subtask["path"])
    elif "class_ids" in cfg.subtask:
        spec = SubtaskSpec(tuple(cfg.subtask["class_ids"]), cfg.subtask.get("name", "subtask"))
    else:
        raise InputError("config needs a subtask (a 'path' or inline 'class_ids')")
    spec.validate_for(n_classes)
    return spec


def _teacher_spec(cfg: RunConfigFile, ds: LabeledDataset) -> NetworkSpec:
    if cfg.teacher is None:
        raise InputError("config needs a 'teacher' section")
    t = cfg.teacher
    return NetworkSpec((ds.inputs.shape[1],) + tuple(t.hidden_widths) + (ds.n_classes,), seed=t.seed)


def _load_teacher(cfg: RunConfigFile, ds: LabeledDataset):
    spec = _teacher_spec(cfg, ds)
    path = Path(cfg.teacher.checkpoint)
    if not path.exists():
        raise InputError(f"teacher checkpoint not found: {path}")
    return load_checkpoint(path, expected_spec=spec)


def _student_spec(cfg: RunConfigFile, ds: LabeledDataset, subtask: SubtaskSpec, seed: int) -> NetworkSpec:
    return NetworkSpec((ds.inputs.shape[1],) + tuple(cfg.student_hidden_widths) + (len(subtask.class_ids),), seed=seed)


def _task(cfg: RunConfigFile, ds: LabeledDataset, subtask: SubtaskSpec) -> TaskData:
    return prepare_task(ds, subtask, cfg.distill.training_fraction, cfg.split_seed, cfg.split_fractions)


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True, default=_jsonable))


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(type(obj).__name__)


def _parse_int_list(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text or text in ("none", "∅"):
        return ()
    try:
        return tuple(int(p) for p in text.split(","))
    except ValueError:
        raise InputError(f"expected a comma-separated list of integers, got {text!r}") from None


# -- subcommands ------------------------------------------------------------------------


def cmd_export_digits(args) -> int:
    img, lab = export_digits(args.out_dir)
    _emit({"images": img, "labels": lab})
    return 0


def cmd_train_teacher(args) -> int:
    cfg = load_config(args.config)
    ds = _dataset(cfg)
    spec = _teacher_spec(cfg, ds)
    t = cfg.teacher
    plan = make_split(ds, cfg.split_fractions, 1.0, cfg.split_seed)
    teacher = train_teacher(
        spec, ds.inputs[plan.train], ds.labels[plan.train], t.epochs, t.learning_rate, t.seed, t.batch_size, t.momentum
    )
    path = Path(t.checkpoint)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(teacher, path)
    dump_config(cfg, path.with_name(path.stem + ".config.json"))
    summary = {
        "checkpoint": path,
        "train_accuracy": accuracy(teacher, ds.inputs[plan.train], ds.labels[plan.train]),
        "val_accuracy": accuracy(teacher, ds.inputs[plan.val], ds.labels[plan.val]),
        "test_accuracy": accuracy(teacher, ds.inputs[plan.test], ds.labels[plan.test]),
    }
    if cfg.subtask:
        subtask = _subtask(cfg, ds.n_classes)
        task = _task(cfg, ds, subtask)
        ids = np.asarray(subtask.class_ids)
        pred = np.argmax(forward(teacher, task.x_val).logits[:, ids], axis=1)
        summary["subtask_val_accuracy"] = float(np.mean(pred == task.y_val))
    _emit(summary)
    return 0


def cmd_extract_subspaces(args) -> int:
    cfg = load_config(args.config)
    ds = _dataset(cfg)
    subtask = _subtask(cfg, ds.n_classes)
    teacher = _load_teacher(cfg, ds)
    task = _task(cfg, ds, subtask)
    ablations = {"prca": (), "pca": ("pca_subspace",), "random": ("random_subspace",)}[args.method]
    dcfg = replace(cfg.distill, method="subdistill", ablations=ablations)
    subs = compute_subspaces(teacher, task.x_train, _student_spec(cfg, ds, subtask, dcfg.seed), dcfg, subtask)
    out = Path(args.out or Path(cfg.output_dir) / "subspaces")
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for s_layer, sub in sorted(subs.items()):
        save_subspace(sub, out / f"subspace_l{s_layer}.sdsu")
        eig = [] if sub.eigenvalues is None else list(np.asarray(sub.eigenvalues)[: args.top])
        rows.append({"student_layer": s_layer, "teacher_layer": sub.layer_index, "k": sub.k, "method": sub.method, "beta": sub.beta_used, "top_eigenvalues": eig})
    dump_config(cfg, out / "config.resolved.json")
    _emit({"out_dir": out, "layers": rows})
    return 0


def _distill_config_from_args(cfg: RunConfigFile, args) -> DistillConfig:
    changes = {}
    if args.mode:
        changes["training_mode"] = args.mode
    if args.method:
        changes["method"] = args.method
    if args.layers is not None:
        changes["layers"] = _parse_int_list(args.layers)
    if args.alpha is not None:
        changes["alpha"] = args.alpha
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.epochs is not None:
        changes["epochs"] = args.epochs
    if args.ablation:
        changes["ablations"] = tuple(args.ablation)
    if args.training_fraction is not None:
        changes["training_fraction"] = args.training_fraction
    return replace(cfg.distill, **changes)


def cmd_distill(args) -> int:
    cfg = load_config(args.config)
    cfg = replace(cfg, distill=_distill_config_from_args(cfg, args))
    dcfg = cfg.distill
    ds = _dataset(cfg)
    subtask = _subtask(cfg, ds.n_classes)
    teacher = _load_teacher(cfg, ds)
    task = _task(cfg, ds, subtask)
    sspec = _student_spec(cfg, ds, subtask, dcfg.seed)
    out = Path(args.out or Path(cfg.output_dir) / f"{dcfg.label()}-seed{dcfg.seed}")
    extra = {"schema": RUN_SCHEMA, "subtask": list(subtask.class_ids), "student_widths": list(sspec.layer_widths)}
    if args.alpha_sweep:
        subs = compute_subspaces(teacher, task.x_train, sspec, dcfg, subtask)
        best, records = alpha_sweep(teacher, sspec, dcfg, task, ALPHA_GRID, subs)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["alpha", "status", "val_accuracy", "test_accuracy", "selected"])
        for a, rec in zip(ALPHA_GRID, records):
            w.writerow([repr(a), rec.status, repr(rec.val_accuracy), repr(rec.test_accuracy), int(a == best)])
            sub_dir = out / f"alpha_{a:g}"
            write_run_dir(rec, sub_dir, {**extra, "alpha_sweep": True}, args.deterministic)
            dump_config(replace(cfg, distill=rec.config), sub_dir / "config.resolved.json")
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.csv").write_text(buf.getvalue())
        dump_config(cfg, out / "config.resolved.json")
        chosen = records[ALPHA_GRID.index(best)]
        _emit({"out_dir": out, "selected_alpha": best, "val_accuracy": chosen.val_accuracy, "test_accuracy": chosen.test_accuracy})
        return 0
    record = distill(teacher, sspec, dcfg, task)
    write_run_dir(record, out, extra, args.deterministic)
    dump_config(cfg, out / "config.resolved.json")
    _emit({"out_dir": out, "label": dcfg.label(), "val_accuracy": record.val_accuracy, "test_accuracy": record.test_accuracy})
    return 0


def cmd_suite(args) -> int:
    cfg = load_config(args.config)
    if args.epochs is not None:
        cfg = cfg.with_distill(epochs=args.epochs)
    ds = _dataset(cfg)
    subtask = _subtask(cfg, ds.n_classes)
    teacher = _load_teacher(cfg, ds)
    task = _task(cfg, ds, subtask)
    seeds = _parse_int_list(args.seeds)
    ablations = tuple(args.ablation) if args.ablation is not None else ABLATIONS
    subsets = [_parse_int_list(s) for s in args.layer_subsets.split(";")] if args.layer_subsets else []
    cells = run_ablation_suite(
        teacher, _student_spec(cfg, ds, subtask, seeds[0]), cfg.distill, task, ablations, subsets, seeds, args.threads
    )
    out = Path(args.out or Path(cfg.output_dir) / "suite")
    out.mkdir(parents=True, exist_ok=True)
    (out / "league.csv").write_text(league_table_csv(cells))
    from .plotting import accuracy_bars

    accuracy_bars([c.name for c in cells], [c.mean for c in cells], [c.stderr for c in cells], out / "league.svg", args.deterministic)
    dump_config(cfg, out / "config.resolved.json")
    _emit({"out_dir": out, "cells": {c.name: {"mean": c.mean, "std_error": c.stderr} for c in cells}})
    return 0


def cmd_band(args) -> int:
    from .synth import BandConfig, run_band_experiment

    doc = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise InputError(f"{args.config}: line {exc.lineno}: {exc.msg}") from None
    if args.seeds:
        doc["seeds"] = list(_parse_int_list(args.seeds))
    bcfg = BandConfig.from_dict(doc)
    out = Path(args.out)
    report = run_band_experiment(bcfg, out, args.deterministic)
    (out / "config.resolved.json").write_text(json.dumps(bcfg.to_dict(), indent=2, sort_keys=True) + "\n")
    _emit(
        {
            "out_dir": out,
            "score_wins": report.score_wins,
            "mass_wins": report.mass_wins,
            "seeds": len(report.results),
        }
    )
    return 0


def cmd_explain(args) -> int:
    from .analysis import lrp_attribute, patch_correlation
    from .plotting import patch_scatter

    cfg = load_config(args.config)
    ds = _dataset(cfg)
    subtask = _subtask(cfg, ds.n_classes)
    teacher = _load_teacher(cfg, ds)
    task = _task(cfg, ds, subtask)
    run = Path(args.run)
    if not (run / "student.sdck").exists():
        raise InputError(f"no student checkpoint in {run}")
    student = load_checkpoint(run / "student.sdck")
    side = int(round(math.sqrt(ds.inputs.shape[1])))
    shape = (side, side) if side * side == ds.inputs.shape[1] else None
    if shape is None:
        raise InputError("explanations need square image inputs")
    n = min(args.samples, len(task.x_val))
    t_maps, s_maps = [], []
    for i in range(n):
        dense = int(task.y_val[i])
        t_maps.append(lrp_attribute(teacher, task.x_val[i], subtask.class_ids[dense], shape=shape))
        s_maps.append(lrp_attribute(student, task.x_val[i], dense, shape=shape))
    r, points = patch_correlation(t_maps, s_maps, args.patch_size)
    out = Path(args.out or run)
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["teacher_relevance", "student_relevance"])
    for a, b in points:
        w.writerow([repr(float(a)), repr(float(b))])
    (out / "attribution.csv").write_text(buf.getvalue())
    (out / "attribution.json").write_text(json.dumps({"pearson": r, "samples": n, "patch_size": args.patch_size}, sort_keys=True) + "\n")
    patch_scatter(points, r, out / "attribution.svg", args.deterministic)
    _emit({"out_dir": out, "pearson": r, "samples": n})
    return 0


# -- report -----------------------------------------------------------------------------

_RUN_KEYS = {"schema", "config", "label", "status", "val_accuracy", "test_accuracy"}


def _read_run(path: Path) -> dict:
    f = path / "run.json"
    sweep = path / "sweep.csv"
    if not f.exists() and sweep.exists():
        # an alpha-sweep directory stands for its validation-selected run
        chosen = [r for r in csv.DictReader(io.StringIO(sweep.read_text())) if r.get("selected") == "1"]
        if len(chosen) != 1:
            raise AggregationError(f"{sweep}: expected exactly one selected alpha")
        return _read_run(path / f"alpha_{float(chosen[0]['alpha']):g}")
    if not f.exists():
        raise InputError(f"{path}: no run.json")
    try:
        doc = json.loads(f.read_text())
    except json.JSONDecodeError as exc:
        raise AggregationError(f"{f}: line {exc.lineno}: {exc.msg}") from None
    missing = _RUN_KEYS - set(doc)
    if missing:
        raise AggregationError(f"{f}: missing run fields {sorted(missing)}")
    if doc["schema"] != RUN_SCHEMA:
        raise AggregationError(f"{f}: schema {doc['schema']!r}, expected {RUN_SCHEMA!r}")
    doc["_dir"] = path
    return doc


def _fmt(v: float) -> str:
    return "" if not math.isfinite(v) else f"{v:.6f}"


def summarize_runs(runs: list[dict]) -> tuple[str, list[dict]]:
    """Group runs by label and training fraction; mean and standard error per group."""
    groups: dict[tuple, list[dict]] = {}
    for r in runs:
        frac = r["config"].get("training_fraction")
        groups.setdefault((r["label"], frac, r["config"].get("alpha")), []).append(r)
    rows = []
    for (label, frac, alpha), members in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1] or 0, kv[0][2] or 0)):
        ok = [m for m in members if m["status"] == "ok"]
        val = [float(m["val_accuracy"]) for m in ok]
        test = [float(m["test_accuracy"]) for m in ok]
        row = {
            "label": label,
            "training_fraction": frac,
            "alpha": alpha,
            "layers": tuple(members[0]["config"].get("layers", ())),
            "n": len(members),
            "n_ok": len(ok),
            "seeds": sorted(m["config"].get("seed") for m in members),
            "val_mean": float(np.mean(val)) if val else float("nan"),
            "val_se": standard_error(val),
            "test_mean": float(np.mean(test)) if test else float("nan"),
            "test_se": standard_error(test),
        }
        row["largest_se"] = max((v for v in (row["val_se"], row["test_se"]) if math.isfinite(v)), default=float("nan"))
        rows.append(row)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "training_fraction", "alpha", "n_runs", "n_ok", "seeds", "val_mean", "val_std_error", "test_mean", "test_std_error", "largest_std_error"])
    for row in rows:
        w.writerow(
            [
                row["label"], row["training_fraction"], row["alpha"], row["n"], row["n_ok"],
                " ".join(str(s) for s in row["seeds"]),
                _fmt(row["val_mean"]), _fmt(row["val_se"]), _fmt(row["test_mean"]), _fmt(row["test_se"]), _fmt(row["largest_se"]),
            ]
        )
    return buf.getvalue(), rows


def cmd_report(args) -> int:
    from .numerics import load_matrix
    from .plotting import accuracy_bars, kernel_panels, loss_curves, patch_scatter

    if not args.run_dirs:
        raise InputError("report needs at least one run directory")
    dirs = [Path(d) for d in args.run_dirs]
    for d in dirs:
        if not d.is_dir():
            raise InputError(f"not a directory: {d}")
    band_dirs = [d for d in dirs if (d / "kernels_teacher.sdmx").exists()]
    run_dirs = [d for d in dirs if d not in band_dirs]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if run_dirs:
        runs = [_read_run(d) for d in run_dirs]
        keys = {frozenset(r["config"]) for r in runs}
        if len(keys) > 1:
            raise AggregationError("run directories disagree on the config schema")
        text, rows = summarize_runs(runs)
        (out / "summary.csv").write_text(text)
        written.append("summary.csv")
        names = [f"{r['label']} f={r['training_fraction']:g}" for r in rows]
        accuracy_bars(names, [r["val_mean"] for r in rows], [r["val_se"] if math.isfinite(r["val_se"]) else 0.0 for r in rows], out / "accuracy.svg", args.deterministic)
        written.append("accuracy.svg")
        _line_plots(rows, out, args.deterministic, written)
        first = runs[0]
        losses = first["_dir"] / "losses.csv"
        if losses.exists():
            with losses.open() as fh:
                rows_csv = [{k: (float(v) if k not in ("stage",) and v != "" else v) for k, v in row.items()} for row in csv.DictReader(fh)]
            if rows_csv:
                loss_curves(rows_csv, out / "losses.svg", args.deterministic)
                written.append("losses.svg")
        for r in runs:
            attr = r["_dir"] / "attribution.csv"
            meta = r["_dir"] / "attribution.json"
            if attr.exists() and meta.exists():
                pts = np.loadtxt(attr, delimiter=",", skiprows=1, ndmin=2)
                name = f"attribution_{r['_dir'].name}.svg"
                patch_scatter(pts, json.loads(meta.read_text())["pearson"], out / name, args.deterministic)
                written.append(name)
    for d in band_dirs:
        kernels = {
            "teacher": load_matrix(d / "kernels_teacher.sdmx"),
            "(W,b)": load_matrix(d / "kernels_wb.sdmx"),
            "SubDistill": load_matrix(d / "kernels_subdistill.sdmx"),
        }
        n = kernels["teacher"].shape[0]
        name = f"kernels_{d.name}.svg"
        kernel_panels(kernels, (n // 3, 2 * n // 3), out / name, args.deterministic)
        written.append(name)
    _emit({"out_dir": out, "files": written})
    return 0


def _line_plots(rows, out: Path, deterministic: bool, written: list) -> None:
    """Accuracy vs number of bound layers and vs training fraction, where the runs vary them."""
    from .plotting import line_plot

    def n_bound(r):
        return 0 if r["label"] == "output_only" else len(r["layers"])

    by_layers = [r for r in rows if r["label"] == "output_only" or r["label"].split("+layers=")[0] == "subdistill"]
    if len({n_bound(r) for r in by_layers}) > 1:
        pts = sorted((n_bound(r), r["val_mean"], r["val_se"]) for r in by_layers)
        line_plot({"val accuracy": pts}, "bound layers", out / "accuracy_vs_layers.svg", deterministic)
        written.append("accuracy_vs_layers.svg")
    fracs = {}
    for r in rows:
        fracs.setdefault(r["label"], []).append((r["training_fraction"], r["val_mean"], r["val_se"]))
    series = {k: sorted(v) for k, v in fracs.items() if len(v) > 1}
    if series:
        line_plot(series, "training fraction", out / "accuracy_vs_fraction.svg", deterministic)
        written.append("accuracy_vs_fraction.svg")


# -- argument parsing -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--deterministic", action="store_true", help="omit wall-clock times and SVG dates so reruns are byte-identical")
    common.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")

    p = argparse.ArgumentParser(prog="subdistill", description="Subtask distillation onto task-relevant teacher subspaces.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("export-digits", parents=[common], help="write the bundled 8x8 digits dataset as an IDX pair")
    s.add_argument("out_dir", help="directory for digits-images-idx3-ubyte and digits-labels-idx1-ubyte")
    s.set_defaults(func=cmd_export_digits)

    s = sub.add_parser("train-teacher", parents=[common], help="train and checkpoint a teacher on all classes")
    s.add_argument("--config", required=True, help="JSON run config")
    s.set_defaults(func=cmd_train_teacher)

    s = sub.add_parser("extract-subspaces", parents=[common], help="compute and write subspace_l*.sdsu for every binding")
    s.add_argument("--config", required=True, help="JSON run config")
    s.add_argument("--method", choices=("prca", "pca", "random"), default="prca", help="subspace estimator (default prca)")
    s.add_argument("--top", type=int, default=5, help="eigenvalues printed per layer (default 5)")
    s.add_argument("--out", help="output directory (default <output_dir>/subspaces)")
    s.set_defaults(func=cmd_extract_subspaces)

    s = sub.add_parser("distill", parents=[common], help="run one distillation and write a run directory")
    s.add_argument("--config", required=True, help="JSON run config")
    s.add_argument("--mode", choices=("joint", "decoupled"), help="training mode")
    s.add_argument("--method", choices=("subdistill", "wb_baseline", "output_only"), help="loss family")
    s.add_argument("--layers", help="comma-separated binding positions, e.g. 1,2 (empty for none)")
    s.add_argument("--alpha", type=float, help="layer-loss weight")
    s.add_argument("--alpha-sweep", action="store_true", help="run the alpha grid and select by validation accuracy")
    s.add_argument("--ablation", action="append", choices=ABLATIONS, help="ablation switch (repeatable)")
    s.add_argument("--seed", type=int, help="run seed")
    s.add_argument("--epochs", type=int, help="epochs (per stage in decoupled mode)")
    s.add_argument("--training-fraction", type=float, help="fraction of the training split to use")
    s.add_argument("--out", help="run directory (default <output_dir>/<label>-seed<seed>)")
    s.set_defaults(func=cmd_distill)

    s = sub.add_parser("suite", parents=[common], help="ablation and layer-subset suite with a CSV league table")
    s.add_argument("--config", required=True, help="JSON run config (the base method)")
    s.add_argument("--seeds", default="0,1,2", help="comma-separated seeds (default 0,1,2)")
    s.add_argument("--ablation", action="append", choices=ABLATIONS, help="ablation to include (repeatable; default all)")
    s.add_argument(
        "--layer-subsets",
        default=";1;1,2;1,2,3;1,2,3,4",
        help="semicolon-separated layer subsets; an empty item is the empty set (default ;1;1,2;1,2,3;1,2,3,4)",
    )
    s.add_argument("--epochs", type=int, help="override the config's epochs")
    s.add_argument("--threads", type=int, default=None, help="worker threads (default $SUBDISTILL_THREADS or 1)")
    s.add_argument("--out", help="output directory (default <output_dir>/suite)")
    s.set_defaults(func=cmd_suite)

    s = sub.add_parser("band", parents=[common], help="synthetic 1-D manifold kernel experiment")
    s.add_argument("--config", help="JSON object of band-experiment settings")
    s.add_argument("--seeds", help="comma-separated seeds")
    s.add_argument("--out", required=True, help="report directory")
    s.set_defaults(func=cmd_band)

    s = sub.add_parser("explain", parents=[common], help="LRP patch correlation between teacher and a distilled student")
    s.add_argument("--config", required=True, help="JSON run config")
    s.add_argument("--run", required=True, help="run directory holding student.sdck")
    s.add_argument("--samples", type=int, default=50, help="validation samples to explain (default 50)")
    s.add_argument("--patch-size", type=int, default=2, help="patch edge length in pixels (default 2)")
    s.add_argument("--out", help="output directory (default the run directory)")
    s.set_defaults(func=cmd_explain)

    s = sub.add_parser("report", parents=[common], help="aggregate run directories into summary.csv and SVG plots")
    s.add_argument("run_dirs", nargs="*", help="run or band-report directories")
    s.add_argument("--out", required=True, help="report directory")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", None) is None and hasattr(args, "threads"):
        args.threads = default_threads()
    try:
        return args.func(args)
    except SubDistillError as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
        if isinstance(exc, DivergenceError):
            err["epoch"] = exc.epoch
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
