"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The desk-scale criteria share one teacher trained on the bundled 8x8 digits
with the settings in configs/desk.json.
"""

import json
import statistics
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from oracles import central_difference, finite_hessian, prca_random_search, rel_error
from subdistill.analysis import RelevanceMap, linear_cka, lrp_attribute, patch_correlation
from subdistill.cli import main
from subdistill.config import load_config
from subdistill.data import load_dataset, load_subtask
from subdistill.losses import (
    Adapter,
    LayerBinding,
    WbAdapter,
    orthogonality_penalty,
    output_kl,
    subdistill_layer_loss,
    wb_layer_loss,
)
from subdistill.model import NetworkSpec, backward, forward, init_network, load_checkpoint, softmax_probs
from subdistill.numerics import projector, qr_orthonormalize
from subdistill.subspace import (
    Subspace,
    SubtaskSpec,
    margin_delta,
    prca_objective_matrix,
    prca_subspace,
    random_subspace,
    response_vectors,
    trace_objective,
)
from subdistill.synth import BandConfig, run_band_experiment
from subdistill.trainer import DistillConfig, alpha_sweep, distill, prepare_task, run_ablation_suite

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
N_INSTANCES = 20


@pytest.fixture
def verdict(capsys):
    """Print one PASS/FAIL line outside pytest's capture, then assert."""

    def report(number: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return report


# -- desk-scale fixture -----------------------------------------------------------------


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    assert main(["export-digits", str(root / "data" / "digits")]) == 0
    doc = json.loads((CONFIGS / "desk.json").read_text())
    doc["dataset"]["path"] = str(root / "data" / "digits" / "digits-images-idx3-ubyte")
    doc["subtask"]["path"] = str(CONFIGS / "subtask_3589.json")
    doc["teacher"]["checkpoint"] = str(root / "data" / "teacher.sdck")
    doc["output_dir"] = str(root / "runs")
    cfg_path = root / "desk.json"
    cfg_path.write_text(json.dumps(doc))
    assert main(["train-teacher", "--config", str(cfg_path)]) == 0
    cfg = load_config(cfg_path)
    ds = load_dataset(cfg.dataset_path, cfg.dataset_format)
    subtask, _ = load_subtask(cfg.subtask["path"])
    teacher_spec = NetworkSpec((64,) + cfg.teacher.hidden_widths + (10,), seed=cfg.teacher.seed)
    teacher = load_checkpoint(cfg.teacher.checkpoint, expected_spec=teacher_spec)
    task = prepare_task(ds, subtask, cfg.distill.training_fraction, cfg.split_seed, cfg.split_fractions)
    student = NetworkSpec((64,) + cfg.student_hidden_widths + (len(subtask.class_ids),))
    return {"root": root, "config_path": cfg_path, "config": cfg, "teacher": teacher, "task": task, "student": student, "dataset": ds}


@pytest.fixture(scope="module")
def desk_suite(desk):
    """All desk runs over seeds 0, 1, 2 (criteria 8-10)."""
    start = time.perf_counter()
    teacher, task, student, base = desk["teacher"], desk["task"], desk["student"], desk["config"].distill
    seeds = (0, 1, 2)
    cells = {
        c.name: c
        for c in run_ablation_suite(teacher, student, base, task, ("no_centering",), ((), (1,), (1, 2)), seeds, threads=1)
    }
    output_only = [distill(teacher, student, replace(base, method="output_only", seed=s), task) for s in seeds]
    decoupled = [distill(teacher, student, replace(base, training_mode="decoupled", seed=s), task) for s in seeds]
    # the baseline gets its validation-selected alpha from the grid on every seed
    wb = []
    for s in seeds:
        best, records = alpha_sweep(teacher, student, replace(base, method="wb_baseline", seed=s), task)
        wb.append((best, next(r for r in records if r.config.alpha == best)))
    return {
        "cells": cells,
        "output_only": [r.val_accuracy for r in output_only],
        "decoupled": [r.val_accuracy for r in decoupled],
        "wb": [r.val_accuracy for _, r in wb],
        "wb_alphas": [a for a, _ in wb],
        "seconds": time.perf_counter() - start,
    }


# -- criteria ----------------------------------------------------------------------------


def test_criterion_01_gradient_exactness(verdict):
    start = time.perf_counter()
    worst = {}

    def note(name, err):
        worst[name] = max(worst.get(name, 0.0), err)

    for seed in range(N_INSTANCES):
        rng = np.random.default_rng(seed)
        net = init_network(NetworkSpec((4, 5, 4, 3), seed=seed))
        net.biases = [0.1 * rng.standard_normal(b.shape) for b in net.biases]
        x = rng.standard_normal((3, 4))
        g_out = rng.standard_normal((3, 3))
        grads = backward(net, forward(net, x), g_out)
        for i in range(net.depth):
            def f_w(w, i=i):
                n2 = net.copy()
                n2.weights[i] = w
                return float(np.sum(forward(n2, x).logits * g_out))

            note("network backward", rel_error(grads.weights[i], central_difference(f_w, net.weights[i])))

        sub = random_subspace(6, 3, seed, rng.standard_normal(6))
        v = qr_orthonormalize(rng.standard_normal((3, 3)))
        binding = LayerBinding(1, 1, sub, Adapter(v))
        t_acts, s_acts = rng.standard_normal((5, 6)), rng.standard_normal((5, 3))
        _, g_v, g_s = subdistill_layer_loss(binding, t_acts, s_acts)
        f_v = lambda m: subdistill_layer_loss(LayerBinding(1, 1, sub, Adapter(m)), t_acts, s_acts)[0]  # noqa: E731
        note("subspace loss / V", rel_error(g_v, central_difference(f_v, v)))
        note("subspace loss / a_s", rel_error(g_s, central_difference(lambda a: subdistill_layer_loss(binding, t_acts, a)[0], s_acts)))

        wb = WbAdapter(rng.standard_normal((6, 3)), rng.standard_normal(6))
        _, g_w, g_b, g_a = wb_layer_loss(wb, t_acts, s_acts)
        note("(W,b) loss / W", rel_error(g_w, central_difference(lambda w: wb_layer_loss(WbAdapter(w, wb.b), t_acts, s_acts)[0], wb.w)))
        note("(W,b) loss / b", rel_error(g_b, central_difference(lambda b: wb_layer_loss(WbAdapter(wb.w, b), t_acts, s_acts)[0], wb.b)))
        note("(W,b) loss / a_s", rel_error(g_a, central_difference(lambda a: wb_layer_loss(wb, t_acts, a)[0], s_acts)))

        zt, zs = rng.standard_normal((4, 5)), rng.standard_normal((4, 5))
        temp = float(rng.uniform(0.5, 4.0))
        _, g_kl = output_kl(zt, zs, temp)
        note("KL", rel_error(g_kl, central_difference(lambda z: output_kl(zt, z, temp)[0], zs)))

        m = rng.standard_normal((4, 2))
        _, g_pen = orthogonality_penalty(m, 1000.0)
        note("orthogonality penalty", rel_error(g_pen, central_difference(lambda q: orthogonality_penalty(q, 1000.0)[0], m)))

        spec = SubtaskSpec((0, 2))
        acts = forward(net, x).activations[2]
        resp = response_vectors(net, x, 2, spec).values
        for i in range(len(x)):
            def delta(a, i=i):
                return margin_delta(softmax_probs(forward(net, a[None, :], start_layer=2).logits)[0], spec)[0]

            note("response vectors", rel_error(resp[i], central_difference(delta, acts[i])))
    seconds = time.perf_counter() - start
    bad = {k: v for k, v in worst.items() if v > 1e-5}
    detail = f"{len(worst)} gradients x {N_INSTANCES} seeds, worst rel err {max(worst.values()):.1e} ({seconds:.1f}s)"
    verdict(1, not bad and seconds < 60, detail + (f"; over tolerance: {bad}" if bad else ""))


def test_criterion_02_prca_oracle(verdict):
    start = time.perf_counter()
    worst_gap = -np.inf
    for seed in range(10):
        rng = np.random.default_rng(seed)
        d = 2 + seed % 3
        a = rng.standard_normal((30, d)) * rng.uniform(0.5, 3.0, d)
        c = rng.standard_normal((30, d)) @ rng.standard_normal((d, d))
        sub = prca_subspace(a, c, 1)
        m = prca_objective_matrix(a - a.mean(axis=0), c, sub.beta_used)
        best = prca_random_search(m, 1_000_000, rng)
        worst_gap = max(worst_gap, best - trace_objective(sub.u, m))
    a = np.array([[2.0, 1.0], [-2.0, 1.0], [2.0, -1.0], [-2.0, -1.0]])
    c = np.array([[0.0, 1.0], [0.0, -1.0], [0.0, -1.0], [0.0, 1.0]])
    e2 = np.array_equal(prca_subspace(a, c, 1).u[:, 0], [0.0, 1.0])
    seconds = time.perf_counter() - start
    ok = worst_gap <= 1e-6 and e2 and seconds < 60
    verdict(2, ok, f"random search beats closed form by at most {worst_gap:.2e} over 10 seeds; worked example picks e2: {e2} ({seconds:.1f}s)")


def test_criterion_03_zero_loss_means_cka_one(verdict):
    worst = 0.0
    worst_loss = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        d, k, n = int(rng.integers(3, 9)), int(rng.integers(1, 4)), int(rng.integers(5, 30))
        k = min(k, d)
        t_acts = rng.standard_normal((n, d)) * rng.uniform(0.1, 5.0) + rng.standard_normal(d)
        u = qr_orthonormalize(rng.standard_normal((d, k)))
        sub = Subspace(u, t_acts.mean(axis=0), 1, 1.0)
        v = qr_orthonormalize(rng.standard_normal((k, k)))
        s_acts = sub.project(t_acts) @ v + rng.standard_normal(k) * 3.0
        loss, _, _ = subdistill_layer_loss(LayerBinding(1, 1, sub, Adapter(v)), t_acts, s_acts)
        worst_loss = max(worst_loss, loss)
        worst = max(worst, abs(linear_cka(s_acts, t_acts @ u) - 1.0))
    verdict(3, worst <= 1e-8 and worst_loss <= 1e-20, f"100 zero-loss constructions (max loss {worst_loss:.1e}): max |CKA - 1| = {worst:.1e}")


def test_criterion_04_curvature(verdict):
    rng = np.random.default_rng(0)
    acts = rng.standard_normal((50, 3)) @ rng.standard_normal((3, 3)) + rng.standard_normal(3)
    targets = rng.standard_normal((50, 2))
    w0, b0 = rng.standard_normal((2, 3)), rng.standard_normal(2)

    def row_loss(row):
        w = w0.copy()
        w[0] = row
        return wb_layer_loss(WbAdapter(w, b0), targets, acts)[0]

    hess = finite_hessian(row_loss, w0[0], h=1e-2)
    expected = np.linalg.eigvalsh(2.0 * acts.T @ acts / len(acts))
    rel = float(np.max(np.abs(np.linalg.eigvalsh(hess) - expected) / np.abs(expected)))

    # mean norm 10x the centered standard deviation
    centered = rng.standard_normal((2000, 3))
    centered -= centered.mean(axis=0)
    std = float(np.sqrt(np.mean(np.sum(centered**2, axis=1))))
    mean = np.array([1.0, 0.0, 0.0]) * 10.0 * std
    raw = centered + mean
    cond_raw = np.linalg.cond(2.0 * raw.T @ raw / len(raw))
    cond_centered = np.linalg.cond(2.0 * centered.T @ centered / len(centered))
    ratio = cond_raw / cond_centered
    verdict(4, rel <= 1e-6 and ratio >= 10.0, f"Hessian eigenvalue rel err {rel:.1e}; centering cuts lambda_max/lambda_min {cond_raw:.1f} -> {cond_centered:.2f} ({ratio:.0f}x)")


def test_criterion_05_beta_heuristic(verdict):
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        d = 5
        a = rng.standard_normal((40, d)) * rng.uniform(0.1, 10.0, d) + 4.0
        c = rng.standard_normal((40, d)) @ rng.standard_normal((d, d)) * rng.uniform(0.01, 100.0)
        ac = a - a.mean(axis=0)
        tr_a, tr_c = np.mean(np.sum(ac**2, axis=1)), np.mean(np.sum(c**2, axis=1))
        auto = prca_subspace(a, c, 2)
        unit = prca_subspace(a / np.sqrt(tr_a), c / np.sqrt(tr_c), 2, beta=1.0)
        worst = max(worst, float(np.linalg.norm(projector(auto.u) - projector(unit.u))))
    verdict(5, worst <= 1e-8, f"max projector distance {worst:.1e} over 10 seeds")


def test_criterion_06_orthogonality(desk, verdict):
    teacher, task, student, base = desk["teacher"], desk["task"], desk["student"], desk["config"].distill
    cfg = replace(base, epochs=40)
    stiefel = [distill(teacher, student, replace(cfg, seed=s, training_mode=m), task) for s in (0, 1) for m in ("joint", "decoupled")]
    worst_stiefel = max(r.max_orthogonality_error for r in stiefel)
    soft = [distill(teacher, student, replace(cfg, seed=s, orthogonality="soft_penalty", penalty_weight=1000.0), task) for s in (0, 1)]
    worst_soft = max(r.epochs[-1]["max_orthogonality_error"] for r in soft)
    verdict(6, worst_stiefel <= 1e-8 and worst_soft <= 1e-2, f"stiefel max ||V^T V - I||_F = {worst_stiefel:.1e} over all steps; soft penalty final {worst_soft:.1e}")


def test_criterion_07_band_experiment(verdict):
    start = time.perf_counter()
    cfg = BandConfig.from_dict(json.loads((CONFIGS / "band.json").read_text()))
    report = run_band_experiment(cfg)
    seconds = time.perf_counter() - start
    scores = ", ".join(f"{r.subdistill_score:.2f}/{r.wb_score:.2f}" for r in report.results)
    ok = len(report.results) == 5 and report.score_wins >= 4 and report.mass_wins >= 4 and seconds < 600
    verdict(7, ok, f"score wins {report.score_wins}/5, mass wins {report.mass_wins}/5 (SubDistill/(W,b) scores {scores}; {seconds:.0f}s)")


def test_criterion_08_desk_ordering(desk_suite, verdict):
    cells = desk_suite["cells"]
    sd = statistics.median(cells["base"].accuracies)
    oo = statistics.median(desk_suite["output_only"])
    wb = statistics.median(desk_suite["wb"])
    nc = statistics.median(cells["no_centering"].accuracies)
    ok = sd >= oo and sd >= wb and nc < sd and desk_suite["seconds"] < 1800
    verdict(
        8, ok,
        f"median val acc SubDistill {sd:.3f}, output-only {oo:.3f}, (W,b) {wb:.3f} (alphas {desk_suite['wb_alphas']}), "
        f"no-centering {nc:.3f} ({desk_suite['seconds']:.0f}s for all desk runs)",
    )


def test_criterion_09_layer_subsets(desk_suite, verdict):
    cells = desk_suite["cells"]
    chain = [cells["layers=∅"], cells["layers={1}"], cells["layers={1,2}"]]
    steps = []
    ok = True
    for prev, nxt in zip(chain, chain[1:]):
        tol = max(prev.stderr, nxt.stderr)
        steps.append(f"{prev.mean:.3f}+-{prev.stderr:.3f} -> {nxt.mean:.3f}+-{nxt.stderr:.3f}")
        ok = ok and nxt.mean >= prev.mean - tol
    verdict(9, ok, "mean val acc over 3 seeds: " + "; ".join(steps))


def test_criterion_10_decoupled(desk_suite, verdict):
    dec = statistics.median(desk_suite["decoupled"])
    oo = statistics.median(desk_suite["output_only"])
    verdict(10, dec > oo, f"median val acc decoupled {dec:.3f} (alpha=1, untuned) vs output-only {oo:.3f}")


def test_criterion_11_lrp_conservation(desk, verdict):
    rng = np.random.default_rng(0)
    worst = 0.0
    for i in range(50):
        net = init_network(NetworkSpec((6, 7, 5, 4), seed=i))
        x = rng.standard_normal(6)
        logits = forward(net, x[None, :]).logits[0]
        while np.max(np.abs(logits)) < 1e-3:  # dead paths give a zero target and nothing to conserve
            x = rng.standard_normal(6)
            logits = forward(net, x[None, :]).logits[0]
        target = int(np.argmax(np.abs(logits)))
        rmap = lrp_attribute(net, x, target, [("epsilon", 1e-9)] * 3)
        worst = max(worst, abs(rmap.values.sum() - logits[target]) / abs(logits[target]))
    teacher, task = desk["teacher"], desk["task"]
    ids = task.subtask.class_ids
    maps = [lrp_attribute(teacher, task.x_val[j], ids[int(task.y_val[j])], shape=(8, 8)) for j in range(10)]
    copies = [RelevanceMap(m.values.copy(), m.target, shape=m.shape) for m in maps]
    r, _ = patch_correlation(maps, copies, 2)
    verdict(11, worst <= 1e-6 and abs(r - 1.0) <= 1e-12, f"max relative conservation error {worst:.1e} on 50 inputs; teacher-vs-teacher patch r = {r:.12f}")


def test_criterion_12_determinism(desk, verdict, tmp_path):
    cfg = str(desk["config_path"])
    band_cfg = tmp_path / "band.json"
    band_cfg.write_text(json.dumps({"n": 48, "d0": 32, "teacher_epochs": 20, "epochs": 10, "seeds": [0, 1]}))
    outputs = {}
    for rep in ("a", "b"):
        out = tmp_path / rep
        cmds = [
            ["distill", "--config", cfg, "--epochs", "20", "--out", out / "run0", "--seed", "0"],
            ["distill", "--config", cfg, "--epochs", "20", "--out", out / "run1", "--seed", "1", "--method", "output_only"],
            ["distill", "--config", cfg, "--epochs", "10", "--alpha-sweep", "--out", out / "sweep"],
            ["suite", "--config", cfg, "--epochs", "10", "--seeds", "0,1", "--ablation", "no_centering", "--layer-subsets", ";1", "--out", out / "suite"],
            ["explain", "--config", cfg, "--run", out / "run0", "--samples", "10"],
            ["band", "--config", band_cfg, "--out", out / "band"],
            ["report", out / "run0", out / "run1", out / "band", "--out", out / "report"],
        ]
        for c in cmds:
            assert main([str(a) for a in c] + ["--deterministic"]) == 0
        outputs[rep] = {p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*.csv"))}
    same = outputs["a"] == outputs["b"]
    names = sorted(str(p) for p in outputs["a"])
    differing = [n for n in names if outputs["a"][Path(n)] != outputs["b"].get(Path(n))]
    verdict(12, same and len(names) >= 12, f"{len(names)} CSV files byte-identical across reruns: {same}" + (f"; differing {differing}" if differing else ""))
