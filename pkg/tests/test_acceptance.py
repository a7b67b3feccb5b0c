"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (the PASS/FAIL lines are
printed even under output capture), or directly as
``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import json
import math
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from hierprobe.cli import main as cli_main
from hierprobe.geometry import centroid_monotonicity, pca_first_component, probe_auroc, spearman
from hierprobe.hierarchy import LabelRecord, records_from_counts, summarize_cohort
from hierprobe.metrics import PredictionSet, accuracy, confusion_matrix, evaluate_kl, macro_ovr_auc, roc_auc
from hierprobe.microtrain import (
    SETTINGS,
    TrainConfig,
    batch_loss,
    compute_gradients,
    embed,
    forward,
    init_model,
    input_saliency,
    predict,
    train,
)
from hierprobe.saliency import dice_at_q, mass_at_roi, overlap_report, topfrac_at_roi, topq_mask
from hierprobe.stats import mcnemar_exact, paired_bootstrap
from hierprobe.synth import SynthConfig, generate_cohort

E2E_SEEDS = range(5)


def report(capsys, number: int, ok: bool, detail: str, elapsed: float, budget: float) -> None:
    ok_time = elapsed < budget
    verdict = "PASS" if ok and ok_time else "FAIL"
    with capsys.disabled():
        print(f"\n[{verdict}] criterion {number}: {detail} | runtime {elapsed:.1f}s (budget {budget:.0f}s)")
    assert ok, detail
    assert ok_time, f"runtime {elapsed:.1f}s exceeds {budget}s"


# 1


def test_criterion_1_hierarchy_counts(capsys):
    t = time.perf_counter()
    a = summarize_cohort(records_from_counts((82, 46, 86, 111, 58)))
    b = summarize_cohort(records_from_counts((21, 12, 22, 28, 15)))
    got = ((a.oa_negative, a.oa_positive), (b.oa_negative, b.oa_positive))
    ok = got == ((128, 255), (33, 65))
    report(capsys, 1, ok, f"OA counts train {got[0]} test {got[1]}, expected (128, 255) (33, 65)",
           time.perf_counter() - t, 1)


# 2


def _brute_auc(s, y):
    pos, neg = s[y == 1], s[y == 0]
    wins = sum(float(p > n) + 0.5 * float(p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_criterion_2_metric_oracles(capsys):
    t = time.perf_counter()
    rng = np.random.default_rng(20)
    auc_bad = macro_bad = acc_bad = 0
    for _ in range(200):
        n = int(rng.integers(2, 13))
        y = rng.integers(0, 2, n)
        y[:2] = [0, 1]  # both classes present
        rng.shuffle(y)
        s = rng.integers(0, 6, n) / 5  # coarse grid: many ties
        auc_bad += roc_auc(s, y) != _brute_auc(s, y)

        grades = rng.integers(0, 5, n)
        grades[:2] = rng.permutation(5)[:2]
        p = rng.dirichlet(np.ones(5), n).round(1)
        p = (p + 1e-3) / (p + 1e-3).sum(axis=1, keepdims=True)
        per_class = [_brute_auc(p[:, k], (grades == k).astype(int))
                     for k in range(5) if 0 < np.count_nonzero(grades == k) < n]
        macro_bad += abs(macro_ovr_auc(p, grades).value - sum(per_class) / len(per_class)) > 1e-12

        pred = rng.integers(0, 5, n)
        cm = confusion_matrix(pred, grades, 5)
        acc_bad += (int(np.trace(cm.counts)) / n) != accuracy(pred, grades)
    ok = auc_bad == macro_bad == acc_bad == 0
    report(capsys, 2, ok, f"200 datasets: AUC mismatches {auc_bad}, macro-AUC >1e-12 {macro_bad}, "
           f"trace/N != acc {acc_bad}", time.perf_counter() - t, 5)


# 3


def _bootstrap_inputs(n=100, seed=30):
    rng = np.random.default_rng(seed)
    grades = rng.integers(0, 5, n)
    labels = [LabelRecord(f"s{i:03d}", int(g)) for i, g in enumerate(grades)]
    ids = [r.subject_id for r in labels]
    logits_a = np.eye(5)[grades] * 2 + rng.normal(size=(n, 5))
    logits_b = np.eye(5)[grades] * 1 + rng.normal(size=(n, 5))
    soft = lambda z: np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)  # noqa: E731
    return labels, PredictionSet.from_kl(ids, soft(logits_a)), PredictionSet.from_kl(ids, soft(logits_b))


def test_criterion_3_statistics(capsys):
    t = time.perf_counter()
    codes = np.arange(2**20, dtype=np.uint32)
    popcount = np.zeros(codes.shape, dtype=np.int8)
    for bit in range(20):
        popcount += ((codes >> bit) & 1).astype(np.int8)
    mismatches = 0
    for n in range(21):
        counts = np.bincount(popcount[: 2**n], minlength=n + 1)
        for b in range(n + 1):
            c = n - b
            tail = int(counts[: min(b, c) + 1].sum())
            expected = min(1.0, 2 * tail / 2**n)
            a_hits = [1] * b + [0] * c + [1, 0]
            b_hits = [0] * b + [1] * c + [1, 0]
            mismatches += mcnemar_exact(a_hits, b_hits).p_value != expected

    labels, pa, pb = _bootstrap_inputs()
    same = paired_bootstrap("kl_auc", pa, pa, labels, n_bootstrap=10_000, seed=3)
    zero_ok = same.mean_diff == 0.0 and (same.ci_low, same.ci_high) == (0.0, 0.0)
    one = paired_bootstrap("oa_auc", pa, pb, labels, n_bootstrap=10_000, seed=3, n_jobs=1)
    many = paired_bootstrap("oa_auc", pa, pb, labels, n_bootstrap=10_000, seed=3, n_jobs=4)
    ok = mismatches == 0 and zero_ok and one == many
    report(capsys, 3, ok, f"McNemar mismatches (b+c<=20) {mismatches}; identical-model diff "
           f"{same.mean_diff} CI [{same.ci_low}, {same.ci_high}]; 1 vs 4 executors identical {one == many} "
           f"(B=10000)", time.perf_counter() - t, 30)


# 4


def test_criterion_4_gradient_fidelity(capsys):
    t = time.perf_counter()
    rng = np.random.default_rng(40)
    worst_grad = worst_sal = 0.0
    for trial in range(20):
        setting = SETTINGS[trial % 3]
        d, h, n = int(rng.integers(2, 9)), int(rng.integers(1, 6)), int(rng.integers(1, 5))
        model = init_model(d, h, setting, seed=trial)
        model.theta[:] = rng.normal(0, 0.8, model.theta.shape)
        xs = rng.normal(size=(n, d))
        labels = [LabelRecord(f"s{i}", int(rng.integers(0, 5))) for i in range(n)]
        cfg = TrainConfig(lambda_oa=float(rng.uniform(0.2, 2)), lambda_kl=float(rng.uniform(0.2, 2)))
        analytic = np.concatenate([v.ravel() for v in compute_gradients(model, xs, labels, cfg).values()])
        fd = np.zeros_like(model.theta)
        for i in range(fd.shape[0]):
            old = model.theta[i]
            model.theta[i] = old + 1e-5
            up = batch_loss(model, xs, labels, cfg)
            model.theta[i] = old - 1e-5
            down = batch_loss(model, xs, labels, cfg)
            model.theta[i] = old
            fd[i] = (up - down) / 2e-5
        worst_grad = max(worst_grad, np.linalg.norm(analytic - fd) / max(np.linalg.norm(fd), 1e-12))

        x = xs[0]
        targets = [tg for tg, has in (("oa_pos", model.has_oa), ("kl_predicted", model.has_kl)) if has]
        for target in targets:
            k = int(np.argmax(forward(model, x)[2])) if target == "kl_predicted" else None

            def logit(v):
                _, oa, kl = forward(model, v)
                return oa if k is None else kl[k]

            fd_s = np.abs([(logit(x + 1e-5 * e) - logit(x - 1e-5 * e)) / 2e-5 for e in np.eye(d)])
            sal = input_saliency(model, x, target)
            worst_sal = max(worst_sal, np.linalg.norm(sal - fd_s) / max(np.linalg.norm(fd_s), 1e-12))
    ok = worst_grad < 1e-4 and worst_sal < 1e-5
    report(capsys, 4, ok, f"20 triples: max gradient rel. error {worst_grad:.2e} (<1e-4), "
           f"max saliency rel. error {worst_sal:.2e} (<1e-5)", time.perf_counter() - t, 10)


# 5


def test_criterion_5_geometry_exactness(capsys):
    t = time.perf_counter()
    rng = np.random.default_rng(50)
    evr_err = 0.0
    for _ in range(20):
        n, d = int(rng.integers(3, 40)), int(rng.integers(1, 10))
        x = rng.normal(size=(n, 1)) * rng.normal(size=d) + rng.normal(size=d)
        evr_err = max(evr_err, abs(pca_first_component(x).evr - 1.0))

    probe_bad = 0
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(10, 60))
        y = rng.integers(0, 2, n)
        y[:2] = [0, 1]
        s = rng.normal(size=n)
        auc = roc_auc(s, y)
        gap = abs(probe_auroc(s, y) - max(auc, 1 - auc))
        worst = max(worst, gap)
        probe_bad += gap > 1e-6

    def chain(pos):
        x = np.repeat(np.column_stack([pos, np.zeros(5)]), 3, axis=0)
        return centroid_monotonicity(x, np.repeat(np.arange(5), 3)).rho

    rhos = (chain([0, 1, 3, 6, 10]), chain([0, 4, 7, 9, 10]))
    ok = evr_err <= 1e-9 and probe_bad == 0 and rhos == (1.0, -1.0)
    report(capsys, 5, ok, f"rank-1 |EVR-1| max {evr_err:.1e}; probe != max(auc,1-auc) in {probe_bad}/100 sets "
           f"(worst gap {worst:.3f}); centroid rho {rhos}", time.perf_counter() - t, 5)


# 6


def test_criterion_6_saliency_exactness(capsys):
    t = time.perf_counter()
    rng = np.random.default_rng(60)
    count_bad = 0
    for _ in range(300):
        dims = tuple(int(v) for v in rng.integers(1, 9, 3))
        q = float(rng.choice([1, 5, 10, 25, 50, 100, round(float(rng.uniform(0.01, 100)), 2)]))
        s = rng.integers(0, 4, dims).astype(float)
        v = math.prod(dims)
        count_bad += int(topq_mask(s, q).sum()) != math.ceil(Fraction(str(q)) * v / 100)

    ident_bad = 0
    for _ in range(50):
        dims = tuple(int(v) for v in rng.integers(4, 11, 3))
        m = rng.random(dims) < rng.uniform(0.05, 0.5)
        m.flat[0] = True
        s = m.astype(float)
        rep_mass, top1 = mass_at_roi(s, m), topfrac_at_roi(s, m, 1)
        q = Fraction(100 * int(m.sum()), m.size)  # exact, so ceil(q/100 * V) == |M|
        ident_bad += not (rep_mass == 1.0 and top1 == 1.0 and dice_at_q(s, m, q) == 1.0)

    scale_gap = 0.0
    for _ in range(50):
        s = rng.random((6, 7, 8)) ** 3
        m = rng.random((6, 7, 8)) < 0.2
        m.flat[0] = True
        c = float(10 ** rng.uniform(-6, 6))
        a, b = overlap_report(s, m, (1, 5, 10, 25)), overlap_report(c * s, m, (1, 5, 10, 25))
        gaps = [abs(a.mass_roi - b.mass_roi), abs(a.top1_roi - b.top1_roi)]
        gaps += [abs(a.dice[q] - b.dice[q]) for q in a.dice]
        gaps.append(abs(mass_at_roi(s, m) - mass_at_roi(c * s, m)))
        scale_gap = max(scale_gap, max(gaps))
    ok = count_bad == 0 and ident_bad == 0 and scale_gap <= 1e-12
    report(capsys, 6, ok, f"|topq| != ceil in {count_bad}/300; identity-case failures {ident_bad}/50; "
           f"max scaling gap {scale_gap:.1e}", time.perf_counter() - t, 5)


# 7 and 8


def _e2e_run(seed: int) -> dict:
    cohort = generate_cohort(SynthConfig(seed=seed))
    x_tr, y_tr = cohort.inputs("train"), cohort.records("train")
    x_te, y_te, ids = cohort.inputs("test"), cohort.records("test"), cohort.ids("test")
    kl = np.array([r.kl for r in y_te])
    out = {}
    for setting in SETTINGS:
        model = train(x_tr, y_tr, TrainConfig(seed=seed), setting).model
        out[f"{setting}_rho"] = spearman(pca_first_component(embed(model, x_te, ids)).scores, kl)
        if model.has_kl:
            rep = evaluate_kl(predict(model, x_te, ids), y_te)
            out[f"{setting}_f1"], out[f"{setting}_auc"] = rep.f1, rep.auc
    return out


def test_criterion_7_directional_reproduction(capsys):
    t = time.perf_counter()
    runs = [_e2e_run(s) for s in E2E_SEEDS]
    mean = {k: float(np.mean([r[k] for r in runs])) for k in runs[0]}
    abs_rho = {s: float(np.mean([abs(r[f"{s}_rho"]) for r in runs])) for s in ("dual", "single_oa")}
    f1_ok = mean["dual_f1"] > mean["single_kl_f1"]
    auc_ok = mean["dual_auc"] > mean["single_kl_auc"]
    rho_ok = abs_rho["dual"] > abs_rho["single_oa"]
    detail = (
        f"5 seeds: KL macro-F1 dual {mean['dual_f1']:.4f} vs single_kl {mean['single_kl_f1']:.4f} [{'ok' if f1_ok else 'X'}]; "
        f"KL macro-AUC dual {mean['dual_auc']:.4f} vs single_kl {mean['single_kl_auc']:.4f} [{'ok' if auc_ok else 'X'}]; "
        f"|rho(PC1,KL)| dual {abs_rho['dual']:.4f} vs single_oa {abs_rho['single_oa']:.4f} [{'ok' if rho_ok else 'X'}]"
    )
    report(capsys, 7, f1_ok and auc_ok and rho_ok, detail, time.perf_counter() - t, 180)


def test_criterion_8_saliency_pattern(capsys):
    t = time.perf_counter()
    ratios = []
    for seed in E2E_SEEDS:
        cohort = generate_cohort(SynthConfig(seed=seed, distractor_gain=0.0))
        model = train(cohort.inputs("train"), cohort.records("train"), TrainConfig(seed=seed), "dual").model
        dims = cohort.roi_mask.shape
        masses = [overlap_report(input_saliency(model, x, "kl_predicted").reshape(dims), cohort.roi_mask).mass_roi
                  for x in cohort.inputs("test")]
        ratios.append(float(np.mean(masses)) / float(cohort.roi_mask.mean()))
    mean_ratio = float(np.mean(ratios))
    report(capsys, 8, mean_ratio >= 2.0, f"mean mass@ROI / ROI fraction = {mean_ratio:.3f} (>= 2), per seed "
           f"{[round(r, 3) for r in ratios]}", time.perf_counter() - t, 120)


# 9


def _tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def _cli_round(base: Path, cfg_path: Path) -> dict:
    data, out = base / "data", base / "out"
    out.mkdir(parents=True)
    calls = [["synth", "--config", str(cfg_path), "--out", str(data), "--seed", "9"]]
    for setting in ("dual", "single_kl"):
        calls.append(["train", "--data", str(data), "--setting", setting, "--epochs", "3", "--batch", "8",
                      "--hidden", "8", "--lr", "1e-3", "--seed", "4", "--out", str(base / setting)])
    labels = str(data / "labels_test.csv")
    calls += [
        ["eval", "--preds", str(base / "dual" / "preds.csv"), "--labels", labels, "-o", str(out / "eval.json")],
        ["compare", "--preds-a", str(base / "dual" / "preds.csv"), "--preds-b", str(base / "single_kl" / "preds.csv"),
         "--labels", labels, "--task", "oa", "--bootstrap", "1000", "--seed", "2", "-o", str(out / "compare.json")],
        ["geometry", "--embeddings", str(base / "dual" / "embeddings.csv"), "--labels", labels,
         "-o", str(out / "geometry.json")],
        ["saliency", "--sal", str(base / "dual" / "saliency"), "--mask", str(data / "roi_mask.raw"),
         "-o", str(out / "saliency.json")],
    ]
    for argv in calls:
        if cli_main(argv) != 0:
            raise AssertionError(f"command failed: {argv[0]}")
    return _tree_bytes(base)


def test_criterion_9_cli_determinism(capsys, tmp_path):
    t = time.perf_counter()
    cfg_path = tmp_path / "synth.json"
    cfg_path.write_text(json.dumps({"n_subjects": 60, "n_test": 30}))
    first = _cli_round(tmp_path / "a", cfg_path)
    second = _cli_round(tmp_path / "b", cfg_path)
    differing = sorted(k for k in first if first.get(k) != second.get(k))
    ok = first.keys() == second.keys() and not differing
    commands = "synth, train x2, eval, compare, geometry, saliency"
    report(capsys, 9, ok, f"{len(first)} output files from {commands}; differing {differing[:5]}",
           time.perf_counter() - t, 60)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
