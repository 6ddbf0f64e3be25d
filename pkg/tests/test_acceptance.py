"""Acceptance criteria, each checked at its stated tolerance.

Every test prints one ``CRITERION n ... PASS|FAIL|SKIP`` line (shown even
without ``-s``) and the collected lines are repeated in the terminal summary.
Expensive results are cached per session so the hop-trend and determinism
checks can reuse the benchmark runs.

Run only this file with ``pytest tests/test_acceptance.py -v``.
"""
import os
import time
from pathlib import Path

import numpy as np
import pytest
from conftest import random_graph
from oracles import (
    check_parameter_gradients,
    gradient_instance,
    indexwise_convolution,
    pair_count_auc,
)
from scipy.stats import chisquare

from diffembed.config import TrainConfig
from diffembed.evaluation import (
    auc,
    derive_seeds,
    evaluate_classification,
    fit_embeddings,
    link_prediction_run,
    split_edges,
)
from diffembed.graph import build_transition, diffuse, diffuse_row, load_graph
from diffembed.synthetic import block_graph
from diffembed.text import diffusion_convolve
from diffembed.training import NoiseDistribution, sample_negatives

pytestmark = pytest.mark.slow

RESULTS: list[str] = []
_CACHE: dict = {}

BENCH_SEEDS = derive_seeds(0, 5)
BENCH_RATIO = 0.85


def report(capsys, number, ok, detail, skipped=False):
    status = "SKIP" if skipped else ("PASS" if ok else "FAIL")
    line = f"CRITERION {number}: {status}  {detail}"
    RESULTS.append(line)
    with capsys.disabled():
        print("\n" + line)


def cached(key, fn):
    if key not in _CACHE:
        _CACHE[key] = fn()
    return _CACHE[key]


# -- criterion bodies; each returns (ok, detail, artefact for the determinism check)


def run_gradients():
    start = time.perf_counter()
    worst, count = 0.0, 0
    r = np.random.default_rng(2024)
    for hops in (1, 2, 4):
        for k in (1, 3):
            for _ in range(4):
                n, d = int(r.integers(2, 9)), int(r.integers(1, 9))
                params, data, batch, c = gradient_instance(int(r.integers(2**31)), n, d, hops, k, batch=None)
                worst = max(worst, check_parameter_gradients(params, data, batch, c, eps=1e-4))
                count += 1
    elapsed = time.perf_counter() - start
    ok = count >= 20 and worst < 1e-4 and elapsed < 60
    return ok, f"{count} instances, max relative error {worst:.2e} (< 1e-4), {elapsed:.1f}s (< 60s)", worst


def run_diffusion():
    start = time.perf_counter()
    r = np.random.default_rng(7)
    worst_pow = worst_row = 0.0
    checks = []
    for _ in range(40):
        n = int(r.integers(1, 65))
        g = random_graph(r, n, p=float(r.uniform(0, 0.3)))
        hops = int(r.integers(1, 6))
        t = build_transition(g, hops)
        a = g.adjacency().toarray()
        sinks = a.sum(axis=1) == 0
        a[sinks, sinks] = 1.0
        p = a / a.sum(axis=1, keepdims=True)
        dense = np.eye(n)
        for h in range(hops):
            worst_pow = max(worst_pow, np.abs(t.hops[h].toarray() - dense).max())
            dense = dense @ p
        m = r.standard_normal((n, 3))
        full = diffuse(t, m)
        for j in range(n):
            worst_row = max(worst_row, np.abs(diffuse_row(t, m, j) - full[j]).max())
        checks.append(full)
    elapsed = time.perf_counter() - start
    ok = worst_pow <= 1e-10 and worst_row <= 1e-12 and elapsed < 10
    detail = f"powers max-abs {worst_pow:.1e} (<= 1e-10), row agreement {worst_row:.1e} (<= 1e-12), {elapsed:.1f}s (< 10s)"
    return ok, detail, checks


def run_convolution():
    start = time.perf_counter()
    r = np.random.default_rng(11)
    worst = 0.0
    outs = []
    for _ in range(100):
        n, hops, d = int(r.integers(1, 16)), int(r.integers(1, 6)), int(r.integers(1, 9))
        g = random_graph(r, n, p=0.3)
        t = build_transition(g, hops)
        x = r.standard_normal((n, d))
        w = r.standard_normal((hops, d))
        act = diffusion_convolve(t, x, w, "tanh")
        oracle = indexwise_convolution([p.toarray() for p in t.hops], x, w, np.tanh)
        worst = max(worst, np.abs(act.v_star - oracle).max())
        outs.append(act.v_star)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 10
    return ok, f"100 shapes, max-abs {worst:.1e} (<= 1e-12), {elapsed:.1f}s (< 10s)", outs


def run_auc():
    start = time.perf_counter()
    r = np.random.default_rng(13)
    mismatches = 0
    values = []
    for _ in range(100):
        pos = r.integers(0, 20, size=int(r.integers(1, 80))) / 4.0
        neg = r.integers(0, 20, size=int(r.integers(1, 80))) / 4.0
        a = auc(pos, neg)
        mismatches += a != pair_count_auc(pos, neg)
        values.append(a)
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 5
    return ok, f"100 tied score-list pairs, {mismatches} mismatches (exact equality), {elapsed:.2f}s (< 5s)", values


def run_sampler():
    draws_n = 10**6
    r = np.random.default_rng(17)
    worst, worst_p, sizes = 0.0, 0.0, []
    counts_all, pvalues, zmax = [], [], 0.0
    for _ in range(5):
        n = int(r.integers(2, 101))
        deg = r.integers(0, 50, size=n).astype(float)
        deg[r.integers(n)] = max(deg.max(), 1.0)
        dist = NoiseDistribution(deg)
        draws = sample_negatives(dist, draws_n, r)
        freq = np.bincount(draws, minlength=n) / draws_n
        target = deg**0.75 / (deg**0.75).sum()
        nz = deg > 0
        rel = np.abs(freq[nz] - target[nz]) / target[nz]
        i = int(np.argmax(rel))
        if rel[i] > worst:
            worst, worst_p = float(rel[i]), float(target[nz][i])
        sizes.append(n)
        counts_all.append(freq)
        counts = freq[nz] * draws_n
        pvalues.append(chisquare(counts, target[nz] * draws_n).pvalue)
        zmax = max(zmax, float(np.max(np.abs(counts - target[nz] * draws_n) / np.sqrt(draws_n * target[nz] * (1 - target[nz])))))
    two = sample_negatives(NoiseDistribution([16, 1]), draws_n, r)
    two_freq = float((two == 0).mean())
    ok = worst < 0.01 and abs(two_freq - 8 / 9) <= 0.005
    sd = np.sqrt((1 - worst_p) / (worst_p * draws_n))
    detail = (
        f"N={sizes}: max per-vertex relative error {worst:.2%} (< 1%) at p={worst_p:.4f}"
        f" where one sampling s.d. is {sd:.2%}; (16,1) frequency {two_freq:.4f} (8/9 +/- 0.005);"
        f" info: chi-square p-values {[round(float(v), 3) for v in pvalues]}, max |z| {zmax:.2f}"
    )
    return ok, detail, (counts_all, two_freq)


def bench_config():
    return TrainConfig()


def run_benchmark():
    start = time.perf_counter()
    g = block_graph(seed=0)
    cfg = bench_config()
    aucs = [link_prediction_run(g, cfg, BENCH_RATIO, s) for s in BENCH_SEEDS]
    nulls = [link_prediction_run(g, cfg, BENCH_RATIO, s, null_model=True) for s in BENCH_SEEDS]
    emb, _ = fit_embeddings(g, cfg)
    f1 = evaluate_classification(emb, g.labels, 0.5, repeats=10, seed=0)
    elapsed = time.perf_counter() - start
    return dict(aucs=aucs, nulls=nulls, f1=f1, emb=emb, elapsed=elapsed)


def block_ceiling():
    """AUC of the score 'same block', the best any block-level model can do on these splits."""
    g = block_graph(seed=0)
    block = np.array([int(lab[0][-1]) for lab in g.labels])
    out = []
    for s in BENCH_SEEDS:
        sp = split_edges(g, BENCH_RATIO, s)
        score = lambda pairs: (block[pairs[:, 0]] == block[pairs[:, 1]]).astype(float)
        out.append(auc(score(sp.test_edges), score(sp.negative_test_edges)))
    return float(np.mean(out))


def benchmark_verdict(res):
    mean_auc, mean_null, mean_f1 = np.mean(res["aucs"]), np.mean(res["nulls"]), np.mean(res["f1"])
    ok = mean_auc >= 0.85 and mean_f1 >= 0.90 and 0.4 <= mean_null <= 0.6 and res["elapsed"] < 300
    detail = (
        f"link AUC {mean_auc:.4f} (>= 0.85); Macro-F1 {mean_f1:.4f} (>= 0.90); "
        f"random-embedding AUC {mean_null:.4f} (in [0.4, 0.6]); {res['elapsed']:.0f}s (< 300s)"
    )
    return ok, detail


# -- tests ------------------------------------------------------------------


def test_criterion_1_gradient_correctness(capsys):
    ok, detail, _ = cached("c1", run_gradients)
    report(capsys, 1, ok, detail)
    assert ok, detail


def test_criterion_2_diffusion_oracle(capsys):
    ok, detail, _ = cached("c2", run_diffusion)
    report(capsys, 2, ok, detail)
    assert ok, detail


def test_criterion_3_indexwise_matrix_equivalence(capsys):
    ok, detail, _ = cached("c3", run_convolution)
    report(capsys, 3, ok, detail)
    assert ok, detail


def test_criterion_4_auc_oracle(capsys):
    ok, detail, _ = cached("c4", run_auc)
    report(capsys, 4, ok, detail)
    assert ok, detail


def test_criterion_5_negative_sampler(capsys):
    ok, detail, _ = cached("c5", run_sampler)
    report(capsys, 5, ok, detail)
    assert ok, detail


def test_criterion_6_synthetic_benchmark(capsys):
    res = cached("c6", run_benchmark)
    ok, detail = benchmark_verdict(res)
    detail += f"; per-seed AUC {[round(a, 4) for a in res['aucs']]}; same-block score ceiling {block_ceiling():.4f}"
    report(capsys, 6, ok, detail)
    assert ok, detail


def test_criterion_7_hop_trend(capsys):
    h4 = cached("c6", run_benchmark)["aucs"]
    g = block_graph(seed=0)
    cfg = bench_config().replace(hops=1)
    h1 = cached("c7", lambda: [link_prediction_run(g, cfg, BENCH_RATIO, s) for s in BENCH_SEEDS])
    ok = np.mean(h4) >= np.mean(h1) - 0.02
    detail = f"mean AUC H=4 {np.mean(h4):.4f} vs H=1 {np.mean(h1):.4f} (need H=4 >= H=1 - 0.02)"
    report(capsys, 7, ok, detail)
    assert ok, detail


def test_criterion_8_cora_reproduction(capsys):
    root = os.environ.get("DIFFEMBED_CORA_DIR")
    if not root:
        report(capsys, 8, False, "set DIFFEMBED_CORA_DIR to a directory with edges.tsv and texts.tsv", skipped=True)
        pytest.skip("Cora data not available")
    root = Path(root)
    directed = os.environ.get("DIFFEMBED_CORA_UNDIRECTED", "0") != "1"
    g = load_graph(root / "edges.tsv", root / "texts.tsv", directed=directed)
    start = time.perf_counter()
    aucs = [link_prediction_run(g, TrainConfig(), 0.95, s) for s in derive_seeds(0, 10)]
    elapsed = time.perf_counter() - start
    ok = np.mean(aucs) >= 0.90 and elapsed < 1800
    report(capsys, 8, ok, f"{g.num_vertices} vertices, mean AUC {np.mean(aucs):.4f} (>= 0.90), {elapsed:.0f}s (< 1800s)")
    assert ok


def test_criterion_9_determinism(capsys):
    first = {k: cached(k, fn) for k, fn in
             [("c1", run_gradients), ("c2", run_diffusion), ("c3", run_convolution), ("c4", run_auc), ("c5", run_sampler), ("c6", run_benchmark)]}
    second = {"c1": run_gradients(), "c2": run_diffusion(), "c3": run_convolution(), "c4": run_auc(), "c5": run_sampler(), "c6": run_benchmark()}

    def same(a, b):
        if isinstance(a, dict):
            return all(same(a[k], b[k]) for k in a if k != "elapsed")
        if isinstance(a, (list, tuple)):
            return len(a) == len(b) and all(same(x, y) for x, y in zip(a, b))
        if isinstance(a, np.ndarray):
            return a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
        return a == b

    diverged = [k for k in first if not same(first[k][-1] if k != "c6" else first[k], second[k][-1] if k != "c6" else second[k])]
    ok = not diverged
    report(capsys, 9, ok, "criteria 1-6 rerun bitwise identical" if ok else f"outputs differ for {diverged}")
    assert ok
