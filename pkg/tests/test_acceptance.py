"""Acceptance suite: one test per numbered criterion.

Each test prints a PASS/FAIL line and the terminal summary lists all of them
under "acceptance criteria".
"""

import csv
import json
import time
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import DATA, fast_endpoint, make_items
from supportscope.datasets import balanced_subset
from supportscope.inference import SamplingPlan, load_responses, run_plan
from supportscope.mock_server import ScriptedModelSpec, sharpened
from supportscope.probe import FeatureFile, gradient_check, train_probe
from supportscope.recipe import BRIDGE, SHARPEN, RecipeConfig, compare_runs, decide
from supportscope.reports import load_reported_csv, model_table_markdown, parse_model_table
from supportscope.stats import ItemOutcome, SupportEstimate, estimate_from_outcomes, estimate_support, pass_at_k
from supportscope.verification import verify
from test_datasets import _items_with_groups
from test_stats import brute_force_pass_at_k


def _line(number, ok, detail=""):
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
    return ok


def _run_records(tmp_path, items, spec, k, mock_server, name, bootstrap=1000, seed=0):
    server = mock_server(spec)
    ep = fast_endpoint(server.url, max_concurrency=16)
    run_plan(items, ep, SamplingPlan.greedy(), tmp_path / f"{name}-greedy.jsonl")
    run_plan(items, ep, SamplingPlan(k=k), tmp_path / f"{name}-sampled.jsonl")
    responses = load_responses(tmp_path / f"{name}-greedy.jsonl") + load_responses(tmp_path / f"{name}-sampled.jsonl")
    return verify(responses, {it.item_id: it for it in items})


@pytest.mark.acceptance(1, "Pass@K matches subset enumeration for all n <= 12")
def test_c1_oracle_equivalence():
    start = time.monotonic()
    worst = 0.0
    for n in range(1, 13):
        for c in range(n + 1):
            for k in range(1, n + 1):
                worst = max(worst, abs(pass_at_k(n, c, k) - float(brute_force_pass_at_k(n, c, k))))
    elapsed = time.monotonic() - start
    assert _line(1, worst < 1e-12 and elapsed < 5, f"max |err|={worst:.2e}, {elapsed:.2f}s")


@pytest.mark.acceptance(2, "closed-form spot values (4,1,2) and (16,4,8)")
def test_c2_spot_values():
    assert brute_force_pass_at_k(4, 1, 2) == Fraction(1, 2)
    assert brute_force_pass_at_k(16, 4, 8) == Fraction(25, 26)
    ok = abs(pass_at_k(4, 1, 2) - 0.5) < 1e-12 and abs(pass_at_k(16, 4, 8) - 25 / 26) < 1e-12
    assert _line(2, ok, f"{pass_at_k(4, 1, 2)!r}, {pass_at_k(16, 4, 8)!r}")


def _parametric_interval(n_items, n, p, ks, reps=1000, seed=0):
    """95% interval of the estimator's sampling distribution under the true model."""
    rng = np.random.default_rng(seed)
    c = rng.binomial(n, p, size=(reps, n_items))
    out = {}
    for k in ks:
        table = np.array([pass_at_k(n, ci, k) for ci in range(n + 1)])
        vals = table[c].mean(axis=1)
        out[k] = (float(np.percentile(vals, 2.5)), float(np.percentile(vals, 97.5)))
    return out


@pytest.mark.acceptance(3, "mock p=0.5, 500 items, n=16: S[1] and S[16] within 95% intervals")
def test_c3_end_to_end_fidelity(tmp_path, mock_server):
    start = time.monotonic()
    items = make_items(tmp_path, 500, n_classes=4)
    spec = ScriptedModelSpec.for_items(items, p=0.5, rng_seed=11)
    est = estimate_support(_run_records(tmp_path, items, spec, 16, mock_server, "c3"), [1, 16], seed=0)
    elapsed = time.monotonic() - start
    truth = {1: 0.5, 16: 1 - 0.5**16}
    interval = _parametric_interval(500, 16, 0.5, [1, 16])
    in_param = all(interval[k][0] <= est.S[k] <= interval[k][1] for k in (1, 16))
    lo, hi = est.ci["pass@1"]
    boot_s1 = lo <= truth[1] <= hi
    ok = in_param and boot_s1 and elapsed < 120 and est.n_items == 500
    assert _line(3, ok, f"S[1]={est.S[1]:.4f} in {interval[1]} (bootstrap [{lo:.4f}, {hi:.4f}] covers 0.5), "
                        f"S[16]={est.S[16]:.6f} in {interval[16]}, {elapsed:.1f}s")


@settings(max_examples=1000, deadline=None)
@given(st.integers(1, 20).flatmap(
    lambda n: st.lists(st.tuples(st.just(n), st.integers(0, n), st.booleans()), min_size=1, max_size=25)))
def _monotone_property(rows):
    n = rows[0][0]
    outs = [ItemOutcome(f"i{i}", n, c, g) for i, (_, c, g) in enumerate(rows)]
    ks = sorted({1, 2, 4, 8, 16, n} & set(range(1, n + 1)))
    est = estimate_from_outcomes("t", outs, ks, n_bootstrap=0)
    vals = [est.S[k] for k in ks]
    assert all(a <= b + 1e-15 for a, b in zip(vals, vals[1:]))
    _monotone_property.count += 1


_monotone_property.count = 0


@pytest.mark.acceptance(4, "S[K] non-decreasing in K over >= 1000 random outcome sets")
def test_c4_monotonicity():
    _monotone_property()
    assert _line(4, _monotone_property.count >= 1000, f"{_monotone_property.count} sets checked")


@pytest.mark.acceptance(5, "decide() conforms to the rule on a 100x100 (S, tau) grid")
def test_c5_decision_grid():
    start = time.monotonic()
    bad = 0
    for i in range(1, 101):
        s = i / 100
        est = SupportEstimate.from_reported("t", 0.0, {16: s})
        for j in range(1, 101):
            tau = j / 100
            want = BRIDGE if s < tau else SHARPEN
            bad += decide(est, RecipeConfig(tau=tau)).verdict != want
    boundary = decide(SupportEstimate.from_reported("t", 0.1, {16: 0.8}), RecipeConfig(tau=0.8)).verdict
    elapsed = time.monotonic() - start
    ok = bad == 0 and boundary == SHARPEN and elapsed < 1
    assert _line(5, ok, f"{bad} mismatches in 10000 cells, S=tau -> {boundary}, {elapsed:.2f}s")


@pytest.mark.acceptance(6, "scripted sharpening raises Acc@1 and flags Pass@K collapse")
def test_c6_over_sharpening(tmp_path, mock_server):
    items = make_items(tmp_path, 400, n_classes=4)
    # per-item p straddles the 0.3 threshold
    ladder = [0.1, 0.2, 0.4, 0.6]
    before_spec = ScriptedModelSpec.for_items(items, rng_seed=5)
    before_spec.per_item_p = {it.item_id: ladder[i % 4] for i, it in enumerate(items)}
    after_spec = sharpened(before_spec, [it.item_id for it in items])
    before = estimate_support(_run_records(tmp_path, items, before_spec, 16, mock_server, "before"), [1, 16],
                              task_id="toy", n_bootstrap=0)
    after = estimate_support(_run_records(tmp_path, items, after_spec, 16, mock_server, "after"), [1, 16],
                             task_id="toy", n_bootstrap=0)
    rep = compare_runs(before, after, RecipeConfig(), {"toy": "radiology"}, "toy")
    ok = rep.delta_a > 0 and rep.collapse_flag
    assert _line(6, ok, f"dAcc@1={rep.delta_a:+.4f}, dPass@16={rep.delta_s_k:+.4f}, collapse={rep.collapse_flag}")


def _blobs(n_per_class, n_classes, dim, center_seed, noise_seed):
    centers = np.random.default_rng(center_seed).normal(scale=3.0, size=(n_classes, dim))
    y = np.repeat(np.arange(n_classes), n_per_class)
    x = centers[y] + np.random.default_rng(noise_seed).normal(scale=0.3, size=(y.size, dim))
    return FeatureFile(x.astype(np.float32), y.astype(np.uint32), n_classes)


@pytest.mark.acceptance(7, "probe: grad check, separable blobs, shuffled labels, monotone loss")
def test_c7_probe():
    grad_err = max(gradient_check(dim=10, n_classes=4, n_points=30, seed=s) for s in range(3))
    history = []
    blobs = train_probe(_blobs(200, 5, 16, 1, 2), _blobs(100, 5, 16, 1, 3), history=history)
    monotone = all(b <= a for a, b in zip(history, history[1:]))
    rng = np.random.default_rng(4)
    x = rng.normal(size=(4000, 20)).astype(np.float32)
    y = rng.integers(0, 10, size=4000).astype(np.uint32)
    chance = train_probe(FeatureFile(x[:2000], y[:2000], 10), FeatureFile(x[2000:], y[2000:], 10))
    ok = grad_err < 1e-4 and blobs.test_accuracy >= 0.99 and abs(chance.test_accuracy - 0.1) <= 0.05 and monotone
    assert _line(7, ok, f"grad err={grad_err:.2e}, blobs acc={blobs.test_accuracy:.4f}, "
                        f"shuffled acc={chance.test_accuracy:.4f}, monotone={monotone}")


@pytest.mark.acceptance(8, "balanced subset: equal quotas, {2,100,100}/30 -> {2,14,14}, deterministic")
def test_c8_balanced_subset():
    even = Counter(it.modality for it in balanced_subset(_items_with_groups({"a": 50, "b": 50, "c": 50}), 30))
    short_items = _items_with_groups({"a": 2, "b": 100, "c": 100})
    short = Counter(it.modality for it in balanced_subset(short_items, 30, seed=7))
    same = balanced_subset(short_items, 30, seed=7) == balanced_subset(list(reversed(short_items)), 30, seed=7)
    ok = even == {"a": 10, "b": 10, "c": 10} and short == {"a": 2, "b": 14, "c": 14} and same
    assert _line(8, ok, f"divisible={dict(even)}, shortage={dict(short)}, deterministic={same}")


class _Interrupt(Exception):
    pass


@pytest.mark.acceptance(9, "interrupted eval resumes to exactly items x k unique records")
def test_c9_resumability(tmp_path, mock_server):
    items = make_items(tmp_path, 25)
    server = mock_server(ScriptedModelSpec.for_items(items))
    out = tmp_path / "run.jsonl"
    count = [0]

    def interrupt(_rec):
        count[0] += 1
        if count[0] == 73:
            raise _Interrupt

    with pytest.raises(_Interrupt):
        run_plan(items, fast_endpoint(server.url, max_concurrency=4), SamplingPlan(k=8), out, on_record=interrupt)
    partial = len(out.read_text().splitlines())
    run_plan(items, fast_endpoint(server.url), SamplingPlan(k=8), out)
    lines = out.read_text().splitlines()
    keys = [(json.loads(l)["item_id"], json.loads(l)["sample_index"]) for l in lines]
    ok = len(keys) == 25 * 8 and len(set(keys)) == len(keys) and partial < 200
    assert _line(9, ok, f"{partial} lines before resume, {len(keys)} lines / {len(set(keys))} unique after")


@pytest.mark.acceptance(10, "in-flight requests never exceed max_concurrency over 1000 requests")
def test_c10_concurrency_bound(tmp_path, mock_server):
    items = make_items(tmp_path, 50)
    server = mock_server(ScriptedModelSpec.for_items(items, latency_s=0.004))
    before = server.request_count
    run_plan(items, fast_endpoint(server.url, max_concurrency=6), SamplingPlan(k=20), tmp_path / "r.jsonl")
    sent = server.request_count - before
    ok = sent == 1000 and 1 <= server.high_water <= 6
    assert _line(10, ok, f"{sent} requests, high-water={server.high_water}, limit=6")


@pytest.mark.acceptance(11, "published reported values reproduce exactly in the grouped table")
def test_c11_report_fidelity():
    table = parse_model_table(model_table_markdown(load_reported_csv(DATA / "reported_acc1.csv")))
    with open(DATA / "reported_acc1.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    mismatches = [r for r in rows if table[r["modality"]][r["model"]][r["task"]] != r["acc@1"]]
    spot = (table["Radiology"]["M_SFT"]["Pneumonia"], table["Microscopy"]["M_SFT"]["Blood"])
    ok = not mismatches and spot == ("86.00", "76.00") and len(rows) == 36
    assert _line(11, ok, f"{len(rows) - len(mismatches)}/{len(rows)} cells match, SFT Pneumonia={spot[0]}, "
                         f"SFT Blood={spot[1]}")
