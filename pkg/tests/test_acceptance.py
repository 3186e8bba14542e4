"""End-to-end acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line through the ``criterion`` fixture; the lines
are printed again in the pytest terminal summary.
"""

from __future__ import annotations

import itertools
import time

import numpy as np
import pytest

from oracles import knn_oracle, shannon, tree_eval, random_tree
from pdpids.controller import DeltaTracker, knn_classify_many, knn_train
from pdpids.dataplane import FRAC_BITS
from pdpids.detector import EntropyDetector
from pdpids.flows import MAGIC, FlowKey, FlowRecord, ReportPacket, collect_trace, parse_report, serialize_report
from pdpids.harness import ExperimentConfig, build_trace, run_experiment
from pdpids.sketch import CountSketch, EntropyPipeline, ExactCounter, LogTable
from pdpids.traffic import TraceRecord, zipf_probs
from pdpids.trees import tree_compile

SEEDS = (0, 1, 2)


@pytest.fixture(scope="module")
def entropy_runs():
    out = {}
    for seed in SEEDS:
        cfg = ExperimentConfig(pipeline="entropy", seed=seed)
        t0 = time.perf_counter()
        report = run_experiment(cfg)
        out[seed] = (cfg, report, time.perf_counter() - t0)
    return out


@pytest.fixture(scope="module")
def classifier_runs():
    return {seed: run_experiment(ExperimentConfig(pipeline="classifier", seed=seed)) for seed in SEEDS}


def test_criterion_01_entropy_accuracy(entropy_runs, criterion):
    cfg, _, _ = entropy_runs[0]
    n = len(build_trace(cfg, 0))
    accs = [r.accuracy for _, r, _ in entropy_runs.values()]
    slowest = max(t for _, _, t in entropy_runs.values())
    ok = all(a >= 0.90 for a in accs) and slowest <= 60 and abs(n - 1_000_000) <= 10_000
    detail = f"accuracy {', '.join(f'{a:.3f}' for a in accs)} (>= 0.90); {n} packets; slowest run {slowest:.1f}s"
    assert criterion(1, ok, detail)


def test_criterion_02_detection_delay(entropy_runs, criterion):
    delays = [r.detection_delay_windows for _, r, _ in entropy_runs.values()]
    ok = all(d is not None and d <= 2 for d in delays)
    assert criterion(2, ok, f"delay in windows {delays} (<= 2)")


def _stream(rng, kind: str, n: int) -> np.ndarray:
    if kind == "zipf":
        return rng.choice(1000, n, p=zipf_probs(1000, 1.0)) + 0x0A000000
    if kind == "zipf-wide":
        return rng.choice(1 << 18, n, p=zipf_probs(1 << 18, 1.0))
    if kind.startswith("uniform"):
        return rng.integers(0, int(kind.split("-")[1]), n)
    raise ValueError(kind)


def test_criterion_03_entropy_fidelity(criterion):
    W = 1 << 13
    log_w = 13
    lt = LogTable.build(W, 8)
    worst_rel = worst_exact = 0.0
    for kind in ("zipf", "zipf-wide", "uniform-256", "uniform-4096", "uniform-65536", f"uniform-{1 << 32}"):
        for seed in range(10):
            keys = _stream(np.random.default_rng(seed), kind, 2 * W)
            sk = EntropyPipeline(W, CountSketch(4, 2048, seed=seed), lt).batch_windows(keys) / (1 << FRAC_BITS)
            ex = EntropyPipeline(W, ExactCounter(), lt).batch_windows(keys) / (1 << FRAC_BITS)
            for i in range(2):
                h = shannon(keys[i * W:(i + 1) * W])
                worst_rel = max(worst_rel, abs(sk[i] - h) / log_w)
                worst_exact = max(worst_exact, abs(ex[i] - h))
    tol = 2 ** -4 * log_w
    ok = worst_rel <= 0.05 and worst_exact <= tol
    detail = f"sketch max |dH|/log2W {worst_rel:.4f} (<= 0.05); exact max |dH| {worst_exact:.3f} bits (<= {tol})"
    assert criterion(3, ok, detail)


def test_criterion_04_log_table(criterion):
    lt = LogTable.build(1 << 20, 8)
    x = np.arange(2, (1 << 20) + 1)
    got = lt.dense(1 << 20)[2:] / (1 << FRAC_BITS)
    exact = x * np.log2(x)
    worst = float(np.max(np.abs(got - exact) / exact))
    assert criterion(4, worst <= 0.01, f"max relative error {worst:.5f} over [2, 2^20] (<= 0.01); {len(lt)} entries")


def test_criterion_05_classifier(classifier_runs, criterion):
    disagreements = 0
    for seed in range(100):
        rng = np.random.default_rng(10_000 + seed)
        n, f = int(rng.integers(1, 201)), int(rng.integers(1, 9))
        X = rng.integers(0, 5, (n, f)) * rng.random(f)
        y = rng.integers(0, 2, n)
        q = rng.random((3, f)) * 4
        k = int(rng.integers(1, min(n, 15) + 1))
        got = knn_classify_many(knn_train(X, y), q, k).tolist()
        want = [knn_oracle(X.tolist(), y.tolist(), x.tolist(), k) for x in q]
        disagreements += sum(a != b for a, b in zip(got, want))
    accs = [r.accuracy for r in classifier_runs.values()]
    ok = disagreements == 0 and all(a >= 0.90 for a in accs)
    detail = f"(a) {disagreements} KNN disagreements on 100 instances; (b) accuracy {', '.join(f'{a:.3f}' for a in accs)}"
    assert criterion(5, ok, detail)


def test_criterion_06_tree_tables(criterion):
    X = list(itertools.product(range(256), repeat=2))
    Xa = np.array(X)
    mismatches = 0
    for seed in range(50):
        tree = random_tree(np.random.default_rng(seed), 2, 8, 6)
        want = np.array([tree_eval(tree, x) for x in X])
        mismatches += int(np.sum(tree_compile(tree).classify_many(Xa) != want))
    assert criterion(6, mismatches == 0, f"{mismatches} mismatches over 50 trees x 65536 inputs")


def _random_report(rng) -> ReportPacket:
    def u(bits):
        return int(rng.integers(0, 1 << bits, dtype=np.uint64)) if bits == 64 else int(rng.integers(0, 1 << bits))

    flows = tuple(
        FlowRecord(FlowKey(u(32), u(32), u(16), u(16), u(8)), u(32), u(64), u(64), u(64), u(64), u(32), u(32),
                   u(16), u(16), u(16))
        for _ in range(int(rng.integers(1, 9))))
    return ReportPacket(u(32), flows)


def test_criterion_07_report_format(criterion):
    rng = np.random.default_rng(7)
    failures = 0
    for _ in range(10_000):
        r = _random_report(rng)
        b = serialize_report(r)
        failures += parse_report(b) != r or serialize_report(parse_report(b)) != b
    one = serialize_report(ReportPacket(1, (_random_report(rng).flows[0],)))
    ok = failures == 0 and len(one) == 74 and int.from_bytes(one[:4], "big") == MAGIC == 0x50344944
    assert criterion(7, ok, f"{failures} round-trip failures in 10^4; 1-flow report {len(one)} bytes")


def test_criterion_08_conservation(criterion):
    bad = []
    for seed, (n_flows, table_size) in enumerate(itertools.product((1, 64, 1 << 10, 1 << 12), (16, 1024, None))):
        rng = np.random.default_rng(seed)
        keys = [FlowKey(int(rng.integers(1 << 32)), int(rng.integers(1 << 32)), int(rng.integers(1 << 16)),
                        int(rng.integers(1 << 16)), 6) for _ in range(n_flows)]
        n_packets = 20_000
        ts = np.cumsum(rng.integers(0, 200, n_packets))
        which = rng.integers(0, n_flows, n_packets)
        trace = [TraceRecord(int(t), keys[w], 100) for t, w in zip(ts, which)]
        kw = {} if table_size is None else {"table_size": table_size}
        total = DeltaTracker().total(collect_trace(trace, window_us=100_000, **kw))
        if total != n_packets:
            bad.append((n_flows, table_size, total))
    assert criterion(8, not bad, f"12 traces up to 2^12 flows, small and default tables; mismatches {bad}")


def test_criterion_09_op_budget(criterion):
    cfg = ExperimentConfig(pipeline="entropy", seed=0)
    trace = build_trace(cfg, 0)
    n_windows = 12
    # start two windows before the attack so the boundaries see both benign and attack traffic
    first = (int(np.flatnonzero(trace.label == 1)[0]) // cfg.W - n_windows + 2) * cfg.W
    seg = trace[first:first + n_windows * cfg.W]
    det = EntropyDetector(cfg.detector_config())
    results = list(det.feed(zip(seg.src.tolist(), seg.dst.tolist())))
    peaks = {name: b.peak for name, b in det.budgets.items()}
    ok = len(results) == n_windows and all(p <= 32 for p in peaks.values())
    assert criterion(9, ok, f"per-packet peaks {peaks} over {len(results)} windows (<= 32)")


def test_criterion_10_determinism(entropy_runs, classifier_runs, criterion):
    cfg, first, _ = entropy_runs[0]
    again = run_experiment(cfg)
    c_again = run_experiment(ExperimentConfig(pipeline="classifier", seed=0))
    ok = (again.deterministic_part() == first.deterministic_part()
          and c_again.deterministic_part() == classifier_runs[0].deterministic_part())
    assert criterion(10, ok, "entropy and classifier re-runs identical apart from wall clock")
