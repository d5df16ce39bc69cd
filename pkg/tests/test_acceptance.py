"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line
that is printed in the terminal summary."""

import collections
import itertools
import random
import time

import pytest

from predgc.baseline import MINOR, collect_labels
from predgc.experiment import run_collector_comparison
from predgc.heap import Heap, HeapConfig
from predgc.histogram import format_histogram, histo_diff, parse_histogram
from predgc.predictor import (REACHED_TENURED, SURVIVED_EDEN, DecisionPolicy, enumerate_posterior,
                              evaluate, evaluate_at, fit, fit_rows, naive_bayes_net, posterior,
                              tune_threshold)
from predgc.runtime import TrainedModels
from predgc.trace import WorkloadConfig, generate_synthetic, measured_eden_mortality, random_trace

from conftest import reachable_oracle

N_FUZZ = 1000
N_CONCURRENT = 100
MAX_FUZZ_OBJECTS = 5000


def _fuzz_shape(seed):
    """Trace size and heap geometry for one fuzz seed.  Most traces are
    small; every 50th is full size."""
    rng = random.Random(seed)
    n = MAX_FUZZ_OBJECTS if seed % 50 == 0 else rng.randint(40, 400)
    eden = rng.choice([512, 1024, 2048, 4096])
    config = HeapConfig(eden_capacity_bytes=eden,
                        survivor_capacity_bytes=rng.choice([eden // 4, eden // 2, eden]),
                        tenured_capacity_bytes=rng.choice([4 * eden, 16 * eden]),
                        tenuring_age_threshold=rng.randint(1, 4))
    trace = random_trace(seed, n_objects=n, link_rate=rng.uniform(0.1, 0.6),
                         unlink_rate=rng.uniform(0.5, 1.5))
    return trace, config


def _fuzz_models():
    """Deliberately imperfect models fit on separate fuzz traces, so the
    trained arm sees false positives and false negatives."""
    examples = []
    for seed in range(10**6, 10**6 + 20):
        trace, config = _fuzz_shape(seed)
        examples += collect_labels(trace, config)
    return TrainedModels(fit(examples, SURVIVED_EDEN), fit(examples, REACHED_TENURED),
                         DecisionPolicy(0.5))


class _ReclaimAudit:
    """Checks every reclamation against an independent reachability snapshot
    taken when the collection starts (the mutator is stopped until it ends,
    so reachability cannot change in between)."""

    def __init__(self):
        self.snapshot = None
        self.violations = []
        self.reclaims = 0
        self.outside = 0

    def observer(self, arm, stage, heap, pos):
        self.snapshot = reachable_oracle(heap) if stage == "before_collect" else None

    def wrap(self, real):
        audit = self

        def reclaim(heap, obj_id):
            audit.reclaims += 1
            if audit.snapshot is None:
                audit.outside += 1
            elif obj_id in audit.snapshot:
                audit.violations.append(obj_id)
            return real(heap, obj_id)

        return reclaim


@pytest.fixture(scope="module")
def fuzz_campaign():
    audit = _ReclaimAudit()
    trained = _fuzz_models()
    mp = pytest.MonkeyPatch()
    mp.setattr(Heap, "reclaim", audit.wrap(Heap.reclaim))
    results = []
    started = time.perf_counter()
    try:
        for seed in range(N_FUZZ):
            trace, config = _fuzz_shape(seed)
            report = run_collector_comparison(
                trace, config, {"trained": trained, "oracle": "oracle"},
                observer=audit.observer, check_registry=True)
            results.append((seed, report))
    finally:
        mp.undo()
    return {"audit": audit, "results": results, "trained": trained,
            "seconds": time.perf_counter() - started}


# 1 ------------------------------------------------------------------------------

def test_c1_safety_fuzzing(fuzz_campaign, acceptance):
    audit = fuzz_campaign["audit"]
    sizes = [r.arms["baseline"].totals()["objects_reclaimed"]
             + r.arms["baseline"].totals()["objects_alive_at_end"] for _, r in fuzz_campaign["results"]]
    ok = (len(fuzz_campaign["results"]) >= 1000 and max(sizes) <= MAX_FUZZ_OBJECTS
          and not audit.violations and audit.outside == 0 and audit.reclaims > 0)
    acceptance(1, "safety fuzzing", ok,
               f"{len(sizes)} traces, {audit.reclaims} reclamations audited, "
               f"{len(audit.violations)} violations, {fuzz_campaign['seconds']:.0f}s")
    assert ok


# 2 ------------------------------------------------------------------------------

def test_c2_oracle_zero_live(fuzz_campaign, acceptance):
    bad = []
    n_reports = 0
    for seed, report in fuzz_campaign["results"]:
        for r in report.arms["oracle"].gc_reports:
            if r.kind == MINOR:
                n_reports += 1
                if r.live_objects_handled != 0:
                    bad.append((seed, r.cycle_index, r.live_objects_handled))
    ok = not bad and n_reports > 0
    acceptance(2, "oracle zero-live", ok, f"{n_reports} predictive minor reports, {len(bad)} nonzero")
    assert ok, bad[:5]


# 3 ------------------------------------------------------------------------------

def test_c3_pause_reduction(acceptance):
    cfg = WorkloadConfig(eden_mortality=0.9, mid_lived_fraction=0.07, long_lived_fraction=0.03,
                         total_allocations=20000, seed=42)
    report = run_collector_comparison(generate_synthetic(cfg))
    base = report.arms["baseline"].totals()["total_pause_cost"]
    oracle = report.arms["oracle"].totals()["total_pause_cost"]
    ok = oracle < base
    acceptance(3, "pause reduction", ok,
               f"baseline {base:.2f}, oracle {oracle:.2f}, ratio {oracle / base:.4f}")
    assert ok


# 4 ------------------------------------------------------------------------------

def test_c4_end_state_equivalence(fuzz_campaign, acceptance):
    mismatched = [seed for seed, r in fuzz_campaign["results"]
                  if not (r.arms["baseline"].reclaimed == r.arms["trained"].reclaimed
                          == r.arms["oracle"].reclaimed)]
    ok = not mismatched and len(fuzz_campaign["results"]) >= 1000
    acceptance(4, "end-state equivalence", ok,
               f"{len(fuzz_campaign['results'])} traces x 3 arms, {len(mismatched)} mismatches")
    assert ok, mismatched[:5]


# 5 ------------------------------------------------------------------------------

def _counted_posterior(rows, labels, alpha, query):
    """Smoothed naive-Bayes posterior tallied straight from the rows."""
    score = {}
    for y in (True, False):
        n_y = sum(1 for lab in labels if lab == y)
        s = (n_y + alpha) / (len(labels) + 2 * alpha)
        for f, v in query.items():
            hits = sum(1 for r, lab in zip(rows, labels) if lab == y and r[f] == v)
            s *= (hits + alpha) / (n_y + 2 * alpha)
        score[y] = s
    return score[True] / (score[True] + score[False])


def test_c5_bayes_correctness(acceptance):
    rng = random.Random(2024)
    worst_enum = worst_norm = 0.0
    cases = 10000
    for _ in range(cases):
        k = rng.randint(1, 4)
        n = rng.randint(1, 25)
        rows = [{f"F{j}": rng.randint(0, 1) for j in range(k)} for _ in range(n)]
        labels = [rng.random() < rng.random() for _ in range(n)]
        model = fit_rows(rows, labels, alpha=rng.choice([0.1, 0.5, 1.0, 3.0]),
                         alphabets={f"F{j}": {0, 1} for j in range(k)})
        net = naive_bayes_net(model)
        query = {f"F{j}": rng.randint(0, 1) for j in range(k)}
        p = posterior(model, query)
        worst_enum = max(worst_enum, abs(p - enumerate_posterior(net, "Y", query, True)),
                         abs(p - _counted_posterior(rows, labels, model.alpha, query)))
        worst_norm = max(worst_norm, abs(p + posterior(model, query, label=False) - 1.0))
    ok = worst_enum <= 1e-12 and worst_norm <= 1e-12
    acceptance(5, "Bayes correctness", ok,
               f"{cases} cases, max |d| {worst_enum:.1e}, max |sum-1| {worst_norm:.1e}")
    assert ok


# 6 ------------------------------------------------------------------------------

def test_c6_precision_recall(acceptance):
    rng = random.Random(7)
    mismatches = 0
    for _ in range(5000):
        n = rng.randint(0, 60)
        preds = [rng.random() < 0.5 for _ in range(n)]
        truths = [rng.random() < 0.5 for _ in range(n)]
        cm = collections.Counter(zip(preds, truths))
        tp, fp, fn = cm[(True, True)], cm[(True, False)], cm[(False, True)]
        pr = evaluate(preds, truths)
        want_p = tp / (tp + fp) if tp + fp else None
        want_r = tp / (tp + fn) if tp + fn else None
        if (pr.true_positives, pr.false_positives, pr.false_negatives, pr.true_negatives) != (
                tp, fp, fn, cm[(False, False)]) or pr.precision != want_p or pr.recall != want_r:
            mismatches += 1
    worked = evaluate([True] * 5 + [False] * 5, [True] * 10)
    ok = mismatches == 0 and worked.precision == 1.0 and worked.recall == 0.5
    acceptance(6, "precision/recall arithmetic", ok,
               f"5000 random vectors, {mismatches} mismatches; TP5/FP0/FN5 -> "
               f"{worked.precision}/{worked.recall}")
    assert ok


# 7 ------------------------------------------------------------------------------

def test_c7_threshold_monotonicity(acceptance):
    rng = random.Random(11)
    failures = []
    for case in range(2000):
        n = rng.randint(1, 50)
        scored = [(rng.choice([rng.random(), round(rng.random(), 1)]), rng.random() < 0.4)
                  for _ in range(n)]
        grid = sorted({0.0, 1.0, *(p for p, _ in scored), *(i / 20 for i in range(21))})
        prev = None
        for t in grid:
            pr = evaluate_at(scored, DecisionPolicy(t))
            cur = (pr.true_positives + pr.false_positives, pr.recall)
            if prev is not None and (cur[0] > prev[0] or (cur[1] is not None and cur[1] > prev[1])):
                failures.append(("monotone", case, t))
            prev = cur
        tuned = evaluate_at(scored, tune_threshold(scored, 1.0))
        if tuned.false_positives != 0:
            failures.append(("fp", case))
    ok = not failures
    acceptance(7, "threshold monotonicity / zero FP at target 1.0", ok,
               f"2000 scored sets, {len(failures)} failures")
    assert ok, failures[:5]


# 8 ------------------------------------------------------------------------------

def test_c8_histogram_fidelity(data_dir, acceptance):
    fig1_text = (data_dir / "fig1.txt").read_text()
    fig1 = parse_histogram(fig1_text)
    fig2 = parse_histogram((data_dir / "fig2.txt").read_text())
    rendered = [" ".join(line.split()[1:]) for line in format_histogram(fig1).splitlines()[1:]]
    source = [" ".join(line.split()[1:]) for line in fig1_text.splitlines()[1:] if line.strip()]
    deltas = {d.class_name: (d.delta_instances, d.delta_bytes) for d in histo_diff(fig1, fig2)}
    ok = (rendered == source and "13203 1511320 <constMethodKlass>" in rendered
          and "3 72 java.awt.Polygon" in rendered
          and deltas["<constMethodKlass>"] == (-4, -344)
          and deltas["com.sun.media.sound.ModelSource"][0] == 0)
    acceptance(8, "histogram fidelity", ok,
               f"{len(fig1)} rows; <constMethodKlass> {deltas['<constMethodKlass>']}, "
               f"ModelSource {deltas['com.sun.media.sound.ModelSource']}")
    assert ok


# 9 ------------------------------------------------------------------------------

def test_c9_workload_calibration(acceptance):
    measured = {}
    for n, seed in itertools.product((5000, 20000), (42, 1, 2, 3)):
        cfg = WorkloadConfig(total_allocations=n, seed=seed, eden_mortality=0.9)
        measured[(n, seed)] = measured_eden_mortality(generate_synthetic(cfg), HeapConfig().eden_capacity_bytes)
    ok = all(0.87 <= m <= 0.93 for m in measured.values())
    acceptance(9, "workload calibration", ok,
               f"mortality range [{min(measured.values()):.4f}, {max(measured.values()):.4f}] "
               f"over {len(measured)} runs")
    assert ok


# 10 -----------------------------------------------------------------------------

def test_c10_trained_precision(acceptance):
    config = HeapConfig()
    train = []
    for seed in range(1, 6):
        train += collect_labels(generate_synthetic(WorkloadConfig(n_flows=3, seed=seed)), config)
    survive = fit(train, SURVIVED_EDEN)
    scored = [(posterior(survive, e.features), e.survived_eden) for e in train]
    policy = tune_threshold(scored, 0.95)
    test = collect_labels(generate_synthetic(WorkloadConfig(n_flows=3, seed=6)), config)
    pr = evaluate_at([(posterior(survive, e.features), e.survived_eden) for e in test], policy)
    ok = pr.precision is not None and pr.precision >= 0.95
    acceptance(10, "trained precision on held-out seed", ok,
               f"threshold {policy.threshold:.4g}, precision {pr.precision:.4f}, recall {pr.recall:.4f}")
    assert ok


# 11 -----------------------------------------------------------------------------

def test_c11_concurrency_determinism(fuzz_campaign, acceptance):
    trained = fuzz_campaign["trained"]
    serial = dict(fuzz_campaign["results"])
    differing = []
    for seed in range(N_CONCURRENT):
        trace, config = _fuzz_shape(seed)
        report = run_collector_comparison(trace, config, {"trained": trained, "oracle": "oracle"},
                                          concurrent=True, check_registry=True)
        for arm in ("trained", "oracle"):
            if report.arms[arm].final_state != serial[seed].arms[arm].final_state:
                differing.append((seed, arm))
    ok = not differing
    acceptance(11, "concurrent equals serial", ok,
               f"{N_CONCURRENT} traces x 2 predictive arms, {len(differing)} differing")
    assert ok, differing[:5]
