import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from predgc.baseline import CostModel, collect_labels
from predgc.driver import replay
from predgc.heap import ROOT, Heap, HeapConfig, SafetyViolation, Space
from predgc.predictor import REACHED_TENURED, SURVIVED_EDEN, DecisionPolicy, fit
from predgc.runtime import (GC_ROOT, OP_ROOT, DualRootRegistry, LifetimeClass,
                            LifetimePrediction, OracleGroundTruth, PredictiveArm,
                            PredictiveRuntime, TrainedModels, classify_new, expected_lifetime,
                            op_scan, predictive_gc_cycle)
from predgc.trace import Alloc, Link, Trace, Unlink, random_trace

from conftest import reachable_oracle

POLICY = DecisionPolicy(0.8)


class FixedBinding:
    """Stub predictor: posteriors chosen per class name."""

    oracle = False
    policy = POLICY

    def __init__(self, table, default=(0.0, 0.0)):
        self.table = table
        self.default = default

    def predict(self, heap, obj_id, now, memo):
        ps, pt = self.table.get(heap.get(obj_id).class_name, self.default)
        return LifetimePrediction(ps, pt, expected_lifetime(ps, pt, self.policy))

    def rescore(self, heap, obj_id, now, previous, memo):
        return self.predict(heap, obj_id, now, memo)


@pytest.mark.parametrize("ps,pt,expected", [
    (0.1, 0.05, LifetimeClass.DIE_IN_EDEN),
    (0.95, 0.2, LifetimeClass.MID_LIVED),
    (0.95, 0.9, LifetimeClass.LONG_LIVED),
    (0.8, 0.9, LifetimeClass.DIE_IN_EDEN),
])
def test_expected_lifetime(ps, pt, expected):
    assert expected_lifetime(ps, pt, POLICY) is expected


# -- classify_new -----------------------------------------------------------------

def _oracle_runtime(trace, config=HeapConfig()):
    return PredictiveRuntime(OracleGroundTruth.from_trace(trace, config))


def test_oracle_classifies_early_death_to_gc_root():
    trace = Trace([Alloc("u", "U", 8), Unlink("ROOT", "u")])
    rt = _oracle_runtime(trace)
    heap = Heap()
    u = heap.allocate("U", 8)
    assert classify_new(rt, heap, u) == GC_ROOT
    assert rt.registry.gc_ids() == [u]


def test_oracle_classifies_permanent_root_as_long_lived():
    cfg = HeapConfig(eden_capacity_bytes=100)
    trace = Trace([Alloc("p", "P", 8)] + [Alloc(f"x{i}", "X", 100) for i in range(4)])
    rt = _oracle_runtime(trace, cfg)
    heap = Heap(cfg)
    p = heap.allocate("P", 8)
    assert classify_new(rt, heap, p) == OP_ROOT
    assert rt.registry.op_partition == [(p, LifetimeClass.LONG_LIVED)]


def test_trained_posteriors_give_mid_lived():
    rt = PredictiveRuntime(FixedBinding({"A": (0.85, 0.1)}))
    heap = Heap()
    a = heap.allocate("A", 8)
    assert classify_new(rt, heap, a) == OP_ROOT
    assert rt.registry.op_partition == [(a, LifetimeClass.MID_LIVED)]


def test_classify_rejects_non_eden():
    rt = PredictiveRuntime(FixedBinding({}))
    heap = Heap()
    a = heap.allocate("A", 8)
    heap.promote(a, Space.TENURED)
    with pytest.raises(ValueError):
        classify_new(rt, heap, a)


def test_trained_models_binding():
    heap = Heap(HeapConfig(eden_capacity_bytes=64))
    events = [Alloc("k", "Keep", 8)] + [Alloc(f"t{i}", "Tmp", 16) for i in range(12)]
    events += [Unlink("ROOT", f"t{i}") for i in range(12)] + [Alloc("z", "Z", 64)]
    ex = collect_labels(Trace(events), HeapConfig(eden_capacity_bytes=64))
    binding = TrainedModels(fit(ex, SURVIVED_EDEN), fit(ex, REACHED_TENURED), POLICY)
    a = heap.allocate("Tmp", 16)
    pred = binding.predict(heap, a, 0, {})
    assert 0 < pred.p_survive_eden < 1
    with pytest.raises(ValueError):
        TrainedModels(fit(ex, REACHED_TENURED), fit(ex, SURVIVED_EDEN))


# -- op_scan ----------------------------------------------------------------------

def test_op_scan_reclaims_unreachable():
    rt = PredictiveRuntime(FixedBinding({"A": (0.9, 0.1)}))
    heap = Heap()
    a = heap.allocate("A", 8)
    classify_new(rt, heap, a)
    r = op_scan(rt, heap)
    assert r.objects_reclaimed_by_op == 1 and r.objects_scanned == 1
    assert not heap.get(a).alive and a not in rt.registry


def test_op_scan_pretenures_long_lived():
    rt = PredictiveRuntime(FixedBinding({"A": (0.9, 0.9)}))
    heap = Heap()
    a = heap.allocate("A", 8)
    heap.link(ROOT, a)
    classify_new(rt, heap, a)
    r = op_scan(rt, heap)
    assert r.objects_pre_promoted_to_tenured == 1
    assert heap.get(a).space is Space.TENURED and heap.get(a).age == 0
    rt.registry.check(heap)


def test_op_scan_mid_lived_in_survivor_is_idle():
    rt = PredictiveRuntime(FixedBinding({"A": (0.9, 0.1)}))
    heap = Heap()
    a = heap.allocate("A", 8)
    heap.link(ROOT, a)
    classify_new(rt, heap, a)
    first = op_scan(rt, heap)
    assert first.objects_pre_promoted_to_survivor == 1
    assert heap.get(a).space is heap.active_survivor
    again = op_scan(rt, heap)
    assert again.objects_scanned == 1
    assert (again.objects_reclaimed_by_op, again.objects_pre_promoted_to_survivor,
            again.objects_pre_promoted_to_tenured, again.objects_moved_to_gc_partition) == (0, 0, 0, 0)


def test_op_scan_demotes_on_fresh_die_prediction():
    binding = FixedBinding({"A": (0.9, 0.1)})
    rt = PredictiveRuntime(binding)
    heap = Heap()
    a = heap.allocate("A", 8)
    heap.link(ROOT, a)
    classify_new(rt, heap, a)
    op_scan(rt, heap)
    binding.table["A"] = (0.1, 0.0)
    r = op_scan(rt, heap)
    assert r.objects_moved_to_gc_partition == 1
    assert rt.registry.gc_ids() == [a]
    rt.registry.check(heap)


def test_op_cost_accounted():
    rt = PredictiveRuntime(FixedBinding({"A": (0.9, 0.9)}))
    heap = Heap()
    a = heap.allocate("A", 100)
    heap.link(ROOT, a)
    classify_new(rt, heap, a)
    r = op_scan(rt, heap, CostModel())
    assert r.op_cost == pytest.approx(1 + 100 * 0.01 + 2)


# -- predictive cycle ------------------------------------------------------------------

def test_predictive_cycle_empty_heap():
    gc, op = predictive_gc_cycle(PredictiveRuntime(FixedBinding({})), Heap())
    assert gc.objects_swept == gc.live_objects_handled == 0 and gc.pause_cost == 0
    assert op.objects_scanned == 0 and op.op_cost == 0


def test_oracle_cycle_handles_no_live_objects():
    cfg = HeapConfig(eden_capacity_bytes=64)
    events = [Alloc("k", "K", 16), Alloc("d", "D", 16), Unlink("ROOT", "d"),
              Alloc("e", "E", 16), Unlink("ROOT", "e"), Alloc("x", "X", 32)]
    trace = Trace(events)
    arm = PredictiveArm("oracle", OracleGroundTruth.from_trace(trace, cfg), cfg, check_registry=True)
    replay(trace, cfg, arm)
    minors = [r for r in arm.gc_reports if r.kind == "Minor"]
    assert len(minors) == 2
    assert all(r.live_objects_handled == 0 for r in minors)
    assert minors[0].objects_reclaimed == 2


def test_false_negative_is_promoted_like_baseline():
    rt = PredictiveRuntime(FixedBinding({"A": (0.1, 0.0)}))
    heap = Heap()
    a = heap.allocate("A", 24)
    heap.link(ROOT, a)
    gc, _ = predictive_gc_cycle(rt, heap)
    assert gc.live_objects_handled == 1 and gc.objects_promoted_to_survivor == 1
    assert heap.get(a).space is Space.SURVIVOR0 and heap.get(a).age == 1


def test_false_positive_is_cleaned_up():
    # predicted long-lived, pretenured, then dies: the next major collection reclaims it
    cfg = HeapConfig()
    rt = PredictiveRuntime(FixedBinding({"A": (0.9, 0.9)}))
    heap = Heap(cfg)
    a = heap.allocate("A", 24)
    heap.link(ROOT, a)
    predictive_gc_cycle(rt, heap)
    assert heap.get(a).space is Space.TENURED
    heap.unlink(ROOT, a)
    from predgc.baseline import major_gc
    assert major_gc(heap, cfg).objects_reclaimed == 1


def test_off_schedule_collection_is_refused():
    cfg = HeapConfig(eden_capacity_bytes=64)
    trace = Trace([Alloc("a", "A", 8)])
    arm = PredictiveArm("oracle", OracleGroundTruth.from_trace(trace, cfg), cfg)
    heap = Heap(cfg)
    heap.allocate("A", 8)
    with pytest.raises(SafetyViolation):
        arm.collect(heap, 0)


# -- registry -------------------------------------------------------------------------

def test_registry_order_long_before_mid():
    reg = DualRootRegistry()
    reg.add_op(1, LifetimeClass.MID_LIVED)
    reg.add_op(2, LifetimeClass.LONG_LIVED)
    reg.add_op(3, LifetimeClass.MID_LIVED)
    reg.add_op(4, LifetimeClass.LONG_LIVED)
    assert [i for i, _ in reg.op_partition] == [2, 4, 1, 3]
    reg.add_gc(2)
    assert [i for i, _ in reg.op_partition] == [4, 1, 3] and reg.gc_ids() == [2]
    with pytest.raises(ValueError):
        reg.add_op(5, LifetimeClass.DIE_IN_EDEN)


def test_registry_check_detects_missing():
    heap = Heap()
    heap.allocate("A", 8)
    with pytest.raises(SafetyViolation):
        DualRootRegistry().check(heap)


class _Mixed(FixedBinding):
    """Deterministic pseudo-random predictions so every registry path runs."""

    def predict(self, heap, obj_id, now, memo):
        rng = random.Random(obj_id * 7919 + now)
        ps, pt = rng.random(), rng.random()
        return LifetimePrediction(ps, pt, expected_lifetime(ps, pt, self.policy))


class _Recorder(PredictiveArm):
    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.snapshots = []

    def _cycle(self, heap, position):
        live = reachable_oracle(heap)
        super()._cycle(heap, position)
        for i in live:
            assert heap.objects[i].alive
        self.runtime.registry.check(heap)
        self.snapshots.append(heap.state())


SMALL = HeapConfig(eden_capacity_bytes=2048, survivor_capacity_bytes=512,
                   tenured_capacity_bytes=8192)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_partition_totality_and_safety(seed):
    trace = random_trace(seed, n_objects=200)
    arm = _Recorder("mixed", _Mixed({}), SMALL)
    heap = replay(trace, SMALL, arm)
    assert set(heap.alive_ids()) == reachable_oracle(heap) & set(heap.alive_ids())
    for op in arm.op_reports:
        acted = (op.objects_reclaimed_by_op + op.objects_pre_promoted_to_survivor
                 + op.objects_pre_promoted_to_tenured + op.objects_moved_to_gc_partition)
        assert op.objects_scanned >= acted


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_concurrent_equals_serial(seed):
    trace = random_trace(seed, n_objects=200)
    states = []
    for concurrent in (False, True):
        arm = _Recorder("mixed", _Mixed({}), SMALL, concurrent=concurrent)
        heap = replay(trace, SMALL, arm)
        states.append((arm.snapshots, heap.state(),
                       [r.as_dict() for r in arm.gc_reports], [r.as_dict() for r in arm.op_reports]))
    assert states[0] == states[1]


def test_link_events_through_trace_keep_safety():
    cfg = HeapConfig(eden_capacity_bytes=48)
    events = [Alloc("a", "A", 16), Alloc("b", "B", 16), Link("a", "b"), Unlink("ROOT", "b"),
              Alloc("c", "C", 32), Unlink("ROOT", "a"), Alloc("d", "D", 32)]
    trace = Trace(events)
    arm = PredictiveArm("oracle", OracleGroundTruth.from_trace(trace, cfg), cfg, check_registry=True)
    heap = replay(trace, cfg, arm)
    assert all(r.live_objects_handled == 0 for r in arm.gc_reports if r.kind == "Minor")
    assert sorted(heap.reclaimed) == [1, 2]
    assert heap.alive_ids() == [3, 4]
