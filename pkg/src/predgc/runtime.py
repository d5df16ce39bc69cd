"""Predictive collection: the dual-root registry, the Object Promoter (OP)
and the cycle that sweeps only the objects predicted to die.

Every alive young object sits under one of two sub-roots.  The GC sub-root
holds objects predicted to die before the next minor GC; the OP sub-root
holds predicted survivors, long-lived ones first.  A predictive cycle runs
two legs over these disjoint sets: the GC leg (on the pause path) and the OP
leg (off it).  The legs may run on separate threads; registry changes and
survivor-capacity overflow are reconciled after both finish, so the result
does not depend on the interleaving.
"""

from __future__ import annotations

import bisect
import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

from predgc.baseline import (MINOR, CostModel, GcReport, evacuate, major_gc, needs_major,
                             settle_survivor_overflow)
from predgc.heap import Heap, HeapConfig, SafetyViolation, Space, other_survivor
from predgc.predictor import (REACHED_TENURED, SURVIVED_EDEN, CountsModel, Decision,
                              DecisionPolicy, decide, extract_features, posterior)
from predgc.trace import Trace, analyze_lifetimes, gc_schedule


class LifetimeClass(enum.Enum):
    DIE_IN_EDEN = "DieInEden"
    MID_LIVED = "MidLived"
    LONG_LIVED = "LongLived"


def expected_lifetime(p_survive_eden, p_reach_tenured, policy: DecisionPolicy) -> LifetimeClass:
    if decide(p_survive_eden, policy) is Decision.DIE:
        return LifetimeClass.DIE_IN_EDEN
    if decide(p_reach_tenured, policy) is Decision.SURVIVE:
        return LifetimeClass.LONG_LIVED
    return LifetimeClass.MID_LIVED


@dataclass(frozen=True)
class LifetimePrediction:
    p_survive_eden: float
    p_reach_tenured: float
    lifetime_class: LifetimeClass


# -- predictor bindings ---------------------------------------------------------

class TrainedModels:
    """Predictions from the two fitted survival models."""

    oracle = False

    def __init__(self, survive_model: CountsModel, tenure_model: CountsModel,
                 policy: DecisionPolicy | None = None):
        if survive_model.target != SURVIVED_EDEN or tenure_model.target != REACHED_TENURED:
            raise ValueError("expected a survived_eden model and a reached_tenured model")
        self.survive_model = survive_model
        self.tenure_model = tenure_model
        self.policy = policy or DecisionPolicy()

    def predict_features(self, features) -> LifetimePrediction:
        ps = posterior(self.survive_model, features)
        pt = posterior(self.tenure_model, features)
        return LifetimePrediction(ps, pt, expected_lifetime(ps, pt, self.policy))

    def predict(self, heap, obj_id, now, memo):
        feats = extract_features(heap, obj_id)
        memo[obj_id] = feats
        return self.predict_features(feats)

    def rescore(self, heap, obj_id, now, previous, memo):
        """Fresh prediction, recomputed only if the object's feature bins moved."""
        feats = extract_features(heap, obj_id)
        if memo.get(obj_id) == feats:
            return previous
        memo[obj_id] = feats
        return self.predict_features(feats)


class OracleGroundTruth:
    """Perfect predictions read from the trace's own future (test/experiment
    use only).

    An object's remaining lifetime is the number of upcoming minor GCs it
    survives; zero means it dies in Eden, at least the tenuring threshold
    means the baseline would tenure it.
    """

    oracle = True
    policy = DecisionPolicy(0.5)

    def __init__(self, death_index, gc_points, tenuring_age_threshold):
        self.death_index = death_index
        self.gc_points = list(gc_points)
        self.tenuring_age_threshold = tenuring_age_threshold

    @classmethod
    def from_trace(cls, trace: Trace, config: HeapConfig, lifetimes=None):
        lifetimes = lifetimes or analyze_lifetimes(trace)
        points = gc_schedule(trace, config.eden_capacity_bytes) + [len(trace.events)]
        return cls(lifetimes.death_index, points, config.tenuring_age_threshold)

    def survivals(self, obj_id, now):
        """Scheduled collections after ``now`` that the object lives through."""
        death = self.death_index[obj_id - 1]
        lo = bisect.bisect_right(self.gc_points, now)
        hi = len(self.gc_points) if death is None else bisect.bisect_right(self.gc_points, death)
        return max(0, hi - lo)

    def predict(self, heap, obj_id, now, memo):
        r = self.survivals(obj_id, now)
        ps = 1.0 if r >= 1 else 0.0
        pt = 1.0 if r >= self.tenuring_age_threshold else 0.0
        return LifetimePrediction(ps, pt, expected_lifetime(ps, pt, self.policy))

    def rescore(self, heap, obj_id, now, previous, memo):
        return self.predict(heap, obj_id, now, memo)


# -- registry --------------------------------------------------------------------

GC_ROOT = "gc"
OP_ROOT = "op"


class DualRootRegistry:
    """Partition of young objects between the GC sub-root and the OP
    sub-root.  OP entries are kept long-lived first, then mid-lived, each
    tier in insertion order."""

    def __init__(self):
        self.gc_partition: dict[int, None] = {}
        self._long: dict[int, None] = {}
        self._mid: dict[int, None] = {}
        self.membership: dict[int, str] = {}

    def __contains__(self, obj_id):
        return obj_id in self.membership

    def __len__(self):
        return len(self.membership)

    def add_gc(self, obj_id):
        self._drop(obj_id)
        self.gc_partition[obj_id] = None
        self.membership[obj_id] = GC_ROOT

    def add_op(self, obj_id, lifetime_class: LifetimeClass):
        self._drop(obj_id)
        if lifetime_class is LifetimeClass.LONG_LIVED:
            self._long[obj_id] = None
        elif lifetime_class is LifetimeClass.MID_LIVED:
            self._mid[obj_id] = None
        else:
            raise ValueError("objects predicted to die belong under the GC root")
        self.membership[obj_id] = OP_ROOT

    def remove(self, obj_id):
        self._drop(obj_id)

    def _drop(self, obj_id):
        where = self.membership.pop(obj_id, None)
        if where == GC_ROOT:
            del self.gc_partition[obj_id]
        elif where == OP_ROOT:
            self._long.pop(obj_id, None)
            self._mid.pop(obj_id, None)

    def gc_ids(self):
        return sorted(self.gc_partition)

    @property
    def op_partition(self):
        """``[(id, lifetime_class), ...]`` in scan order."""
        return ([(i, LifetimeClass.LONG_LIVED) for i in self._long]
                + [(i, LifetimeClass.MID_LIVED) for i in self._mid])

    def check(self, heap: Heap):
        """Every alive non-Tenured object in exactly one partition, nothing else."""
        young = {i for i, r in heap.objects.items() if r.alive and r.space is not Space.TENURED}
        if set(self.membership) != young:
            missing = sorted(young - set(self.membership))[:5]
            extra = sorted(set(self.membership) - young)[:5]
            raise SafetyViolation(f"registry out of sync: missing {missing}, extra {extra}")
        if set(self.gc_partition) & (set(self._long) | set(self._mid)):
            raise SafetyViolation("object under both roots")
        if set(self._long) & set(self._mid):
            raise SafetyViolation("object in both OP tiers")
        seen_mid = False
        for _, cls in self.op_partition:
            if cls is LifetimeClass.MID_LIVED:
                seen_mid = True
            elif seen_mid:
                raise SafetyViolation("long-lived entry after a mid-lived one")


# -- the OP ----------------------------------------------------------------------

@dataclass
class OpReport:
    cycle_index: int = 0
    objects_scanned: int = 0
    objects_reclaimed_by_op: int = 0
    objects_pre_promoted_to_survivor: int = 0
    objects_pre_promoted_to_tenured: int = 0
    objects_moved_to_gc_partition: int = 0
    bytes_copied: int = 0
    op_cost: float = 0.0

    def price(self, cost_model: CostModel):
        self.op_cost = cost_model.cost(
            self.objects_scanned, self.bytes_copied,
            self.objects_pre_promoted_to_survivor + self.objects_pre_promoted_to_tenured)
        return self

    def as_dict(self):
        return asdict(self)


class PredictiveRuntime:
    def __init__(self, binding, concurrent: bool = False):
        self.binding = binding
        self.registry = DualRootRegistry()
        self.predictions: dict[int, LifetimePrediction] = {}
        self.features = {}
        self.now = 0
        self.concurrent = concurrent


def classify_new(runtime: PredictiveRuntime, heap: Heap, obj_id: int) -> str:
    """Predict a fresh object's lifetime and file it under a sub-root."""
    rec = heap.get(obj_id)
    if not rec.alive or rec.space is not Space.EDEN:
        raise ValueError(f"object {obj_id} is not a live Eden object")
    pred = runtime.binding.predict(heap, obj_id, runtime.now, runtime.features)
    runtime.predictions[obj_id] = pred
    if pred.lifetime_class is LifetimeClass.DIE_IN_EDEN:
        runtime.registry.add_gc(obj_id)
        return GC_ROOT
    runtime.registry.add_op(obj_id, pred.lifetime_class)
    return OP_ROOT


def _fresh_predictions(runtime, heap, entries):
    # computed before either leg moves anything, so both schedules see the
    # same inputs
    fresh = {}
    for obj_id, _ in entries:
        if heap.is_reachable(obj_id):
            fresh[obj_id] = runtime.binding.rescore(
                heap, obj_id, runtime.now, runtime.predictions[obj_id], runtime.features)
    return fresh


def _op_leg(heap, entries, fresh, to_space, report):
    """Walk OP entries in order.  One action per entry per scan: reclaim the
    dead, pretenure long-lived, move mid-lived out of Eden; otherwise apply
    the fresh prediction (demote to the GC root or change tier)."""
    changes, arrivals = [], []
    for obj_id, cls in entries:
        report.objects_scanned += 1
        rec = heap.objects[obj_id]
        if not heap.is_reachable(obj_id):
            heap.reclaim(obj_id)
            report.objects_reclaimed_by_op += 1
            changes.append(("remove", obj_id, None))
            continue
        if cls is LifetimeClass.LONG_LIVED and rec.space is not Space.TENURED:
            heap.promote(obj_id, Space.TENURED)
            report.objects_pre_promoted_to_tenured += 1
            report.bytes_copied += rec.size_bytes
            changes.append(("remove", obj_id, None))
            continue
        if cls is LifetimeClass.MID_LIVED and rec.space is Space.EDEN:
            heap.promote(obj_id, to_space)
            report.objects_pre_promoted_to_survivor += 1
            report.bytes_copied += rec.size_bytes
            arrivals.append(obj_id)
            continue
        new = fresh[obj_id]
        if new.lifetime_class is LifetimeClass.DIE_IN_EDEN:
            report.objects_moved_to_gc_partition += 1
            changes.append(("demote", obj_id, new))
        elif new.lifetime_class is not cls:
            changes.append(("tier", obj_id, new))
        else:
            changes.append(("keep", obj_id, new))
    return changes, arrivals


def _apply_op_changes(runtime, changes):
    reg = runtime.registry
    for kind, obj_id, pred in changes:
        if kind == "remove":
            reg.remove(obj_id)
            runtime.predictions.pop(obj_id, None)
            runtime.features.pop(obj_id, None)
        elif kind == "demote":
            runtime.predictions[obj_id] = pred
            reg.add_gc(obj_id)
        elif kind == "tier":
            runtime.predictions[obj_id] = pred
            reg.add_op(obj_id, pred.lifetime_class)
        else:
            runtime.predictions[obj_id] = pred


def _settle_op_overflow(runtime, heap, space, arrivals, report):
    for obj_id in settle_survivor_overflow(heap, space, arrivals):
        report.objects_pre_promoted_to_survivor -= 1
        report.objects_pre_promoted_to_tenured += 1
        runtime.registry.remove(obj_id)
        runtime.predictions.pop(obj_id, None)
        runtime.features.pop(obj_id, None)


def op_scan(runtime: PredictiveRuntime, heap: Heap, cost_model: CostModel | None = None) -> OpReport:
    """A stand-alone OP pass at a quiescent point; mid-lived objects move
    into the active survivor space."""
    cost_model = cost_model or CostModel()
    heap.mark_reachable()
    entries = runtime.registry.op_partition
    fresh = _fresh_predictions(runtime, heap, entries)
    report = OpReport(heap.current_cycle)
    changes, arrivals = _op_leg(heap, entries, fresh, heap.active_survivor, report)
    _apply_op_changes(runtime, changes)
    _settle_op_overflow(runtime, heap, heap.active_survivor, arrivals, report)
    return report.price(cost_model)


def predictive_gc_cycle(runtime: PredictiveRuntime, heap: Heap, config: HeapConfig | None = None,
                        cost_model: CostModel | None = None):
    """One minor collection: the GC leg sweeps only the GC sub-root while the
    OP leg scans the OP sub-root.  Returns ``(GcReport, OpReport)``; only
    the GC leg is charged to the pause."""
    cost_model = cost_model or CostModel()
    reg = runtime.registry
    for obj_id in heap.ids_in(Space.EDEN):
        if obj_id not in reg:
            classify_new(runtime, heap, obj_id)

    heap.mark_reachable()  # one marking pass shared by both legs
    gc_members = reg.gc_ids()
    entries = reg.op_partition
    if set(gc_members) & {i for i, _ in entries}:
        raise SafetyViolation("object claimed by both the GC and the OP")
    fresh = _fresh_predictions(runtime, heap, entries)
    to_space = other_survivor(heap.active_survivor)
    cycle = heap.current_cycle + 1
    gc_report = GcReport(cycle, MINOR)
    op_report = OpReport(cycle)

    def gc_leg():
        return evacuate(heap, gc_members, to_space, gc_report)

    def op_leg():
        return _op_leg(heap, entries, fresh, to_space, op_report)

    if runtime.concurrent:
        with ThreadPoolExecutor(max_workers=2) as pool:
            gc_future, op_future = pool.submit(gc_leg), pool.submit(op_leg)
            (moved, tenured, reclaimed), (changes, op_arrivals) = gc_future.result(), op_future.result()
    else:
        moved, tenured, reclaimed = gc_leg()
        changes, op_arrivals = op_leg()

    # reconcile: registry halves, then shared survivor capacity
    for obj_id in tenured + reclaimed:
        reg.remove(obj_id)
        runtime.predictions.pop(obj_id, None)
        runtime.features.pop(obj_id, None)
    _apply_op_changes(runtime, changes)
    gc_moved = set(moved)
    for obj_id in settle_survivor_overflow(heap, to_space, moved + op_arrivals):
        if obj_id in gc_moved:
            gc_report.objects_promoted_to_survivor -= 1
            gc_report.objects_promoted_to_tenured += 1
        else:
            op_report.objects_pre_promoted_to_survivor -= 1
            op_report.objects_pre_promoted_to_tenured += 1
        reg.remove(obj_id)
        runtime.predictions.pop(obj_id, None)
        runtime.features.pop(obj_id, None)

    heap.active_survivor = to_space
    heap.current_cycle += 1
    return gc_report.price(cost_model), op_report.price(cost_model)


class PredictiveArm:
    """Collection policy for the replay driver using a predictive runtime."""

    def __init__(self, name, binding, config: HeapConfig, cost_model: CostModel | None = None,
                 concurrent=False, check_registry=False):
        self.name = name
        self.config = config
        self.cost_model = cost_model or CostModel()
        self.runtime = PredictiveRuntime(binding, concurrent)
        self.gc_reports: list[GcReport] = []
        self.op_reports: list[OpReport] = []
        self.check_registry = check_registry
        self._schedule = iter(binding.gc_points) if binding.oracle else None

    def on_alloc(self, heap, obj_id, position):
        self.runtime.now = position
        classify_new(self.runtime, heap, obj_id)

    def _cycle(self, heap, position):
        if self._schedule is not None and next(self._schedule, None) != position:
            raise SafetyViolation(f"collection at event {position} is off the oracle's schedule")
        self.runtime.now = position
        gc, op = predictive_gc_cycle(self.runtime, heap, self.config, self.cost_model)
        self.gc_reports.append(gc)
        self.op_reports.append(op)
        if self.check_registry:
            self.runtime.registry.check(heap)

    def collect(self, heap, position):
        self._cycle(heap, position)
        if needs_major(heap):
            self.gc_reports.append(major_gc(heap, self.config, self.cost_model))

    def finish(self, heap, position):
        self._cycle(heap, position)
        self.gc_reports.append(major_gc(heap, self.config, self.cost_model))

