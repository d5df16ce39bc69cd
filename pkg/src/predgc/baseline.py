"""The traditional stop-the-world generational collector."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass

from predgc.heap import Heap, HeapConfig, Space, other_survivor

MINOR = "Minor"
MAJOR = "Major"

GC_CSV_COLUMNS = ["cycle", "kind", "swept", "reclaimed", "live_handled", "bytes_copied",
                  "promoted_s", "promoted_t", "pause_cost"]


@dataclass
class CostModel:
    """Abstract pause cost; copying and promoting live objects is what the
    predictive design tries to take off the pause path."""

    cost_per_swept_object: float = 1.0
    cost_per_copied_byte: float = 0.01
    cost_per_promoted_object: float = 2.0

    def __post_init__(self):
        if min(self.cost_per_swept_object, self.cost_per_copied_byte,
               self.cost_per_promoted_object) < 0:
            raise ValueError("cost coefficients must be non-negative")

    def cost(self, visited, bytes_copied, promotions):
        return (visited * self.cost_per_swept_object
                + bytes_copied * self.cost_per_copied_byte
                + promotions * self.cost_per_promoted_object)


@dataclass
class GcReport:
    cycle_index: int
    kind: str
    objects_swept: int = 0
    objects_reclaimed: int = 0
    live_objects_handled: int = 0
    bytes_copied: int = 0
    objects_promoted_to_survivor: int = 0
    objects_promoted_to_tenured: int = 0
    pause_cost: float = 0.0

    def price(self, cost_model: CostModel):
        self.pause_cost = cost_model.cost(
            self.objects_swept, self.bytes_copied,
            self.objects_promoted_to_survivor + self.objects_promoted_to_tenured)
        return self

    def csv_row(self):
        return [self.cycle_index, self.kind, self.objects_swept, self.objects_reclaimed,
                self.live_objects_handled, self.bytes_copied,
                self.objects_promoted_to_survivor, self.objects_promoted_to_tenured,
                repr(self.pause_cost)]

    def as_dict(self):
        return asdict(self)


def evacuate(heap: Heap, members, to_space: Space, report: GcReport):
    """Sweep ``members`` (young objects): reclaim the unreachable ones, age
    the rest and copy them to ``to_space`` or Tenured.

    Returns ``(moved_to_survivor, tenured, reclaimed)`` id lists.  Survivor
    capacity is not enforced here; see :func:`settle_survivor_overflow`.
    """
    threshold = heap.config.tenuring_age_threshold
    moved, tenured, reclaimed = [], [], []
    for obj_id in members:
        rec = heap.objects[obj_id]
        report.objects_swept += 1
        if not heap.is_reachable(obj_id):
            heap.reclaim(obj_id)
            report.objects_reclaimed += 1
            reclaimed.append(obj_id)
            continue
        report.live_objects_handled += 1
        rec.age += 1
        if rec.age >= threshold:
            heap.promote(obj_id, Space.TENURED)
            report.objects_promoted_to_tenured += 1
            report.bytes_copied += rec.size_bytes
            tenured.append(obj_id)
        elif rec.space is not to_space:
            heap.promote(obj_id, to_space)
            report.objects_promoted_to_survivor += 1
            report.bytes_copied += rec.size_bytes
            moved.append(obj_id)
    return moved, tenured, reclaimed


def settle_survivor_overflow(heap: Heap, space: Space, arrivals):
    """Keep arrivals in ``space`` first-fit in ascending id order; the ones
    that do not fit go to Tenured.  Returns the overflowed ids.

    The outcome depends only on the set of arrivals, so it is the same
    whatever order concurrent legs moved them in.
    """
    arrivals = sorted(arrivals)
    arrived_bytes = sum(heap.objects[i].size_bytes for i in arrivals)
    budget = heap.config.survivor_capacity_bytes - (heap.occupancy[space] - arrived_bytes)
    overflow = []
    for obj_id in arrivals:
        size = heap.objects[obj_id].size_bytes
        if size <= budget:
            budget -= size
        else:
            heap.promote(obj_id, Space.TENURED)
            overflow.append(obj_id)
    return overflow


def minor_gc(heap: Heap, config: HeapConfig | None = None,
             cost_model: CostModel | None = None) -> GcReport:
    """Collect Eden and the active survivor space, then swap survivor roles."""
    cost_model = cost_model or CostModel()
    from_space = heap.active_survivor
    to_space = other_survivor(from_space)
    report = GcReport(heap.current_cycle + 1, MINOR)
    heap.mark_reachable()
    members = heap.ids_in(Space.EDEN) + heap.ids_in(from_space)
    moved, _, _ = evacuate(heap, members, to_space, report)
    for _ in settle_survivor_overflow(heap, to_space, moved):
        report.objects_promoted_to_survivor -= 1
        report.objects_promoted_to_tenured += 1
    heap.active_survivor = to_space
    heap.current_cycle += 1
    return report.price(cost_model)


def major_gc(heap: Heap, config: HeapConfig | None = None,
             cost_model: CostModel | None = None) -> GcReport:
    """Reclaim unreachable Tenured objects.  Nothing is copied."""
    cost_model = cost_model or CostModel()
    report = GcReport(heap.current_cycle, MAJOR)
    for obj_id in heap.ids_in(Space.TENURED):
        report.objects_swept += 1
        if heap.is_reachable(obj_id):
            report.live_objects_handled += 1
        else:
            heap.reclaim(obj_id)
            report.objects_reclaimed += 1
    return report.price(cost_model)


def needs_major(heap: Heap) -> bool:
    cfg = heap.config
    return heap.occupancy[Space.TENURED] >= cfg.major_gc_occupancy_fraction * cfg.tenured_capacity_bytes


class BaselineArm:
    name = "baseline"

    def __init__(self, config: HeapConfig, cost_model: CostModel | None = None):
        self.config = config
        self.cost_model = cost_model or CostModel()
        self.gc_reports: list[GcReport] = []
        self.op_reports = []

    def on_alloc(self, heap, obj_id, position):
        pass

    def collect(self, heap, position):
        self.gc_reports.append(minor_gc(heap, self.config, self.cost_model))
        if needs_major(heap):
            self.gc_reports.append(major_gc(heap, self.config, self.cost_model))

    def finish(self, heap, position):
        # a full collection so every arm ends with the same reclaimed set
        self.gc_reports.append(minor_gc(heap, self.config, self.cost_model))
        self.gc_reports.append(major_gc(heap, self.config, self.cost_model))


class _LabelingArm(BaselineArm):
    def __init__(self, config):
        super().__init__(config)
        self.features = {}
        self.survived = set()
        self.tenured = set()

    def on_alloc(self, heap, obj_id, position):
        from predgc.predictor import extract_features

        self.features[obj_id] = extract_features(heap, obj_id)

    def collect(self, heap, position):
        super().collect(heap, position)
        for obj_id in heap.alive_ids():
            rec = heap.objects[obj_id]
            if rec.age >= 1:
                self.survived.add(obj_id)
            if rec.space is Space.TENURED:
                self.survived.add(obj_id)
                self.tenured.add(obj_id)


def collect_labels(trace, config: HeapConfig | None = None):
    """Replay ``trace`` under the baseline collector and label every object
    with whether it survived Eden and whether it ever reached Tenured.

    Objects allocated after the last minor GC are censored (left out).
    """
    from predgc.driver import replay
    from predgc.predictor import LabeledExample

    config = config or HeapConfig()
    arm = _LabelingArm(config)
    heap = replay(trace, config, arm, finish=False)
    last_cycle = heap.current_cycle
    examples = []
    for obj_id, feats in arm.features.items():
        if heap.objects[obj_id].birth_cycle >= last_cycle:
            continue
        examples.append(LabeledExample(feats, obj_id in arm.survived, obj_id in arm.tenured))
    return examples


def reports_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GC_CSV_COLUMNS)
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue()
