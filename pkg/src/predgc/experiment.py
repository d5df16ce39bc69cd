"""Side-by-side replay of one trace under the baseline and predictive collectors."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

from predgc.baseline import GC_CSV_COLUMNS, MINOR, BaselineArm, CostModel
from predgc.driver import replay
from predgc.heap import HeapConfig, SafetyViolation
from predgc.histogram import format_histogram
from predgc.runtime import OracleGroundTruth, PredictiveArm
from predgc.trace import Trace, analyze_lifetimes

OP_CSV_COLUMNS = ["op_scanned", "op_reclaimed", "op_pre_promoted_s", "op_pre_promoted_t", "op_cost"]


@dataclass
class ArmResult:
    name: str
    gc_reports: list
    op_reports: list
    reclaimed: list
    final_state: dict
    final_histogram: object

    @property
    def minor_reports(self):
        return [r for r in self.gc_reports if r.kind == MINOR]

    def totals(self):
        gc = self.gc_reports
        return {
            "minor_collections": len(self.minor_reports),
            "major_collections": len(gc) - len(self.minor_reports),
            "total_pause_cost": sum(r.pause_cost for r in gc),
            "total_live_objects_handled": sum(r.live_objects_handled for r in gc),
            "minor_live_objects_handled": sum(r.live_objects_handled for r in self.minor_reports),
            "total_objects_swept": sum(r.objects_swept for r in gc),
            "total_bytes_copied": sum(r.bytes_copied for r in gc),
            "total_op_cost": sum(r.op_cost for r in self.op_reports),
            "op_objects_reclaimed": sum(r.objects_reclaimed_by_op for r in self.op_reports),
            "objects_reclaimed": len(self.reclaimed),
            "objects_alive_at_end": len(self.final_state),
        }

    def cycles_csv(self) -> str:
        """GC rows; minor rows of predictive arms carry the OP columns."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(GC_CSV_COLUMNS + OP_CSV_COLUMNS)
        ops = iter(self.op_reports)
        for r in self.gc_reports:
            op = next(ops, None) if (r.kind == MINOR and self.op_reports) else None
            extra = ([op.objects_scanned, op.objects_reclaimed_by_op,
                      op.objects_pre_promoted_to_survivor, op.objects_pre_promoted_to_tenured,
                      repr(op.op_cost)] if op else [""] * len(OP_CSV_COLUMNS))
            w.writerow(r.csv_row() + extra)
        return buf.getvalue()

    def to_dict(self):
        return {
            "totals": self.totals(),
            "gc_cycles": [r.as_dict() for r in self.gc_reports],
            "op_cycles": [r.as_dict() for r in self.op_reports],
            "final_histogram": [[r.class_name, r.instances, r.bytes]
                                for r in self.final_histogram.rows],
        }


@dataclass
class ExperimentReport:
    arms: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def pause_ratio(self, arm, reference="baseline"):
        base = self.arms[reference].totals()["total_pause_cost"]
        return self.arms[arm].totals()["total_pause_cost"] / base if base else None

    def to_json(self) -> str:
        doc = {
            "metadata": self.metadata,
            "arms": {name: arm.to_dict() for name, arm in self.arms.items()},
            "pause_ratio": {name: self.pause_ratio(name) for name in self.arms if name != "baseline"},
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _result(arm, heap):
    return ArmResult(arm.name, arm.gc_reports, arm.op_reports, sorted(heap.reclaimed),
                     heap.state(), heap.histogram())


def run_arm(trace, config, arm, observer=None):
    heap = replay(trace, config, arm, observer=observer)
    heap.check_invariants()
    return _result(arm, heap), heap


def run_collector_comparison(trace: Trace, config: HeapConfig | None = None, bindings=None,
                             cost_model: CostModel | None = None, concurrent=False,
                             observer=None, check_registry=False) -> ExperimentReport:
    """Replay ``trace`` under the baseline and under each predictive binding.

    ``bindings`` maps arm names to a binding object or the string
    ``"oracle"`` (perfect predictions derived from the trace); the default
    runs the oracle arm only.  Every arm must end with the same set of
    reclaimed ids, else SafetyViolation.
    """
    config = config or HeapConfig()
    cost_model = cost_model or CostModel()
    if bindings is None:
        bindings = {"oracle": "oracle"}
    lifetimes = analyze_lifetimes(trace)  # rejects traces whose outcome could depend on the arm
    report = ExperimentReport(metadata=dict(trace.metadata))
    arms = [BaselineArm(config, cost_model)]
    for name, binding in bindings.items():
        if binding == "oracle":
            binding = OracleGroundTruth.from_trace(trace, config, lifetimes)
        arms.append(PredictiveArm(name, binding, config, cost_model, concurrent, check_registry))
    for arm in arms:
        obs = (lambda stage, heap, pos, _n=arm.name: observer(_n, stage, heap, pos)) if observer else None
        report.arms[arm.name], _ = run_arm(trace, config, arm, obs)
    reference = report.arms["baseline"].reclaimed
    for name, res in report.arms.items():
        if res.reclaimed != reference:
            diff = sorted(set(res.reclaimed) ^ set(reference))[:5]
            raise SafetyViolation(f"arm {name!r} reclaimed a different set than baseline: {diff}")
    return report


def write_report(report: ExperimentReport, outdir) -> list:
    """Write report.json, per-arm cycle CSVs and final histograms; return paths."""
    from pathlib import Path

    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "report.json"]
    written[0].write_text(report.to_json(), encoding="utf-8")
    for name, arm in report.arms.items():
        p = out / f"cycles_{name}.csv"
        p.write_text(arm.cycles_csv(), encoding="utf-8")
        h = out / f"histogram_{name}.txt"
        h.write_text(format_histogram(arm.final_histogram), encoding="utf-8")
        written += [p, h]
    return written
