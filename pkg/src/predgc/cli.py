"""Command-line driver.

    predgc gen   --seed 42 --flows 3 --allocs 5000 -o trace.txt
    predgc train trace1.txt trace2.txt --outdir models/
    predgc tune  scored.csv --target-precision 1.0
    predgc run   --trace trace.txt --predictor all --survive-model ... --outdir out/
    predgc histo-diff old.txt new.txt

Every subcommand also reads ``--config FILE``: flat ``key = value`` lines
using the long flag names (dashes or underscores), overridden by flags given
on the command line.  ``PREDGC_OUTDIR`` overrides the default output
directory.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from pathlib import Path

from predgc.baseline import CostModel, collect_labels
from predgc.experiment import run_collector_comparison, write_report
from predgc.heap import HeapConfig, MalformedTrace, SafetyViolation
from predgc.histogram import HistogramParseError, format_diff_csv, histo_diff, parse_histogram
from predgc.predictor import (REACHED_TENURED, SURVIVED_EDEN, DecisionPolicy, dumps_dataset,
                              dumps_model, fit, loads_dataset, loads_model, posterior,
                              tune_threshold)
from predgc.runtime import TrainedModels
from predgc.trace import (TraceFormatError, WorkloadConfig, generate_synthetic, load_trace,
                          save_trace)

EXIT_USAGE = 2
EXIT_SAFETY = 3


class UsageError(Exception):
    pass


def _outdir(args):
    return Path(args.outdir or os.environ.get("PREDGC_OUTDIR") or ".")


def _add_workload(p):
    g = p.add_argument_group("workload")
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--flows", type=int, default=3)
    g.add_argument("--allocs", type=int, default=20000)
    g.add_argument("--allocs-per-flow", type=int, default=500)
    g.add_argument("--eden-mortality", type=float, default=0.9)
    g.add_argument("--mid", type=float, default=0.07, help="mid-lived fraction")
    g.add_argument("--long", type=float, default=0.03, help="long-lived fraction")
    g.add_argument("--flow-seed", type=int, default=0)
    g.add_argument("--gc-period-bytes", type=int, default=262144)


def _add_heap(p):
    d = HeapConfig()
    g = p.add_argument_group("heap")
    g.add_argument("--eden-capacity-bytes", type=int, default=d.eden_capacity_bytes)
    g.add_argument("--survivor-capacity-bytes", type=int, default=d.survivor_capacity_bytes)
    g.add_argument("--tenured-capacity-bytes", type=int, default=d.tenured_capacity_bytes)
    g.add_argument("--tenuring-age-threshold", type=int, default=d.tenuring_age_threshold)
    g.add_argument("--major-gc-occupancy-fraction", type=float,
                   default=d.major_gc_occupancy_fraction)


def _add_cost(p):
    d = CostModel()
    g = p.add_argument_group("cost model")
    g.add_argument("--cost-per-swept-object", type=float, default=d.cost_per_swept_object)
    g.add_argument("--cost-per-copied-byte", type=float, default=d.cost_per_copied_byte)
    g.add_argument("--cost-per-promoted-object", type=float, default=d.cost_per_promoted_object)


def _workload(args):
    return WorkloadConfig(
        n_flows=args.flows, total_allocations=args.allocs,
        allocations_per_flow=args.allocs_per_flow, eden_mortality=args.eden_mortality,
        mid_lived_fraction=args.mid, long_lived_fraction=args.long, seed=args.seed,
        flow_seed=args.flow_seed, gc_period_bytes=args.gc_period_bytes)


def _heap(args):
    return HeapConfig(args.eden_capacity_bytes, args.survivor_capacity_bytes,
                      args.tenured_capacity_bytes, args.tenuring_age_threshold,
                      args.major_gc_occupancy_fraction)


def _read(path):
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


# -- subcommands ---------------------------------------------------------------

def cmd_gen(args):
    trace = generate_synthetic(_workload(args))
    out = Path(args.out) if args.out else _outdir(args) / "trace.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_trace(trace, out)
    print(f"wrote {out} ({trace.n_allocations} allocations, {len(trace.events)} events)")


def cmd_train(args):
    config = _heap(args)
    examples = []
    for path in args.traces:
        examples += collect_labels(load_trace(path), config)
    if not examples:
        raise UsageError("no labeled examples (do the traces trigger any minor GC?)")
    out = _outdir(args)
    out.mkdir(parents=True, exist_ok=True)
    (out / "dataset.csv").write_text(dumps_dataset(examples), encoding="utf-8")
    for target, name in ((SURVIVED_EDEN, "survive.model"), (REACHED_TENURED, "tenure.model")):
        (out / name).write_text(dumps_model(fit(examples, target, args.alpha)), encoding="utf-8")
    survived = sum(e.survived_eden for e in examples)
    print(f"{len(examples)} examples, {survived} survived eden; models in {out}")


def _scored_rows(args):
    text = _read(args.scored)
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header == ["score", "truth"]:
        return [(float(s), t.strip() in ("1", "true", "True")) for s, t in reader]
    if not args.model:
        raise UsageError("dataset input needs --model to score it (or give a score,truth CSV)")
    model = loads_model(_read(args.model))
    return [(posterior(model, ex.features), ex.label(model.target)) for ex in loads_dataset(text)]


def cmd_tune(args):
    scored = _scored_rows(args)
    if not scored:
        raise UsageError("scored set is empty")
    if not 0 <= args.target_precision <= 1:
        raise UsageError("--target-precision must lie in [0, 1]")
    print(repr(tune_threshold(scored, args.target_precision).threshold))


def cmd_run(args):
    config = _heap(args)
    trace = load_trace(args.trace) if args.trace else generate_synthetic(_workload(args))
    bindings = {}
    if args.predictor in ("trained", "all"):
        if not (args.survive_model and args.tenure_model):
            raise UsageError("--predictor trained needs --survive-model and --tenure-model")
        if args.threshold is None:
            raise UsageError("--predictor trained needs --threshold")
        bindings["trained"] = TrainedModels(loads_model(_read(args.survive_model)),
                                            loads_model(_read(args.tenure_model)),
                                            DecisionPolicy(args.threshold))
    elif args.threshold is not None:
        raise UsageError("--threshold only applies to --predictor trained/all")
    if args.predictor in ("oracle", "all"):
        bindings["oracle"] = "oracle"
    cost = CostModel(args.cost_per_swept_object, args.cost_per_copied_byte,
                     args.cost_per_promoted_object)
    report = run_collector_comparison(trace, config, bindings, cost,
                                      concurrent=args.concurrent, check_registry=True)
    for path in write_report(report, _outdir(args)):
        print(f"wrote {path}")
    for name, arm in report.arms.items():
        t = arm.totals()
        ratio = report.pause_ratio(name) if name != "baseline" else 1.0
        ratio_s = "n/a" if ratio is None else f"{ratio:.4f}"
        print(f"{name}: pause={t['total_pause_cost']:.2f} ratio={ratio_s} "
              f"live_handled={t['total_live_objects_handled']} op_cost={t['total_op_cost']:.2f}")


def cmd_histo_diff(args):
    old = parse_histogram(_read(args.old))
    new = parse_histogram(_read(args.new))
    text = format_diff_csv(histo_diff(old, new))
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# -- parser --------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="predgc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="flat key = value file of defaults")
        p.add_argument("--outdir", help="output directory (env PREDGC_OUTDIR)")
        p.set_defaults(func=func)
        return p

    p = add("gen", cmd_gen, "generate a synthetic trace")
    _add_workload(p)
    p.add_argument("-o", "--out", help="trace path (default OUTDIR/trace.txt)")

    p = add("train", cmd_train, "label traces under the baseline GC and fit both models")
    p.add_argument("traces", nargs="+")
    _add_heap(p)
    p.add_argument("--alpha", type=float, default=1.0, help="Laplace smoothing constant")

    p = add("tune", cmd_tune, "pick the smallest threshold meeting a precision target")
    p.add_argument("scored", help="score,truth CSV or a dataset CSV (with --model)")
    p.add_argument("--model")
    p.add_argument("--target-precision", type=float, default=1.0)

    p = add("run", cmd_run, "replay one trace under baseline and predictive collectors")
    p.add_argument("--trace", help="trace file (otherwise generate from workload flags)")
    _add_workload(p)
    _add_heap(p)
    _add_cost(p)
    p.add_argument("--predictor", choices=("trained", "oracle", "none", "all"), default="oracle")
    p.add_argument("--survive-model")
    p.add_argument("--tenure-model")
    p.add_argument("--threshold", type=float)
    p.add_argument("--concurrent", action="store_true",
                   help="run the GC and OP legs of each cycle on two threads")

    p = add("histo-diff", cmd_histo_diff, "per-class new-minus-old histogram deltas")
    p.add_argument("old")
    p.add_argument("new")
    p.add_argument("-o", "--out")
    return parser, sub


def _config_defaults(path, subparser):
    known = {a.dest for a in subparser._actions}
    values = {}
    for lineno, line in enumerate(_read(path).splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in known:
            raise UsageError(f"{path}:{lineno}: unknown or malformed setting {line!r}")
        action = next(a for a in subparser._actions if a.dest == key)
        value = value.strip()
        if action.type is not None:
            try:
                value = action.type(value)
            except ValueError:
                raise UsageError(f"{path}:{lineno}: bad value for {key}") from None
        elif action.const is True:
            value = value.lower() in ("1", "true", "yes")
        values[key] = value
    return values


def main(argv=None) -> int:
    parser, sub = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
        if args.config:
            subparser = sub.choices[args.command]
            subparser.set_defaults(**_config_defaults(args.config, subparser))
            args = parser.parse_args(argv)
        args.func(args)
    except SafetyViolation as exc:
        print(f"predgc: safety violation: {exc}", file=sys.stderr)
        return EXIT_SAFETY
    except (UsageError, MalformedTrace, TraceFormatError, HistogramParseError,
            ValueError, KeyError) as exc:
        print(f"predgc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
