"""Simulator for generational garbage collection with Bayesian lifetime
prediction, a dual-root registry and a concurrent Object Promoter."""

from predgc.baseline import CostModel, GcReport, collect_labels, major_gc, minor_gc
from predgc.experiment import ExperimentReport, run_collector_comparison
from predgc.heap import ROOT, Heap, HeapConfig, ObjectRecord, SafetyViolation, Space
from predgc.histogram import Histogram, histo_diff, parse_histogram
from predgc.predictor import (DecisionPolicy, FeatureVector, LabeledExample, decide, evaluate,
                              extract_features, fit, posterior, tune_threshold)
from predgc.runtime import (DualRootRegistry, OracleGroundTruth, PredictiveRuntime,
                            TrainedModels, predictive_gc_cycle)
from predgc.trace import Trace, WorkloadConfig, generate_synthetic, read_trace, write_trace

__version__ = "0.1.0"
