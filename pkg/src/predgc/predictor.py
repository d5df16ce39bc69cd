"""Bayesian lifetime prediction.

Features are discrete.  Training tallies Laplace-smoothed frequency tables
(``CountsModel``); inference is the naive-Bayes posterior, which is the
network with the survival label as the only parent of every feature.  The
general product-of-CPTs evaluator (``DiscreteBayesNet``) is kept alongside
so the posterior can be checked by exhaustive enumeration of the joint.
"""

from __future__ import annotations

import bisect
import csv
import enum
import io
import itertools
import json
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter

from predgc.heap import Heap

SURVIVED_EDEN = "survived_eden"
REACHED_TENURED = "reached_tenured"
TARGETS = (SURVIVED_EDEN, REACHED_TENURED)

OTHER = "<other>"
MAX_BIN = 20
DEPTH_ALPHABET = ("0", "1", "2", "3", "4", "5plus", "unlinked")
BIN_ALPHABET = tuple(range(MAX_BIN + 1))
SLOTS = ("class_name", "depth_bin", "alive_bin", "survivors_bin", "size_bin")
_INT_SLOTS = {"alive_bin", "survivors_bin", "size_bin"}
LABELS = (True, False)


def log2_bin(n: int) -> int:
    """0 for 0, else 1 + floor(log2 n); capped at MAX_BIN."""
    return min(int(n).bit_length(), MAX_BIN)


def size_bin(size_bytes: int) -> int:
    return min(int(size_bytes).bit_length() - 1, MAX_BIN)


def depth_bin(depth: int | None) -> str:
    if depth is None:
        return "unlinked"
    return "5plus" if depth >= 5 else str(depth)


@dataclass(frozen=True)
class FeatureVector:
    """Features of one object.  ``alive_bin`` counts alive instances of the
    class, ``survivors_bin`` counts instances of the class that have left Eden
    alive so far; both are log2 bins."""

    class_name: str
    depth_bin: str
    alive_bin: int
    survivors_bin: int
    size_bin: int

    def as_dict(self):
        return {slot: getattr(self, slot) for slot in SLOTS}


def extract_features(heap: Heap, obj_id: int) -> FeatureVector:
    rec = heap.get(obj_id)
    if not rec.alive:
        raise ValueError(f"object {obj_id} has been reclaimed")
    return FeatureVector(
        rec.class_name,
        depth_bin(heap.root_distance(obj_id)),
        log2_bin(heap.class_alive[rec.class_name]),
        log2_bin(heap.class_eden_survivors[rec.class_name]),
        size_bin(rec.size_bytes),
    )


@dataclass(frozen=True)
class LabeledExample:
    features: FeatureVector
    survived_eden: bool
    reached_tenured: bool

    def __post_init__(self):
        if self.reached_tenured and not self.survived_eden:
            raise ValueError("reached_tenured implies survived_eden")

    def label(self, target):
        return self.survived_eden if target == SURVIVED_EDEN else self.reached_tenured


# -- training ---------------------------------------------------------------

@dataclass
class CountsModel:
    target: str
    alpha: float
    slots: tuple
    alphabets: dict
    label_counts: dict
    feature_counts: dict = field(default_factory=dict)

    @property
    def n_examples(self):
        return sum(self.label_counts.values())

    def prior(self, label: bool) -> float:
        return ((self.label_counts.get(label, 0) + self.alpha)
                / (self.n_examples + self.alpha * len(LABELS)))

    def resolve(self, slot, value):
        """Map ``value`` into the slot's alphabet (unseen -> OTHER)."""
        alphabet = self.alphabets[slot]
        if value in alphabet:
            return value
        if OTHER in alphabet:
            return OTHER
        raise KeyError(f"value {value!r} outside the alphabet of {slot!r}")

    def conditional(self, slot, value, label: bool) -> float:
        value = self.resolve(slot, value)
        count = self.feature_counts[slot].get((value, label), 0)
        return ((count + self.alpha)
                / (self.label_counts.get(label, 0) + self.alpha * len(self.alphabets[slot])))

    def check(self):
        for slot in self.slots:
            for label in LABELS:
                total = sum(n for (_, y), n in self.feature_counts[slot].items() if y == label)
                if total != self.label_counts.get(label, 0):
                    raise ValueError(f"counts for slot {slot!r} do not add up")


def _sort_key(v):
    return (type(v).__name__, str(v))


def fit_rows(rows, labels, alpha=1.0, target=SURVIVED_EDEN, alphabets=None):
    """Tally counts from feature mappings ``rows`` and boolean ``labels``.

    Slot alphabets default to the observed values; pass ``alphabets`` to
    include values never seen in training.
    """
    rows = list(rows)
    labels = [bool(y) for y in labels]
    if not rows:
        raise ValueError("cannot fit on an empty dataset")
    if len(rows) != len(labels):
        raise ValueError("rows and labels differ in length")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    slots = tuple(rows[0])
    alphabets = {s: set((alphabets or {}).get(s, ())) for s in slots}
    label_counts = {True: 0, False: 0}
    feature_counts = {s: {} for s in slots}
    for row, y in zip(rows, labels):
        label_counts[y] += 1
        for s in slots:
            v = row[s]
            alphabets[s].add(v)
            feature_counts[s][(v, y)] = feature_counts[s].get((v, y), 0) + 1
    return CountsModel(target, alpha, slots,
                       {s: tuple(sorted(a, key=_sort_key)) for s, a in alphabets.items()},
                       label_counts, feature_counts)


def standard_alphabets(class_names=()):
    return {
        "class_name": set(class_names) | {OTHER},
        "depth_bin": set(DEPTH_ALPHABET),
        "alive_bin": set(BIN_ALPHABET),
        "survivors_bin": set(BIN_ALPHABET),
        "size_bin": set(BIN_ALPHABET),
    }


def fit(dataset, target=SURVIVED_EDEN, alpha=1.0) -> CountsModel:
    """Fit one survival model from labeled examples."""
    if target not in TARGETS:
        raise ValueError(f"unknown target {target!r}")
    dataset = list(dataset)
    if not dataset:
        raise ValueError("cannot fit on an empty dataset")
    return fit_rows([ex.features.as_dict() for ex in dataset],
                    [ex.label(target) for ex in dataset], alpha, target,
                    standard_alphabets())


def _as_mapping(features):
    return features.as_dict() if isinstance(features, FeatureVector) else features


def posterior(model: CountsModel, features, label: bool = True) -> float:
    """P(label | features) under the naive-Bayes factorisation."""
    feats = _as_mapping(features)
    scores = {}
    for y in LABELS:
        p = model.prior(y)
        for slot in model.slots:
            p *= model.conditional(slot, feats[slot], y)
        scores[y] = p
    return scores[label] / (scores[True] + scores[False])


# -- general discrete network ----------------------------------------------

class DiscreteBayesNet:
    """A DAG of discrete nodes with a conditional table per node.

    ``cpts[node]`` maps a tuple of parent values (ordered as
    ``parents[node]``) to a ``{value: probability}`` row.
    """

    def __init__(self, alphabets, parents, cpts):
        self.alphabets = {n: tuple(a) for n, a in alphabets.items()}
        self.parents = {n: tuple(parents.get(n, ())) for n in self.alphabets}
        self.cpts = cpts
        for node, ps in self.parents.items():
            for p in ps:
                if p not in self.alphabets:
                    raise ValueError(f"unknown parent {p!r} of {node!r}")
        try:
            self.order = tuple(TopologicalSorter(self.parents).static_order())
        except CycleError as exc:
            raise ValueError(f"graph has a cycle: {exc.args[1]}") from None
        for node in self.alphabets:
            for key, row in self.cpts.get(node, {}).items():
                if abs(sum(row.values()) - 1.0) > 1e-9:
                    raise ValueError(f"CPT row {node}{key} sums to {sum(row.values())}")

    def joint_probability(self, assignment) -> float:
        return joint_probability(self, assignment)


def joint_probability(net: DiscreteBayesNet, assignment) -> float:
    """Product over nodes of P(node value | parent values)."""
    p = 1.0
    for node in net.order:
        if node not in assignment:
            raise KeyError(f"assignment misses node {node!r}")
        key = tuple(assignment[q] for q in net.parents[node])
        try:
            p *= net.cpts[node][key][assignment[node]]
        except KeyError:
            raise KeyError(f"no CPT entry for {node}={assignment[node]!r} given {key}") from None
    return p


def naive_bayes_net(model: CountsModel, label_node="Y") -> DiscreteBayesNet:
    """The fitted model as a network with ``label_node`` parenting every feature."""
    alphabets = {label_node: LABELS}
    parents = {label_node: ()}
    cpts = {label_node: {(): {y: model.prior(y) for y in LABELS}}}
    for slot in model.slots:
        alphabets[slot] = model.alphabets[slot]
        parents[slot] = (label_node,)
        cpts[slot] = {
            (y,): {v: model.conditional(slot, v, y) for v in model.alphabets[slot]}
            for y in LABELS
        }
    return DiscreteBayesNet(alphabets, parents, cpts)


def enumerate_posterior(net: DiscreteBayesNet, query, evidence, value) -> float:
    """P(query=value | evidence) by summing the joint over all unobserved nodes."""
    hidden = [n for n in net.order if n != query and n not in evidence]
    num = den = 0.0
    for q in net.alphabets[query]:
        for combo in itertools.product(*(net.alphabets[h] for h in hidden)):
            assignment = dict(evidence)
            assignment.update(zip(hidden, combo))
            assignment[query] = q
            p = joint_probability(net, assignment)
            den += p
            if q == value:
                num += p
    return num / den


# -- decisions ----------------------------------------------------------------

class Decision(enum.Enum):
    SURVIVE = "PredictSurvive"
    DIE = "PredictDie"


@dataclass(frozen=True)
class DecisionPolicy:
    threshold: float = 0.8

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")


def decide(p: float, policy: DecisionPolicy) -> Decision:
    """Survive only when strictly above the threshold; ties predict death."""
    return Decision.SURVIVE if p > policy.threshold else Decision.DIE


@dataclass(frozen=True)
class PrecisionRecall:
    true_positives: int
    false_positives: int
    false_negatives: int
    true_negatives: int

    @property
    def precision(self):
        """None when nothing was predicted positive."""
        n = self.true_positives + self.false_positives
        return self.true_positives / n if n else None

    @property
    def recall(self):
        n = self.true_positives + self.false_negatives
        return self.true_positives / n if n else None


def _positive(x):
    return x is Decision.SURVIVE if isinstance(x, Decision) else bool(x)


def evaluate(predictions, truths) -> PrecisionRecall:
    predictions, truths = list(predictions), list(truths)
    if len(predictions) != len(truths):
        raise ValueError(f"{len(predictions)} predictions vs {len(truths)} truths")
    tp = fp = fn = tn = 0
    for p, t in zip(predictions, truths):
        p, t = _positive(p), bool(t)
        if p and t:
            tp += 1
        elif p:
            fp += 1
        elif t:
            fn += 1
        else:
            tn += 1
    return PrecisionRecall(tp, fp, fn, tn)


def evaluate_at(scored, policy: DecisionPolicy) -> PrecisionRecall:
    scored = list(scored)
    return evaluate([decide(p, policy) for p, _ in scored], [t for _, t in scored])


def tune_threshold(scored, target_precision: float) -> DecisionPolicy:
    """Smallest threshold in {0} and the observed scores whose precision is
    at least ``target_precision``.  Predicting nothing positive counts as
    meeting the target, so the largest score always qualifies."""
    scored = sorted((float(p), bool(t)) for p, t in scored)
    if not scored:
        raise ValueError("scored set is empty")
    scores = [p for p, _ in scored]
    # suffix counts of positives/negatives from index i upward
    n = len(scored)
    pos_above = [0] * (n + 1)
    for i in range(n - 1, -1, -1):
        pos_above[i] = pos_above[i + 1] + scored[i][1]
    for t in sorted({0.0, *scores}):
        i = bisect.bisect_right(scores, t)
        predicted = n - i
        if predicted == 0:
            return DecisionPolicy(t)
        if pos_above[i] / predicted >= target_precision:
            return DecisionPolicy(t)
    raise AssertionError("unreachable: the top score predicts nothing positive")


# -- persistence ---------------------------------------------------------------

def dumps_model(model: CountsModel) -> str:
    lines = ["[meta]", f"target = {model.target}", f"alpha = {model.alpha!r}",
             f"slots = {','.join(model.slots)}", "[labels]",
             f"true = {model.label_counts.get(True, 0)}",
             f"false = {model.label_counts.get(False, 0)}"]
    for slot in model.slots:
        lines.append(f"[feature {slot}]")
        counts = model.feature_counts[slot]
        for v in model.alphabets[slot]:
            lines.append(f"{json.dumps(v)}\t{counts.get((v, True), 0)}\t{counts.get((v, False), 0)}")
    return "\n".join(lines) + "\n"


def loads_model(text: str) -> CountsModel:
    meta, labels = {}, {}
    alphabets, feature_counts = {}, {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("["):
            section = line.strip("[]")
            if section.startswith("feature "):
                slot = section.split(" ", 1)[1]
                alphabets[slot], feature_counts[slot] = [], {}
            continue
        try:
            if section == "meta":
                key, _, value = line.partition("=")
                meta[key.strip()] = value.strip()
            elif section == "labels":
                key, _, value = line.partition("=")
                labels[key.strip() == "true"] = int(value)
            elif section and section.startswith("feature "):
                raw, t, f = line.rsplit("\t", 2)
                v = json.loads(raw)
                alphabets[slot].append(v)
                for y, n in ((True, int(t)), (False, int(f))):
                    if n:
                        feature_counts[slot][(v, y)] = n
            else:
                raise ValueError("line outside any section")
        except ValueError as exc:
            raise ValueError(f"model line {lineno}: {exc}") from None
    model = CountsModel(meta["target"], float(meta["alpha"]), tuple(meta["slots"].split(",")),
                        {s: tuple(a) for s, a in alphabets.items()}, labels, feature_counts)
    model.check()
    return model


DATASET_COLUMNS = list(SLOTS) + [SURVIVED_EDEN, REACHED_TENURED]


def dumps_dataset(examples) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DATASET_COLUMNS)
    for ex in examples:
        f = ex.features
        w.writerow([f.class_name, f.depth_bin, f.alive_bin, f.survivors_bin, f.size_bin,
                    int(ex.survived_eden), int(ex.reached_tenured)])
    return buf.getvalue()


def loads_dataset(text: str):
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != DATASET_COLUMNS:
        raise ValueError(f"dataset header must be {','.join(DATASET_COLUMNS)}")
    out = []
    for row in reader:
        feats = FeatureVector(row["class_name"], row["depth_bin"], int(row["alive_bin"]),
                              int(row["survivors_bin"]), int(row["size_bin"]))
        out.append(LabeledExample(feats, row[SURVIVED_EDEN] == "1", row[REACHED_TENURED] == "1"))
    return out
