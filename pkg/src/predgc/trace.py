"""Mutator traces: event types, the text format, synthetic workloads, and
trace-level ground truth (object death points and the GC schedule)."""

from __future__ import annotations

import heapq
import io
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from predgc.heap import MalformedTrace

ROOT_TOKEN = "ROOT"
TRACE_HEADER = "# predgc trace v1"


@dataclass(frozen=True)
class Alloc:
    tag: str
    class_name: str
    size_bytes: int
    parent: str = ROOT_TOKEN


@dataclass(frozen=True)
class Link:
    parent: str
    child: str


@dataclass(frozen=True)
class Unlink:
    parent: str
    child: str


@dataclass(frozen=True)
class Tick:
    pass


@dataclass
class Trace:
    events: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def n_allocations(self):
        return sum(1 for ev in self.events if isinstance(ev, Alloc))


class TraceFormatError(ValueError):
    def __init__(self, lineno, msg):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


# -- text format -----------------------------------------------------------

def _event_line(ev) -> str:
    if isinstance(ev, Alloc):
        return f"ALLOC {ev.tag} {ev.class_name} {ev.size_bytes} {ev.parent}"
    if isinstance(ev, Link):
        return f"LINK {ev.parent} {ev.child}"
    if isinstance(ev, Unlink):
        return f"UNLINK {ev.parent} {ev.child}"
    if isinstance(ev, Tick):
        return "TICK"
    raise TypeError(f"not a trace event: {ev!r}")


def write_trace(trace: Trace, sink) -> None:
    """Write ``trace`` to a text stream.  Metadata travels as ``# @key value``
    comment lines so plain readers can ignore it."""
    sink.write(TRACE_HEADER + "\n")
    for key, value in trace.metadata.items():
        sink.write(f"# @{key} {value}\n")
    for ev in trace.events:
        sink.write(_event_line(ev) + "\n")


def dumps_trace(trace: Trace) -> str:
    buf = io.StringIO()
    write_trace(trace, buf)
    return buf.getvalue()


def read_trace(source) -> Trace:
    """Parse a trace from a text stream or string.

    Every LINK/UNLINK endpoint and ALLOC parent must be ``ROOT`` or a tag
    allocated on an earlier line; tags are unique.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    events, metadata = [], {}
    seen = set()

    def known(tok, lineno, allow_root=True):
        if tok == ROOT_TOKEN and allow_root:
            return
        if tok not in seen:
            raise TraceFormatError(lineno, f"reference to unallocated tag {tok!r}")

    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line.startswith("# @"):
                key, _, value = line[3:].partition(" ")
                metadata[key] = value
            continue
        parts = line.split()
        op = parts[0]
        if op == "ALLOC":
            if len(parts) != 5:
                raise TraceFormatError(lineno, "ALLOC takes <tag> <class> <bytes> <parent>")
            _, tag, cls, size, parent = parts
            if tag == ROOT_TOKEN or tag in seen:
                raise TraceFormatError(lineno, f"duplicate or reserved tag {tag!r}")
            try:
                nbytes = int(size)
            except ValueError:
                raise TraceFormatError(lineno, f"size {size!r} is not an integer") from None
            if nbytes <= 0:
                raise TraceFormatError(lineno, "size must be positive")
            known(parent, lineno)
            seen.add(tag)
            events.append(Alloc(tag, cls, nbytes, parent))
        elif op in ("LINK", "UNLINK"):
            if len(parts) != 3:
                raise TraceFormatError(lineno, f"{op} takes <parent> <child>")
            _, parent, child = parts
            known(parent, lineno)
            known(child, lineno, allow_root=False)
            events.append((Link if op == "LINK" else Unlink)(parent, child))
        elif op == "TICK":
            if len(parts) != 1:
                raise TraceFormatError(lineno, "TICK takes no arguments")
            events.append(Tick())
        else:
            raise TraceFormatError(lineno, f"unknown event {op!r}")
    return Trace(events, metadata)


def load_trace(path) -> Trace:
    with open(path, encoding="utf-8") as fh:
        return read_trace(fh)


def save_trace(trace: Trace, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        write_trace(trace, fh)


# -- ground truth ----------------------------------------------------------

class _Liveness:
    """Reachability over tags maintained incrementally while a trace is
    walked.  An object dies at the event that removes its last path from
    ROOT; using it afterwards is a malformed trace."""

    def __init__(self):
        self.out = defaultdict(Counter)
        self.inn = defaultdict(Counter)
        self.alive = set()

    def _check(self, tok, role):
        if tok != ROOT_TOKEN and tok not in self.alive:
            raise MalformedTrace(f"{role} {tok!r} is dead or unknown")

    def alloc(self, tag, parent):
        self._check(parent, "parent")
        self.alive.add(tag)
        self.out[parent][tag] += 1
        self.inn[tag][parent] += 1

    def link(self, parent, child):
        self._check(parent, "parent")
        self._check(child, "child")
        self.out[parent][child] += 1
        self.inn[child][parent] += 1

    def unlink(self, parent, child):
        if self.out.get(parent, {}).get(child, 0) == 0:
            raise MalformedTrace(f"no edge {parent} -> {child}")
        self.out[parent][child] -= 1
        self.inn[child][parent] -= 1
        if self.out[parent][child] == 0:
            del self.out[parent][child]
            del self.inn[child][parent]
        return self._collect_from(child)

    def _collect_from(self, start):
        # only nodes forward-reachable from start can have lost their path
        suspects = {start}
        stack = [start]
        while stack:
            node = stack.pop()
            for c in self.out.get(node, ()):
                if c not in suspects:
                    suspects.add(c)
                    stack.append(c)
        reached = set()
        stack = [n for n in suspects if any(p not in suspects for p in self.inn.get(n, ()))]
        while stack:
            node = stack.pop()
            if node in reached:
                continue
            reached.add(node)
            stack.extend(c for c in self.out.get(node, ()) if c not in reached)
        dead = suspects - reached
        for node in dead:
            for c in list(self.out.pop(node, {})):
                if c in self.inn:
                    self.inn[c].pop(node, None)
            for p in list(self.inn.pop(node, {})):
                if p not in dead:
                    self.out[p].pop(node, None)
            self.alive.discard(node)
        return dead


@dataclass
class Lifetimes:
    """Per allocation ordinal (0-based): event index of the ALLOC, and the
    event index at which the object became unreachable (None = alive at end)."""

    alloc_index: list
    death_index: list
    tags: list

    def ordinal(self, tag):
        return self.tags.index(tag)

    def dead_before(self, ordinal, index):
        d = self.death_index[ordinal]
        return d is not None and d < index


def analyze_lifetimes(trace: Trace) -> Lifetimes:
    live = _Liveness()
    ordinal = {}
    alloc_index, death_index, tags = [], [], []
    for i, ev in enumerate(trace.events):
        if isinstance(ev, Alloc):
            if ev.tag in ordinal:
                raise MalformedTrace(f"duplicate tag {ev.tag!r}")
            live.alloc(ev.tag, ev.parent)
            ordinal[ev.tag] = len(tags)
            tags.append(ev.tag)
            alloc_index.append(i)
            death_index.append(None)
        elif isinstance(ev, Link):
            live.link(ev.parent, ev.child)
        elif isinstance(ev, Unlink):
            for tag in live.unlink(ev.parent, ev.child):
                death_index[ordinal[tag]] = i
    return Lifetimes(alloc_index, death_index, tags)


def gc_schedule(trace: Trace, eden_capacity_bytes: int) -> list[int]:
    """Event indices before which a minor GC fires.

    A collection runs when an allocation would overflow a non-empty Eden.
    Every collector in this package empties Eden, so the schedule depends
    only on allocation sizes.
    """
    points, eden = [], 0
    for i, ev in enumerate(trace.events):
        if isinstance(ev, Alloc):
            if eden > 0 and eden + ev.size_bytes > eden_capacity_bytes:
                points.append(i)
                eden = 0
            eden += ev.size_bytes
    return points


def measured_eden_mortality(trace: Trace, eden_capacity_bytes: int) -> float:
    """Fraction of allocations dead before the next minor GC after their
    birth (or dead by trace end when no GC follows)."""
    life = analyze_lifetimes(trace)
    if not life.tags:
        return 0.0
    points = gc_schedule(trace, eden_capacity_bytes)
    end = len(trace.events)
    died, k = 0, 0
    for born, death in zip(life.alloc_index, life.death_index):
        while k < len(points) and points[k] <= born:
            k += 1
        horizon = points[k] if k < len(points) else end
        if death is not None and death < horizon:
            died += 1
    return died / len(life.tags)


# -- synthetic workloads ---------------------------------------------------

SHORT, MID, LONG = "short", "mid", "long"

# (class name, instance size); pools are per lifetime kind so class identity
# carries lifetime information, as in an application with few control flows
CLASS_POOLS = {
    SHORT: [
        ("java.lang.StringBuilder", 24), ("java.util.ArrayList$Itr", 32),
        ("java.awt.Polygon", 24), ("char[]", 128), ("java.awt.Rectangle", 32),
        ("java.awt.geom.AffineTransform", 64), ("java.util.HashMap$Node", 32),
        ("byte[]", 512), ("java.awt.geom.Point2D$Double", 24), ("int[]", 256),
    ],
    MID: [
        ("com.sun.media.sound.ModelSource", 16), ("javax.swing.ArrayTable", 16),
        ("java.awt.image.BufferedImage", 1024), ("java.util.HashMap", 48),
        ("java.awt.geom.GeneralPath", 40),
    ],
    LONG: [
        ("sun.nio.cs.US_ASCII", 24), ("java.lang.Class", 512),
        ("javax.swing.JPanel", 512), ("java.util.concurrent.ConcurrentHashMap", 64),
        ("java.lang.ThreadLocal", 16),
    ],
}


@dataclass
class WorkloadConfig:
    n_flows: int = 3
    total_allocations: int = 20000
    allocations_per_flow: int = 500
    eden_mortality: float = 0.9
    mid_lived_fraction: float = 0.07
    long_lived_fraction: float = 0.03
    seed: int = 42
    # identifies the application: flows are a function of this, not of seed
    flow_seed: int = 0
    # allocation volume between minor GCs that lifetimes are calibrated to
    gc_period_bytes: int = 262144
    flow_weights: tuple | None = None
    cross_link_fraction: float = 0.05

    def __post_init__(self):
        if self.n_flows < 1:
            raise ValueError("n_flows must be >= 1")
        if self.total_allocations < 0 or self.allocations_per_flow < 1:
            raise ValueError("allocation counts must be positive")
        fracs = (self.eden_mortality, self.mid_lived_fraction, self.long_lived_fraction)
        if any(f < 0 or f > 1 for f in fracs):
            raise ValueError("mortality fractions must lie in [0, 1]")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError("eden_mortality + mid_lived_fraction + long_lived_fraction must be 1")
        if self.flow_weights is not None and len(self.flow_weights) != self.n_flows:
            raise ValueError("flow_weights needs one weight per flow")


@dataclass(frozen=True)
class _Site:
    class_name: str
    size: int
    kind: str
    anchor_depth: int  # 0 = parent is ROOT
    base_delay: int
    cross_link: bool


def _build_flow(cfg: WorkloadConfig, flow: int) -> list:
    rng = random.Random(f"flow:{cfg.flow_seed}:{flow}")
    n = cfg.allocations_per_flow
    n_long = round(n * cfg.long_lived_fraction)
    n_mid = round(n * cfg.mid_lived_fraction)
    kinds = [LONG] * n_long + [MID] * n_mid + [SHORT] * (n - n_long - n_mid)
    rng.shuffle(kinds)
    roster = {k: rng.sample(pool, min(len(pool), 3 if k != SHORT else 5))
              for k, pool in CLASS_POOLS.items()}
    sites = []
    for kind in kinds:
        name, size = rng.choice(roster[kind])
        if kind == LONG:
            depth = rng.choice((0, 0, 1, 2))
        else:
            depth = rng.choice((0, 1, 1, 2))
        sites.append(_Site(name, size, kind, depth, rng.randint(0, 6),
                           kind == SHORT and rng.random() < cfg.cross_link_fraction))
    return sites


def flow_description(cfg: WorkloadConfig, flow: int) -> str:
    sites = _build_flow(cfg, flow)
    counts = Counter(s.kind for s in sites)
    classes = sorted({s.class_name for s in sites})
    return (f"{len(sites)} sites short={counts[SHORT]} mid={counts[MID]} "
            f"long={counts[LONG]} classes={','.join(classes)}")


def generate_synthetic(cfg: WorkloadConfig) -> Trace:
    """Deterministic trace for ``cfg``: repeated executions of a few fixed
    allocation flows with seeded jitter in lifetimes and parent choice."""
    flows = [_build_flow(cfg, f) for f in range(cfg.n_flows)]
    rng = random.Random(cfg.seed)
    events = []
    anchors = defaultdict(list)  # depth -> long-lived tags at that depth
    short_due = []  # (due allocation count, seq, parent, tag)
    mid_due = []  # (due cumulative bytes, seq, parent, tag)
    seq = 0
    allocated = 0
    cum_bytes = 0
    weights = cfg.flow_weights or [1] * cfg.n_flows

    def flush():
        while short_due and short_due[0][0] <= allocated:
            _, _, parent, tag = heapq.heappop(short_due)
            events.append(Unlink(parent, tag))
        while mid_due and mid_due[0][0] <= cum_bytes:
            _, _, parent, tag = heapq.heappop(mid_due)
            events.append(Unlink(parent, tag))

    while allocated < cfg.total_allocations:
        flow = rng.choices(range(cfg.n_flows), weights=weights)[0]
        for site in flows[flow]:
            if allocated >= cfg.total_allocations:
                break
            flush()
            tag = f"o{allocated + 1}"
            eligible = anchors.get(site.anchor_depth) if site.anchor_depth else None
            parent = rng.choice(eligible) if eligible else ROOT_TOKEN
            depth = site.anchor_depth + 1 if eligible else 1
            events.append(Alloc(tag, site.class_name, site.size, parent))
            allocated += 1
            cum_bytes += site.size
            if site.kind == LONG:
                if depth <= 2:
                    anchors[depth].append(tag)
            elif site.kind == MID:
                span = int(cfg.gc_period_bytes * (1.0 + 0.45 * rng.random()))
                heapq.heappush(mid_due, (cum_bytes + span, seq, parent, tag))
                seq += 1
            else:
                if site.cross_link and anchors:
                    events.append(Link(tag, rng.choice(anchors[min(anchors)])))
                delay = site.base_delay + rng.randint(0, 1)
                heapq.heappush(short_due, (allocated + delay, seq, parent, tag))
                seq += 1
        # short-lived objects never outlive their flow segment
        while short_due:
            _, _, parent, tag = heapq.heappop(short_due)
            events.append(Unlink(parent, tag))
        events.append(Tick())
    meta = {
        "generator": "synthetic",
        "seed": str(cfg.seed),
        "flow_seed": str(cfg.flow_seed),
        "n_flows": str(cfg.n_flows),
        "total_allocations": str(cfg.total_allocations),
        "eden_mortality": repr(cfg.eden_mortality),
    }
    for f in range(cfg.n_flows):
        meta[f"flow{f}"] = flow_description(cfg, f)
    return Trace(events, meta)


def random_trace(seed: int, n_objects: int = 500, classes: int = 6,
                 link_rate: float = 0.3, unlink_rate: float = 0.9,
                 max_size: int = 256) -> Trace:
    """Adversarial trace for fuzzing: random allocations, extra links (cycles,
    duplicate edges, self loops) and unlinks over a random multigraph.  Only
    reachable objects are ever referenced, so the trace is always valid."""
    rng = random.Random(seed)
    live = _Liveness()
    alive = []  # mirrors live.alive with stable order for random choice
    events = []
    names = [f"fuzz.C{k}" for k in range(classes)]
    sizes = {n: rng.randint(8, max_size) for n in names}

    def refresh(dead):
        if dead:
            alive[:] = [t for t in alive if t not in dead]

    made = 0
    while made < n_objects:
        r = rng.random()
        if r < 0.5 or not alive:
            made += 1
            tag = f"o{made}"
            parent = rng.choice(alive) if alive and rng.random() < 0.6 else ROOT_TOKEN
            name = rng.choice(names)
            events.append(Alloc(tag, name, sizes[name], parent))
            live.alloc(tag, parent)
            alive.append(tag)
        elif r < 0.5 + 0.5 * link_rate / (link_rate + unlink_rate):
            parent = rng.choice(alive) if rng.random() < 0.8 else ROOT_TOKEN
            child = rng.choice(alive)
            events.append(Link(parent, child))
            live.link(parent, child)
        else:
            parent = rng.choice(alive) if rng.random() < 0.5 else ROOT_TOKEN
            kids = list(live.out.get(parent, ()))
            if not kids:
                parent = ROOT_TOKEN
                kids = list(live.out.get(parent, ()))
                if not kids:
                    continue
            child = rng.choice(kids)
            events.append(Unlink(parent, child))
            refresh(live.unlink(parent, child))
        if rng.random() < 0.02:
            events.append(Tick())
    return Trace(events, {"generator": "random", "seed": str(seed)})
