"""Simulated generational heap: objects, spaces and the mutator reference graph.

The reference graph is a multigraph over ``ROOT`` and object ids.  Reachability
from ``ROOT`` is both the collectors' marking step and the safety oracle used
by :meth:`Heap.reclaim`.
"""

from __future__ import annotations

import enum
import threading
from collections import Counter, defaultdict, deque
from dataclasses import dataclass

ROOT = 0


class SimulationError(Exception):
    """Base class for errors raised by the simulator."""


class SafetyViolation(SimulationError):
    """A reachable object was about to be reclaimed, or a collector broke an invariant."""


class MalformedTrace(SimulationError):
    """A mutator event referenced a missing object or edge."""


class IllegalTransition(SimulationError):
    pass


class Space(enum.Enum):
    EDEN = "Eden"
    SURVIVOR0 = "Survivor0"
    SURVIVOR1 = "Survivor1"
    TENURED = "Tenured"

    @property
    def is_survivor(self):
        return self in (Space.SURVIVOR0, Space.SURVIVOR1)


_LEGAL = {
    Space.EDEN: {Space.SURVIVOR0, Space.SURVIVOR1, Space.TENURED},
    Space.SURVIVOR0: {Space.SURVIVOR1, Space.TENURED},
    Space.SURVIVOR1: {Space.SURVIVOR0, Space.TENURED},
    Space.TENURED: {Space.TENURED},
}


def other_survivor(space: Space) -> Space:
    if space is Space.SURVIVOR0:
        return Space.SURVIVOR1
    if space is Space.SURVIVOR1:
        return Space.SURVIVOR0
    raise ValueError(f"{space} is not a survivor space")


@dataclass
class HeapConfig:
    eden_capacity_bytes: int = 262144
    survivor_capacity_bytes: int = 65536
    tenured_capacity_bytes: int = 4194304
    tenuring_age_threshold: int = 3
    major_gc_occupancy_fraction: float = 0.9

    def __post_init__(self):
        for name in ("eden_capacity_bytes", "survivor_capacity_bytes", "tenured_capacity_bytes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.tenuring_age_threshold < 1:
            raise ValueError("tenuring_age_threshold must be >= 1")
        if not 0 < self.major_gc_occupancy_fraction <= 1:
            raise ValueError("major_gc_occupancy_fraction must be in (0, 1]")

    def capacity(self, space: Space) -> int:
        if space is Space.EDEN:
            return self.eden_capacity_bytes
        if space is Space.TENURED:
            return self.tenured_capacity_bytes
        return self.survivor_capacity_bytes


@dataclass
class ObjectRecord:
    id: int
    class_name: str
    size_bytes: int
    birth_cycle: int
    age: int = 0
    space: Space = Space.EDEN
    alive: bool = True


class Heap:
    """Objects, per-space occupancy and the reference multigraph.

    Mutating methods take an internal lock so that the two legs of a
    predictive cycle may run on separate threads.  ``mark_reachable`` and
    ``histogram`` are read-only.
    """

    def __init__(self, config: HeapConfig | None = None):
        self.config = config or HeapConfig()
        self.objects: dict[int, ObjectRecord] = {}
        self.occupancy = {space: 0 for space in Space}
        self.current_cycle = 0
        # survivor space currently holding aged objects; the first minor GC
        # copies into the other one
        self.active_survivor = Space.SURVIVOR1
        self.reclaimed: list[int] = []
        self.class_alive: Counter[str] = Counter()
        self.class_eden_survivors: Counter[str] = Counter()
        self._out: dict[int, Counter[int]] = defaultdict(Counter)
        self._in: dict[int, Counter[int]] = defaultdict(Counter)
        self._members = {space: {} for space in Space}
        self._next_id = 1
        self._marked: frozenset[int] | None = frozenset()
        self._lock = threading.RLock()

    # -- queries ---------------------------------------------------------

    def get(self, obj_id: int) -> ObjectRecord:
        try:
            return self.objects[obj_id]
        except KeyError:
            raise KeyError(f"unknown object id {obj_id}") from None

    def is_alive(self, obj_id: int) -> bool:
        rec = self.objects.get(obj_id)
        return rec is not None and rec.alive

    def ids_in(self, space: Space) -> list[int]:
        """Alive ids in ``space``, ascending."""
        return sorted(self._members[space])

    def alive_ids(self) -> list[int]:
        return sorted(i for i, rec in self.objects.items() if rec.alive)

    def edge_count(self, parent: int, child: int) -> int:
        return self._out.get(parent, Counter()).get(child, 0)

    def children(self, node: int) -> list[int]:
        return list(self._out.get(node, ()))

    def parents(self, node: int) -> list[int]:
        return list(self._in.get(node, ()))

    def edges(self):
        """Yield ``(parent, child, count)`` for every edge."""
        for parent, kids in self._out.items():
            for child, n in kids.items():
                yield parent, child, n

    def mark_reachable(self) -> set[int]:
        """Ids reachable from ROOT.  Pure; the result is cached until the
        next link/unlink."""
        marked = self._marked
        if marked is None:
            seen = set()
            stack = list(self._out.get(ROOT, ()))
            while stack:
                node = stack.pop()
                if node in seen:
                    continue
                seen.add(node)
                stack.extend(c for c in self._out.get(node, ()) if c not in seen)
            marked = frozenset(seen)
            self._marked = marked
        return set(marked)

    def is_reachable(self, obj_id: int) -> bool:
        if self._marked is None:
            self.mark_reachable()
        return obj_id in self._marked

    def root_distance(self, obj_id: int) -> int | None:
        """Length of the shortest edge path ROOT -> obj_id, or None."""
        seen = {obj_id}
        frontier = deque([(obj_id, 0)])
        while frontier:
            node, dist = frontier.popleft()
            for parent in self._in.get(node, ()):
                if parent == ROOT:
                    return dist + 1
                if parent not in seen:
                    seen.add(parent)
                    frontier.append((parent, dist + 1))
        return None

    # -- mutation --------------------------------------------------------

    def allocate(self, class_name: str, size_bytes: int) -> int:
        if size_bytes <= 0:
            raise ValueError("size_bytes must be positive")
        with self._lock:
            obj_id = self._next_id
            self._next_id += 1
            self.objects[obj_id] = ObjectRecord(obj_id, class_name, size_bytes, self.current_cycle)
            self._members[Space.EDEN][obj_id] = None
            self.occupancy[Space.EDEN] += size_bytes
            self.class_alive[class_name] += 1
            return obj_id

    def _check_endpoint(self, node: int, role: str):
        if node != ROOT and not self.is_alive(node):
            raise MalformedTrace(f"{role} {node} is not an alive object")

    def link(self, parent: int, child: int):
        with self._lock:
            self._check_endpoint(parent, "parent")
            if child == ROOT:
                raise MalformedTrace("ROOT cannot be a child")
            self._check_endpoint(child, "child")
            self._out[parent][child] += 1
            self._in[child][parent] += 1
            self._marked = None

    def unlink(self, parent: int, child: int):
        with self._lock:
            if self.edge_count(parent, child) == 0:
                raise MalformedTrace(f"no edge {parent} -> {child}")
            self._drop_edge(parent, child, 1)
            self._marked = None

    def _drop_edge(self, parent, child, n):
        out = self._out[parent]
        out[child] -= n
        if out[child] <= 0:
            del out[child]
            if not out:
                del self._out[parent]
            inc = self._in[child]
            del inc[parent]
            if not inc:
                del self._in[child]
        else:
            self._in[child][parent] -= n

    def promote(self, obj_id: int, target: Space):
        with self._lock:
            rec = self.get(obj_id)
            if not rec.alive:
                raise SafetyViolation(f"promote of reclaimed object {obj_id}")
            if target not in _LEGAL[rec.space]:
                raise IllegalTransition(f"{rec.space.value} -> {target.value} for object {obj_id}")
            if target is rec.space:
                return
            if rec.space is Space.EDEN:
                self.class_eden_survivors[rec.class_name] += 1
            del self._members[rec.space][obj_id]
            self.occupancy[rec.space] -= rec.size_bytes
            rec.space = target
            self._members[target][obj_id] = None
            self.occupancy[target] += rec.size_bytes

    def reclaim(self, obj_id: int):
        """Free an unreachable object.  Reclaiming a reachable or already
        reclaimed object raises SafetyViolation."""
        with self._lock:
            rec = self.get(obj_id)
            if not rec.alive:
                raise SafetyViolation(f"object {obj_id} already reclaimed")
            if self.is_reachable(obj_id):
                raise SafetyViolation(f"object {obj_id} is reachable from ROOT")
            rec.alive = False
            del self._members[rec.space][obj_id]
            self.occupancy[rec.space] -= rec.size_bytes
            self.class_alive[rec.class_name] -= 1
            for child, n in list(self._out.get(obj_id, Counter()).items()):
                self._drop_edge(obj_id, child, n)
            for parent, n in list(self._in.get(obj_id, Counter()).items()):
                self._drop_edge(parent, obj_id, n)
            self.reclaimed.append(obj_id)
            # reachable set is unchanged: only unreachable edges went away

    # -- reporting -------------------------------------------------------

    def histogram(self, live_only: bool = False):
        from predgc.histogram import Histogram

        marked = self.mark_reachable() if live_only else None
        counts: Counter[str] = Counter()
        sizes: Counter[str] = Counter()
        for rec in self.objects.values():
            if not rec.alive or (marked is not None and rec.id not in marked):
                continue
            counts[rec.class_name] += 1
            sizes[rec.class_name] += rec.size_bytes
        return Histogram.from_counts({c: (counts[c], sizes[c]) for c in counts})

    def check_invariants(self):
        """Raise SafetyViolation if occupancy or edge bookkeeping is inconsistent."""
        expected = {space: 0 for space in Space}
        for rec in self.objects.values():
            if rec.alive:
                expected[rec.space] += rec.size_bytes
                if rec.id not in self._members[rec.space]:
                    raise SafetyViolation(f"object {rec.id} missing from {rec.space.value} index")
        if expected != self.occupancy:
            raise SafetyViolation(f"occupancy drift: {self.occupancy} != {expected}")
        for parent, child, _ in self.edges():
            if parent != ROOT and not self.is_alive(parent):
                raise SafetyViolation(f"dangling edge from {parent}")
            if not self.is_alive(child):
                raise SafetyViolation(f"dangling edge to {child}")

    def state(self):
        """Alive ids with their space and age; used to compare schedules."""
        return {
            rec.id: (rec.space.value, rec.age)
            for rec in self.objects.values()
            if rec.alive
        }
