"""Replays a trace against a Heap, handing collection decisions to an arm.

An arm is any object with ``on_alloc(heap, obj_id, position)``,
``collect(heap, position)`` and ``finish(heap, position)``.  Collections are
triggered when an allocation would overflow a non-empty Eden, the same rule
``trace.gc_schedule`` uses.
"""

from __future__ import annotations

from predgc.heap import ROOT, Heap, HeapConfig, MalformedTrace, Space
from predgc.trace import ROOT_TOKEN, Alloc, Link, Tick, Trace, Unlink


def replay(trace: Trace, config: HeapConfig, arm, observer=None, finish=True) -> Heap:
    """Run ``trace`` to completion and return the final heap.

    ``observer(stage, heap, position)`` is called with ``"before_collect"`` and
    ``"after_collect"`` around every collection, including the terminal one.
    """
    heap = Heap(config)
    ids = {ROOT_TOKEN: ROOT}
    cap = config.eden_capacity_bytes

    def lookup(tag):
        try:
            return ids[tag]
        except KeyError:
            raise MalformedTrace(f"unknown tag {tag!r}") from None

    def collect(position, final=False):
        if observer:
            observer("before_collect", heap, position)
        (arm.finish if final else arm.collect)(heap, position)
        if observer:
            observer("after_collect", heap, position)

    for i, ev in enumerate(trace.events):
        if isinstance(ev, Alloc):
            eden = heap.occupancy[Space.EDEN]
            if eden > 0 and eden + ev.size_bytes > cap:
                collect(i)
            parent = lookup(ev.parent)
            obj_id = heap.allocate(ev.class_name, ev.size_bytes)
            ids[ev.tag] = obj_id
            heap.link(parent, obj_id)
            arm.on_alloc(heap, obj_id, i)
        elif isinstance(ev, Link):
            heap.link(lookup(ev.parent), lookup(ev.child))
        elif isinstance(ev, Unlink):
            heap.unlink(lookup(ev.parent), lookup(ev.child))
        elif not isinstance(ev, Tick):
            raise MalformedTrace(f"unknown event {ev!r}")
    if finish:
        collect(len(trace.events), final=True)
    return heap
