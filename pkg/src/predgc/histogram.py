"""Per-class heap histograms in the ``jmap -histo`` text layout."""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field

HEADER = "num     #instances         #bytes  class name"

_ROW = re.compile(r"^\s*(\d+):\s+(\S+)\s+(\S+)\s+(\S.*?)\s*$")


class HistogramParseError(ValueError):
    def __init__(self, lineno, msg):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass(frozen=True)
class HistogramRow:
    rank: int
    class_name: str
    instances: int
    bytes: int


@dataclass
class Histogram:
    rows: list[HistogramRow] = field(default_factory=list)

    @classmethod
    def from_counts(cls, counts):
        """Build from ``{class_name: (instances, bytes)}``; rows ranked by
        descending bytes, ties by ascending class name."""
        ordered = sorted(counts.items(), key=lambda kv: (-kv[1][1], kv[0]))
        return cls([
            HistogramRow(rank, name, inst, nbytes)
            for rank, (name, (inst, nbytes)) in enumerate(ordered, start=1)
        ])

    def totals(self):
        """Per-class ``(instances, bytes)``, summing duplicate class rows."""
        out = {}
        for row in self.rows:
            inst, nbytes = out.get(row.class_name, (0, 0))
            out[row.class_name] = (inst + row.instances, nbytes + row.bytes)
        return out

    def row(self, class_name):
        for r in self.rows:
            if r.class_name == class_name:
                return r
        raise KeyError(class_name)

    def __len__(self):
        return len(self.rows)


def format_histogram(hist: Histogram) -> str:
    lines = [HEADER]
    lines += [f"{r.rank}:\t{r.instances}\t{r.bytes}\t{r.class_name}" for r in hist.rows]
    return "\n".join(lines) + "\n"


def format_histogram_csv(hist: Histogram) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class_name", "instances", "bytes"])
    for r in hist.rows:
        w.writerow([r.class_name, r.instances, r.bytes])
    return buf.getvalue()


def parse_histogram(text: str) -> Histogram:
    """Parse jmap-style rows ``<n>: <instances> <bytes> <class name>``.

    The header, dashed separator lines, a trailing ``Total`` line and blank
    lines are skipped.  Rows are kept in file order.
    """
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("num") or set(stripped) <= {"-", " "}:
            continue
        if stripped.startswith("Total"):
            continue
        m = _ROW.match(line)
        if not m:
            raise HistogramParseError(lineno, f"unrecognised row {line!r}")
        rank, inst, nbytes, name = m.groups()
        try:
            rows.append(HistogramRow(int(rank), name, int(inst), int(nbytes)))
        except ValueError:
            raise HistogramParseError(lineno, f"non-integer count in {line!r}") from None
    return Histogram(rows)


@dataclass(frozen=True)
class HistoDelta:
    class_name: str
    delta_instances: int
    delta_bytes: int


def histo_diff(old: Histogram, new: Histogram) -> list[HistoDelta]:
    """New minus old, per class, sorted by class name.  A class missing from
    one side counts as zero there."""
    a, b = old.totals(), new.totals()
    out = []
    for name in sorted(set(a) | set(b)):
        oi, ob = a.get(name, (0, 0))
        ni, nb = b.get(name, (0, 0))
        out.append(HistoDelta(name, ni - oi, nb - ob))
    return out


def format_diff_csv(deltas) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class_name", "delta_instances", "delta_bytes"])
    for d in deltas:
        w.writerow([d.class_name, d.delta_instances, d.delta_bytes])
    return buf.getvalue()
