"""Line-delimited JSON trace records."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import IO

KINDS = ("inject", "deliver", "stall", "handler_start", "handler_end", "error", "stat")


@dataclass(frozen=True)
class TraceEvent:
    time: int
    kind: str
    node: int | None
    src: int | None = None
    dst: int | None = None
    seq: int | None = None
    detail: str = ""

    def to_line(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))


class Trace:
    """Collects trace events, optionally keeping them in memory and/or writing a file."""

    def __init__(self, path: str | None = None, keep: bool = False):
        self.path = path
        self.keep = keep
        self.events: list[TraceEvent] = []
        self.counts: dict[str, int] = {}
        self._fh: IO[str] | None = open(path, "w", encoding="utf-8") if path else None

    def emit(self, time, kind, node, src=None, dst=None, seq=None, detail=""):
        self.counts[kind] = self.counts.get(kind, 0) + 1
        if self._fh is None and not self.keep:
            return
        ev = TraceEvent(time, kind, node, src, dst, seq, detail)
        if self.keep:
            self.events.append(ev)
        if self._fh is not None:
            self._fh.write(ev.to_line())
            self._fh.write("\n")

    def of_kind(self, kind: str) -> list[TraceEvent]:
        return [e for e in self.events if e.kind == kind]

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def read_trace(path: str) -> list[TraceEvent]:
    with open(path, encoding="utf-8") as fh:
        return [TraceEvent(**json.loads(line)) for line in fh if line.strip()]


# shared sink for components built without a trace; it only counts
NULL_TRACE = Trace()
