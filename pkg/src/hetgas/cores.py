"""Scripted hardware-core nodes.

A hardware core sees exactly what a custom core wired to a GAScore would:
a command FIFO taking encoded command words, a FIFO of DeliveryRecords,
and its own local memory. It never touches the software runtime.
"""

from __future__ import annotations

import struct
from typing import TYPE_CHECKING, Callable, Sequence

from .engine import DeliveryRecord, GasCommand, GasCoreEngine, decode_command, encode_command
from .errors import ConfigInvalid
from .protocol import Category, MsgKind

if TYPE_CHECKING:
    from .system import System

BEHAVIORS: dict[str, Callable[[], "CoreBehavior"]] = {}


def register_behavior(name: str):
    def deco(cls):
        cls.name = name
        BEHAVIORS[name] = cls
        return cls
    return deco


class CorePort:
    """The wires between a hardware core and its GAScore."""

    def __init__(self, system: "System", rank: int, engine: GasCoreEngine):
        self.system = system
        self.rank = rank
        self.engine = engine
        self.activity = 0

    @property
    def now(self) -> int:
        return self.system.now

    @property
    def memory_size(self) -> int:
        return self.engine.segment.size

    def pop_delivery(self) -> DeliveryRecord | None:
        rec = self.engine.pop_delivery()
        if rec is not None:
            for hook in self.system.dispatch_hooks:
                hook(self.rank, rec, self.engine)
            self.system.trace.emit(self.now, "handler_start", self.rank, rec.src_node,
                                   rec.dst_node, rec.seq, f"{rec.kind.label} h={rec.handler_id}")
            self.activity += 1
        return rec

    def push_command(self, words: Sequence[int]) -> None:
        self.engine.push_words(words, self.now)
        self.activity += 1

    def complete(self, record: DeliveryRecord, reply_words: Sequence[int] | None = None) -> None:
        cmd = decode_command(reply_words) if reply_words is not None else None
        self.system.trace.emit(self.now, "handler_end", self.rank, record.src_node,
                               record.dst_node, record.seq, f"h={record.handler_id}")
        self.engine.complete_delivery(record, cmd, self.now)
        self.activity += 1

    def read_payload(self, record: DeliveryRecord) -> bytes:
        return self.engine.payload_of(record)

    def read_local(self, offset: int, length: int) -> bytes:
        return self.engine.segment.read(offset, length)

    def write_local(self, offset: int, data: bytes) -> None:
        self.engine.segment.write(offset, data)


class CoreBehavior:
    name = "base"

    def step(self, port: CorePort) -> None:
        raise NotImplementedError


class CoreDriver:
    def __init__(self, behavior: CoreBehavior, port: CorePort):
        self.behavior = behavior
        self.port = port

    def step(self) -> bool:
        before = self.port.activity
        self.behavior.step(self.port)
        return self.port.activity != before


@register_behavior("sink")
class SinkCore(CoreBehavior):
    """Consumes every delivery without replying."""

    def step(self, port):
        while (rec := port.pop_delivery()) is not None:
            port.complete(rec)


@register_behavior("echo")
class EchoCore(CoreBehavior):
    """Answers each request with a reply of the same category to handler + 1.

    Medium payloads are staged through local memory at offset 0; Long
    replies send back the region just written, to the same offset.
    """

    def step(self, port):
        while (rec := port.pop_delivery()) is not None:
            if rec.kind.is_reply:
                port.complete(rec)
                continue
            cat = rec.kind.category
            kind = MsgKind.of(cat, reply=True)
            src, length, dest = 0, 0, 0
            if cat is Category.MEDIUM:
                data = port.read_payload(rec)
                port.write_local(0, data)
                length = len(data)
            elif cat is Category.LONG:
                src = dest = rec.payload_where.offset
                length = rec.payload_where.length
            reply = GasCommand(kind, (rec.handler_id + 1) & 0xFF, 0, rec.args, src, length, dest)
            port.complete(rec, encode_command(reply))


SCALE_REQUEST_HANDLER = 4
SCALE_REPLY_HANDLER = 5


def scale_words(data: bytes, scale: int) -> bytes:
    """Multiply each little-endian u32 of ``data`` by ``scale`` modulo 2**32."""
    n = len(data) // 4
    vals = struct.unpack(f"<{n}I", data)
    return struct.pack(f"<{n}I", *((v * scale) & 0xFFFFFFFF for v in vals))


@register_behavior("scale")
class ScaleCore(CoreBehavior):
    """Vector-scale kernel: Long request (args scale, result offset) -> Long reply.

    Results are written to the upper half of local memory, then sent back.
    """

    def step(self, port):
        while (rec := port.pop_delivery()) is not None:
            if rec.kind.is_reply or rec.handler_id != SCALE_REQUEST_HANDLER:
                port.complete(rec)
                continue
            scale, result_offset = rec.args[0], rec.args[1]
            out = scale_words(port.read_payload(rec), scale)
            out_offset = port.memory_size // 2
            port.write_local(out_offset, out)
            reply = GasCommand(MsgKind.LONG_REPLY, SCALE_REPLY_HANDLER, 0, (),
                               out_offset, len(out), result_offset)
            port.complete(rec, encode_command(reply))


class ReplayCore(CoreBehavior):
    """Pushes a fixed list of encoded commands once, then sinks deliveries."""

    name = "replay"

    def __init__(self, commands: Sequence[Sequence[int]]):
        self.commands = [list(c) for c in commands]
        self._sent = False

    def step(self, port):
        if not self._sent:
            self._sent = True
            for words in self.commands:
                port.push_command(words)
        SinkCore.step(self, port)


def make_behavior(name: str) -> CoreBehavior:
    try:
        return BEHAVIORS[name]()
    except KeyError:
        raise ConfigInvalid(f"unknown hardware behavior {name!r}; known: {sorted(BEHAVIORS)}")
