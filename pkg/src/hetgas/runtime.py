"""Software node runtime: the GASNet-Core-style API used by application code.

Application programs are generator functions taking a :class:`NodeHandle`.
Blocking calls (``wait``, ``barrier_wait``, ``sleep``) are generators and are
used with ``yield from``; everything else returns immediately::

    def main(node):
        h = node.put(1, 16, b"\\x01\\x02")
        yield from node.wait(h)
        yield from node.barrier()

Handlers receive a :class:`HandlerContext` and may only reply.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Iterator

from .engine import NACK_STATUS, PUT_HANDLER, DeliveryRecord, GasCommand, GasCoreEngine, check_command
from .errors import (
    AlreadyReplied,
    BarrierMismatch,
    BarrierStateError,
    BlockingInHandler,
    DuplicateId,
    GasError,
    InvalidArgs,
    InvalidCommand,
    NotARequest,
    OutOfBoundsLocal,
    OutOfBoundsRemote,
    RequestInHandler,
    ReservedId,
    UnknownNode,
    UnknownRank,
)
from .protocol import U32, ActiveMessage, Category, MsgKind
from .segment import Segment

if TYPE_CHECKING:
    from .config import SystemConfig
    from .system import System

NOOP_HANDLER = 0
GET_HANDLER = 2
BARRIER_HANDLER = 3
FIRST_USER_HANDLER = 4

_NOTIFY, _RELEASE = 0, 1


def _split64(v: int) -> tuple[int, int]:
    return v & U32, v >> 32


def _join64(lo: int, hi: int) -> int:
    return lo | hi << 32


def _kind(kind, reply: bool) -> MsgKind:
    if isinstance(kind, MsgKind):
        if kind.is_reply != reply:
            raise InvalidArgs(f"{kind.label} where a {'reply' if reply else 'request'} is needed")
        return kind
    try:
        return MsgKind.of(kind, reply)
    except (KeyError, ValueError) as exc:
        raise InvalidArgs(f"unknown message category {kind!r}") from exc


@dataclass
class SyncHandle:
    op_id: int
    kind: str
    done: bool = False
    error: GasError | None = None

    def _complete(self, error: GasError | None = None) -> None:
        if self.done:
            raise GasError(f"{self.kind} {self.op_id} completed twice")
        self.error = error
        self.done = True


class HandlerContext:
    """Read-only view of one delivery plus a single-use reply capability."""

    def __init__(self, node: "NodeHandle", record: DeliveryRecord):
        self.node = node
        self.record = record
        self._active = True
        self._reply: tuple[GasCommand, Segment | None] | None = None
        self._payload: bytes | None = None

    src = property(lambda self: self.record.src_node)
    kind = property(lambda self: self.record.kind)
    handler_id = property(lambda self: self.record.handler_id)
    args = property(lambda self: self.record.args)
    seq = property(lambda self: self.record.seq)

    @property
    def is_request(self) -> bool:
        return self.record.kind.is_request

    @property
    def dest_offset(self) -> int | None:
        where = self.record.payload_where
        return getattr(where, "offset", None)

    @property
    def payload(self) -> bytes:
        if self._payload is None:
            self._payload = self.node.engine.payload_of(self.record)
        return self._payload

    def reply(self, kind, handler: int, args=(), payload: bytes | None = None,
              dest_offset: int = 0, *, src_offset: int | None = None,
              nbytes: int | None = None) -> None:
        self.node.am_reply(self, kind, handler, args, payload, dest_offset,
                           src_offset=src_offset, nbytes=nbytes)


class NodeHandle:
    def __init__(self, rank: int, size: int, segment: Segment,
                 engine: GasCoreEngine | None = None, system: "System | None" = None):
        if not 0 <= rank < size:
            raise UnknownRank(f"rank {rank} not in 0..{size - 1}")
        self.rank = rank
        self.size = size
        self.segment = segment
        self.engine = engine if engine is not None else GasCoreEngine(rank, segment)
        self.system = system
        self.handlers: dict[int, Callable[[HandlerContext], None]] = {}
        self._reserved = {
            NOOP_HANDLER: lambda ctx: None,
            PUT_HANDLER: self._put_handler,
            GET_HANDLER: self._get_handler,
            BARRIER_HANDLER: self._barrier_handler,
        }
        self.activity = 0
        self.command_log: list[GasCommand] | None = None
        self._in_handler = False
        self._op_ids = itertools.count(1)
        self._ops: dict[int, SyncHandle] = {}
        self._barrier_epoch = 0
        self._barrier_pending: int | None = None
        self._released: dict[int, bool] = {}
        self._coord: dict[int, list] = {}
        self._to_release: list[int] = []

    def __repr__(self):
        return f"NodeHandle(rank={self.rank}, size={self.size})"

    @property
    def now(self) -> int:
        return self.system.now if self.system is not None else 0

    def _trace(self, kind, src=None, dst=None, seq=None, detail=""):
        if self.system is not None:
            self.system.trace.emit(self.now, kind, self.rank, src, dst, seq, detail)

    def _no_request_here(self, what: str) -> None:
        if self._in_handler:
            raise RequestInHandler(f"{what} is not allowed inside a handler")

    def _no_block_here(self, what: str) -> None:
        if self._in_handler:
            raise BlockingInHandler(f"{what} is not allowed inside a handler")

    # -- handlers ----------------------------------------------------------

    def register_handler(self, handler_id: int, fn: Callable[[HandlerContext], None]) -> None:
        if 0 <= handler_id < FIRST_USER_HANDLER:
            raise ReservedId(f"handler ids 0..{FIRST_USER_HANDLER - 1} are reserved")
        if not FIRST_USER_HANDLER <= handler_id <= 0xFF:
            raise InvalidArgs(f"handler id {handler_id} outside {FIRST_USER_HANDLER}..255")
        if handler_id in self.handlers:
            raise DuplicateId(f"handler {handler_id} already registered")
        self.handlers[handler_id] = fn

    # -- sending -----------------------------------------------------------

    def _build(self, kind: MsgKind, target: int, handler: int, args, payload, dest_offset,
               src_offset, nbytes) -> tuple[GasCommand, Segment | None]:
        args = tuple(args)
        source = None
        if payload is not None and src_offset is not None:
            raise InvalidArgs("give either payload bytes or src_offset, not both")
        if kind.category is Category.SHORT:
            if payload or src_offset is not None or nbytes:
                raise InvalidArgs("Short messages carry no payload")
            length, local = 0, 0
        elif src_offset is not None:
            length, local = (nbytes or 0), src_offset
            if local < 0 or local + length > self.segment.size:
                raise OutOfBoundsLocal(f"[{local}, {local + length}) outside local segment")
        else:
            payload = bytes(payload or b"")
            length, local = len(payload), 0
            if length:
                # the runtime copies caller memory at call time
                source = Segment(length)
                source.write(0, payload)
        cmd = GasCommand(kind, handler, target, args, local, length, dest_offset)
        try:
            check_command(cmd)
        except InvalidCommand as exc:
            raise InvalidArgs(str(exc)) from exc
        return cmd, source

    def am_request(self, kind, dst: int, handler: int, args=(), payload: bytes | None = None,
                   dest_offset: int = 0, *, src_offset: int | None = None,
                   nbytes: int | None = None) -> ActiveMessage:
        """Send a request and return the emitted message. ``kind`` is 'short', 'medium', 'long' or a request MsgKind.

        The payload comes from ``payload`` (copied immediately) or from the
        local segment at ``src_offset``/``nbytes``.
        """
        self._no_request_here("am_request")
        kind = _kind(kind, reply=False)
        if not 0 <= dst < self.size:
            raise UnknownNode(f"node {dst} not in 0..{self.size - 1}")
        cmd, source = self._build(kind, dst, handler, args, payload, dest_offset, src_offset, nbytes)
        if self.command_log is not None:
            self.command_log.append(cmd)
        msg = self.engine.submit_command(cmd, self.now, source)
        self.activity += 1
        return msg

    def am_reply(self, ctx: HandlerContext, kind, handler: int, args=(),
                 payload: bytes | None = None, dest_offset: int = 0, *,
                 src_offset: int | None = None, nbytes: int | None = None) -> None:
        if not ctx._active:
            raise GasError("handler context used after its handler returned")
        if not ctx.is_request:
            raise NotARequest("reply handlers may not reply")
        if ctx._reply is not None:
            raise AlreadyReplied("a request may be replied to at most once")
        kind = _kind(kind, reply=True)
        cmd, source = self._build(kind, ctx.record.reply_token, handler, args, payload,
                                  dest_offset, src_offset, nbytes)
        ctx._reply = (cmd, source)

    # -- dispatch ----------------------------------------------------------

    def poll(self) -> None:
        """Run handlers for every queued delivery, in arrival order."""
        self._no_block_here("poll")
        while True:
            rec = self.engine.pop_delivery()
            if rec is None:
                break
            self._dispatch(rec)
        if self._to_release:
            self._send_releases()

    def _dispatch(self, rec: DeliveryRecord) -> None:
        if self.system is not None:
            for hook in self.system.dispatch_hooks:
                hook(self.rank, rec, self.engine)
        self.activity += 1
        self._trace("handler_start", rec.src_node, rec.dst_node, rec.seq,
                    f"{rec.kind.label} h={rec.handler_id}")
        ctx = HandlerContext(self, rec)
        fn = self._reserved.get(rec.handler_id) or self.handlers.get(rec.handler_id)
        self._in_handler = True
        try:
            if fn is None:
                self._trace("error", rec.src_node, rec.dst_node, rec.seq,
                            f"UnboundHandler h={rec.handler_id}; dropped")
            else:
                fn(ctx)
        except BaseException:
            self._in_handler = False
            ctx._active = False
            self.engine.complete_delivery(rec, None, self.now)
            raise
        self._in_handler = False
        ctx._active = False
        self._trace("handler_end", rec.src_node, rec.dst_node, rec.seq, f"h={rec.handler_id}")
        cmd, source = ctx._reply if ctx._reply else (None, None)
        if self.command_log is not None and cmd is not None:
            self.command_log.append(cmd)
        try:
            self.engine.complete_delivery(rec, cmd, self.now, source)
        except GasError:
            self.engine.complete_delivery(rec, None, self.now)
            raise

    # -- blocking helpers (generators) -------------------------------------

    def _wait_until(self, pred: Callable[[], bool]) -> Iterator[None]:
        while True:
            self.poll()
            if pred():
                self.activity += 1
                return
            yield

    def wait_until(self, pred: Callable[[], bool]) -> Iterator[None]:
        self._no_block_here("wait_until")
        return self._wait_until(pred)

    def wait(self, handle: SyncHandle) -> Iterator[None]:
        """Block until ``handle`` completes; raises the operation's error, if any."""
        self._no_block_here("wait")

        def gen():
            yield from self._wait_until(lambda: handle.done)
            if handle.error is not None:
                raise handle.error
            return handle

        return gen()

    def sleep(self, cycles: int) -> Iterator[None]:
        """Model ``cycles`` of local computation. Does not poll."""
        self._no_block_here("sleep")
        if self.system is None:
            raise GasError("sleep needs a running system")
        until = self.now + cycles
        self.system.add_timer(until)

        def gen():
            while self.system.now < until:
                yield
            self.activity += 1

        return gen()

    # -- put / get ---------------------------------------------------------

    def _new_op(self, kind: str) -> SyncHandle:
        op = next(self._op_ids) & U32
        handle = SyncHandle(op, kind)
        self._ops[op] = handle
        return handle

    def put(self, dst: int, dest_offset: int, data: bytes) -> SyncHandle:
        self._no_request_here("put")
        handle = self._new_op("put")
        try:
            self.am_request(MsgKind.LONG_REQUEST, dst, PUT_HANDLER, (handle.op_id,), bytes(data),
                            dest_offset)
        except BaseException:
            del self._ops[handle.op_id]
            raise
        return handle

    def get(self, dst: int, src_offset: int, length: int, local_offset: int) -> SyncHandle:
        self._no_request_here("get")
        if local_offset < 0 or length < 0 or local_offset + length > self.segment.size:
            raise OutOfBoundsLocal(f"[{local_offset}, {local_offset + length}) outside local segment")
        handle = self._new_op("get")
        args = (handle.op_id, *_split64(src_offset), *_split64(length), *_split64(local_offset))
        try:
            self.am_request(MsgKind.SHORT_REQUEST, dst, GET_HANDLER, args)
        except BaseException:
            del self._ops[handle.op_id]
            raise
        return handle

    def _finish_op(self, op: int, error: GasError | None) -> None:
        handle = self._ops.pop(op, None)
        if handle is None:
            self._trace("error", detail=f"completion for unknown op {op}")
            return
        if error is not None:
            self._trace("error", detail=f"{handle.kind} {op}: {error}")
        handle._complete(error)

    def _put_handler(self, ctx: HandlerContext) -> None:
        if ctx.is_request:
            ctx.reply(MsgKind.SHORT_REPLY, PUT_HANDLER, (ctx.args[0], 0))
            return
        op, status = ctx.args
        err = None
        if status == NACK_STATUS:
            err = OutOfBoundsRemote(f"put to node {ctx.src} landed outside its segment (nack)")
        self._finish_op(op, err)

    def _get_handler(self, ctx: HandlerContext) -> None:
        if ctx.is_request:
            op = ctx.args[0]
            src = _join64(*ctx.args[1:3])
            length = _join64(*ctx.args[3:5])
            local = _join64(*ctx.args[5:7])
            if src + length > self.segment.size:
                ctx.reply(MsgKind.SHORT_REPLY, GET_HANDLER, (op, 1))
            else:
                ctx.reply(MsgKind.LONG_REPLY, GET_HANDLER, (op, 0), dest_offset=local,
                          src_offset=src, nbytes=length)
            return
        err = None
        if ctx.kind.category is Category.SHORT:
            err = OutOfBoundsRemote(f"get from node {ctx.src} outside its segment")
        self._finish_op(ctx.args[0], err)

    # -- barrier -----------------------------------------------------------

    def barrier_notify(self, value: int = 0, anonymous: bool = True) -> None:
        self._no_request_here("barrier_notify")
        if self._barrier_pending is not None:
            raise BarrierStateError("barrier_notify twice without barrier_wait")
        epoch = self._barrier_epoch & U32
        self.am_request(MsgKind.SHORT_REQUEST, 0, BARRIER_HANDLER,
                        (epoch, _NOTIFY, 1 if anonymous else 0, value & U32))
        self._barrier_pending = epoch
        self._barrier_epoch += 1

    def barrier_wait(self) -> Iterator[None]:
        self._no_block_here("barrier_wait")
        if self._barrier_pending is None:
            raise BarrierStateError("barrier_wait without barrier_notify")
        epoch = self._barrier_pending

        def gen():
            yield from self._wait_until(lambda: epoch in self._released)
            mismatch = self._released.pop(epoch)
            self._barrier_pending = None
            self._trace("stat", detail=f"barrier epoch={epoch} done mismatch={int(mismatch)}")
            if mismatch:
                raise BarrierMismatch(f"named barrier values differ in epoch {epoch}")

        return gen()

    def barrier(self, value: int = 0, anonymous: bool = True) -> Iterator[None]:
        self.barrier_notify(value, anonymous)
        return self.barrier_wait()

    def _barrier_handler(self, ctx: HandlerContext) -> None:
        epoch, op = ctx.args[0], ctx.args[1]
        if op == _RELEASE:
            self._released[epoch] = bool(ctx.args[2])
            return
        if self.rank != 0:
            raise GasError(f"barrier notify reached non-coordinator node {self.rank}")
        state = self._coord.setdefault(epoch, [0, None, False])
        state[0] += 1
        anonymous, value = ctx.args[2], ctx.args[3]
        if not anonymous:
            if state[1] is None:
                state[1] = value
            elif state[1] != value:
                state[2] = True
        if state[0] == self.size:
            self._to_release.append(epoch)

    def _send_releases(self) -> None:
        pending, self._to_release = self._to_release, []
        for epoch in pending:
            mismatch = self._coord.pop(epoch)[2]
            for r in range(self.size):
                self.am_request(MsgKind.SHORT_REQUEST, r, BARRIER_HANDLER,
                                (epoch, _RELEASE, int(mismatch)))


def node_init(config: "SystemConfig", rank: int, system: "System | None" = None,
              engine: GasCoreEngine | None = None) -> NodeHandle:
    """Create the software runtime of ``rank`` with its segment attached per ``config``."""
    from .config import SOFTWARE
    from .errors import ConfigInvalid

    if not 0 <= rank < config.size:
        raise UnknownRank(f"rank {rank} not in a {config.size}-node config")
    ncfg = config.node(rank)
    if ncfg.kind != SOFTWARE:
        raise ConfigInvalid(f"rank {rank} is a {ncfg.kind} node")
    segment = engine.segment if engine is not None else Segment(ncfg.segment_size, ncfg.placement)
    return NodeHandle(rank, config.size, segment, engine, system)
