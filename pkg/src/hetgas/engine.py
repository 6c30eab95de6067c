"""GAScore-style remote DMA engine.

Each node owns one engine. Commands arrive as 8-word records (plus args)
through a FIFO; the engine DMA-reads the local segment, builds the Active
Message and hands it to the network. Incoming packets are written to the
segment (Long), copied into a bounce buffer (Medium) or passed through
(Short), and a DeliveryRecord is queued for the local handler.

Command word layout (u32 each)::

    w0      opcode | handler_id << 8 | arg_count << 16
    w1      destination node (requests) or reply token (replies)
    w2, w3  payload_len lo, hi
    w4, w5  local_src_offset lo, hi
    w6, w7  dest_offset lo, hi
    w8...   args
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from typing import Callable, Sequence

from .errors import (
    BadToken,
    BounceFull,
    DoubleComplete,
    GasError,
    InvalidCommand,
    OutOfBounds,
    ReplyToReply,
    Truncated,
    UnknownOpcode,
)
from .protocol import (
    MAX_ARGS,
    MAX_MEDIUM,
    MAX_NODE,
    U32,
    U64,
    ActiveMessage,
    Category,
    MsgKind,
    validate,
)
from .segment import Segment
from .trace import NULL_TRACE, Trace

NUM_BOUNCE = 16
BOUNCE_SIZE = MAX_MEDIUM
COMMAND_HEADER_WORDS = 8

# reserved handler the engine answers on behalf of the runtime when a
# remote write cannot land (see on_packet)
PUT_HANDLER = 1
NACK_STATUS = 1

_OPCODES = frozenset(int(k) for k in MsgKind)


@dataclass(frozen=True)
class GasCommand:
    """One "send an Active Message" command as seen on the command FIFO.

    ``target`` is the destination node for requests and the reply token for
    replies.
    """

    opcode: MsgKind
    handler_id: int
    target: int
    args: tuple[int, ...] = ()
    local_src_offset: int = 0
    payload_len: int = 0
    dest_offset: int = 0

    def __post_init__(self):
        object.__setattr__(self, "opcode", MsgKind(self.opcode))
        object.__setattr__(self, "args", tuple(self.args))


def check_command(cmd: GasCommand) -> None:
    if len(cmd.args) > MAX_ARGS:
        raise InvalidCommand(f"{len(cmd.args)} args, limit is {MAX_ARGS}")
    if not 0 <= cmd.handler_id <= 0xFF:
        raise InvalidCommand(f"handler_id {cmd.handler_id}")
    hi = U32 if cmd.opcode.is_reply else MAX_NODE
    if not 0 <= cmd.target <= hi:
        raise InvalidCommand(f"target {cmd.target}")
    if any(not 0 <= a <= U32 for a in cmd.args):
        raise InvalidCommand("argument outside u32 range")
    for name in ("local_src_offset", "payload_len", "dest_offset"):
        if not 0 <= getattr(cmd, name) <= U64:
            raise InvalidCommand(f"{name} outside u64 range")
    cat = cmd.opcode.category
    if cat is Category.SHORT and (cmd.payload_len or cmd.dest_offset):
        raise InvalidCommand("Short command with payload or dest_offset")
    if cat is Category.MEDIUM:
        if cmd.payload_len > MAX_MEDIUM:
            raise InvalidCommand(f"Medium payload {cmd.payload_len} > {MAX_MEDIUM}")
        if cmd.dest_offset:
            raise InvalidCommand("Medium command with dest_offset")


def encode_command(cmd: GasCommand) -> list[int]:
    check_command(cmd)

    def split(v):
        return [v & U32, v >> 32]

    w0 = int(cmd.opcode) | cmd.handler_id << 8 | len(cmd.args) << 16
    return ([w0, cmd.target] + split(cmd.payload_len) + split(cmd.local_src_offset)
            + split(cmd.dest_offset) + list(cmd.args))


def decode_command(words: Sequence[int]) -> GasCommand:
    words = list(words)
    if len(words) < COMMAND_HEADER_WORDS:
        raise Truncated(f"{len(words)} words, header needs {COMMAND_HEADER_WORDS}")
    if any(not 0 <= w <= U32 for w in words):
        raise InvalidCommand("command word outside u32 range")
    w0 = words[0]
    if w0 & 0xFF not in _OPCODES:
        raise UnknownOpcode(f"opcode 0x{w0 & 0xFF:02x}")
    if w0 >> 24:
        raise InvalidCommand("nonzero high byte in w0")
    argc = (w0 >> 16) & 0xFF
    if argc > MAX_ARGS:
        raise InvalidCommand(f"{argc} args, limit is {MAX_ARGS}")
    if len(words) < COMMAND_HEADER_WORDS + argc:
        raise Truncated(f"{len(words)} words, command declares {COMMAND_HEADER_WORDS + argc}")
    if len(words) > COMMAND_HEADER_WORDS + argc:
        raise InvalidCommand("trailing words after command")

    def join(i):
        return words[i] | words[i + 1] << 32

    cmd = GasCommand(MsgKind(w0 & 0xFF), (w0 >> 8) & 0xFF, words[1],
                     tuple(words[8:]), join(4), join(2), join(6))
    check_command(cmd)
    return cmd


@dataclass(frozen=True)
class Bounce:
    index: int
    length: int


@dataclass(frozen=True)
class InSegment:
    offset: int
    length: int


@dataclass(frozen=True)
class DeliveryRecord:
    kind: MsgKind
    src_node: int
    handler_id: int
    args: tuple[int, ...]
    payload_where: Bounce | InSegment | None
    reply_token: int | None
    dst_node: int
    seq: int
    record_id: int


class GasCoreEngine:
    def __init__(self, node_id: int, segment: Segment,
                 inject: Callable[[ActiveMessage, int], None] | None = None,
                 trace: Trace = NULL_TRACE):
        self.node_id = node_id
        self.segment = segment
        self.inject = inject
        self.trace = trace
        self._bounce = [bytearray(BOUNCE_SIZE) for _ in range(NUM_BOUNCE)]
        self._free = deque(range(NUM_BOUNCE))
        self._next_seq: dict[int, int] = {}
        self._tokens: dict[int, int] = {}
        self._next_token = 1
        self._next_record = 0
        self._open: dict[int, DeliveryRecord] = {}
        self.deliveries: deque[DeliveryRecord] = deque()
        self.emitted = 0
        self.delivered = 0
        self.requests_delivered = 0
        self.requests_completed = 0
        self.dropped = 0

    # -- bookkeeping views ------------------------------------------------

    @property
    def bounce_free(self) -> int:
        return len(self._free)

    @property
    def bounce_held(self) -> int:
        return sum(1 for r in self._open.values() if isinstance(r.payload_where, Bounce))

    @property
    def outstanding_tokens(self) -> int:
        return len(self._tokens)

    def read_bounce(self, where: Bounce) -> bytes:
        return bytes(self._bounce[where.index][:where.length])

    def payload_of(self, record: DeliveryRecord) -> bytes:
        where = record.payload_where
        if isinstance(where, Bounce):
            return self.read_bounce(where)
        if isinstance(where, InSegment):
            return self.segment.read(where.offset, where.length)
        return b""

    def pop_delivery(self) -> DeliveryRecord | None:
        return self.deliveries.popleft() if self.deliveries else None

    # -- send path --------------------------------------------------------

    def _emit(self, msg: ActiveMessage, now: int) -> ActiveMessage:
        self.emitted += 1
        self.trace.emit(now, "inject", self.node_id, msg.src_node, msg.dst_node, msg.seq,
                        f"{msg.kind.label} h={msg.handler_id} bytes={msg.encoded_size}")
        if self.inject is not None:
            self.inject(msg, now)
        return msg

    def _take_seq(self, dst: int) -> int:
        seq = self._next_seq.get(dst, 0)
        self._next_seq[dst] = (seq + 1) & U32
        return seq

    def submit_command(self, cmd: GasCommand, now: int = 0,
                       source: Segment | None = None) -> ActiveMessage:
        """DMA the payload out of ``source`` (default: own segment) and emit the AM."""
        check_command(cmd)
        if cmd.opcode.is_reply:
            if cmd.target not in self._tokens:
                raise BadToken(f"reply token {cmd.target} not outstanding at node {self.node_id}")
            dst = self._tokens[cmd.target]
        else:
            dst = cmd.target
        mem = self.segment if source is None else source
        payload = mem.read(cmd.local_src_offset, cmd.payload_len) if cmd.payload_len else b""
        msg = ActiveMessage(cmd.opcode, self.node_id, dst, cmd.handler_id, cmd.args, payload,
                            cmd.dest_offset, self._next_seq.get(dst, 0))
        validate(msg)
        if cmd.opcode.is_reply:
            del self._tokens[cmd.target]
        self._take_seq(dst)
        return self._emit(msg, now)

    def push_words(self, words: Sequence[int], now: int = 0) -> ActiveMessage:
        return self.submit_command(decode_command(words), now)

    # -- receive path -----------------------------------------------------

    def _new_token(self, src: int) -> int:
        tok = self._next_token
        while tok == 0 or tok in self._tokens:
            tok = (tok + 1) & U32
        self._next_token = (tok + 1) & U32
        self._tokens[tok] = src
        return tok

    def _nack(self, msg: ActiveMessage, now: int) -> None:
        op = msg.args[0] if msg.args else 0
        nack = ActiveMessage(MsgKind.SHORT_REPLY, self.node_id, msg.src_node, PUT_HANDLER,
                             (op, NACK_STATUS), seq=self._take_seq(msg.src_node))
        self._emit(nack, now)

    def on_packet(self, msg: ActiveMessage, now: int = 0) -> DeliveryRecord:
        if msg.dst_node != self.node_id:
            raise ValueError(f"packet for node {msg.dst_node} reached engine {self.node_id}")
        cat = msg.kind.category
        where = None
        if cat is Category.LONG:
            end = msg.dest_offset + len(msg.payload)
            if end > self.segment.size:
                self.dropped += 1
                self.trace.emit(now, "error", self.node_id, msg.src_node, msg.dst_node, msg.seq,
                                f"OutOfBounds long write [{msg.dest_offset},{end}) "
                                f"segment={self.segment.size}; dropped")
                if msg.kind.is_request and msg.handler_id == PUT_HANDLER:
                    self._nack(msg, now)
                raise OutOfBounds(f"Long payload [{msg.dest_offset}, {end}) exceeds segment")
            self.segment.write(msg.dest_offset, msg.payload)
            where = InSegment(msg.dest_offset, len(msg.payload))
        elif cat is Category.MEDIUM:
            if not self._free:
                raise BounceFull(f"node {self.node_id}: all {NUM_BOUNCE} bounce buffers held")
            idx = self._free.popleft()
            self._bounce[idx][:len(msg.payload)] = msg.payload
            where = Bounce(idx, len(msg.payload))
        token = None
        if msg.kind.is_request:
            token = self._new_token(msg.src_node)
            self.requests_delivered += 1
        rec = DeliveryRecord(msg.kind, msg.src_node, msg.handler_id, msg.args, where, token,
                             msg.dst_node, msg.seq, self._next_record)
        self._next_record += 1
        self._open[rec.record_id] = rec
        self.deliveries.append(rec)
        self.delivered += 1
        self.trace.emit(now, "deliver", self.node_id, msg.src_node, msg.dst_node, msg.seq,
                        f"{msg.kind.label} h={msg.handler_id} bytes={msg.encoded_size}")
        return rec

    def complete_delivery(self, record: DeliveryRecord, reply_cmd: GasCommand | None = None,
                          now: int = 0, source: Segment | None = None) -> ActiveMessage | None:
        """Retire ``record``; optionally send its one reply first.

        If the reply cannot be sent the record stays open.
        """
        if self._open.get(record.record_id) is not record:
            raise DoubleComplete(f"record {record.record_id} is not open at node {self.node_id}")
        sent = None
        if reply_cmd is not None:
            if record.kind.is_reply:
                raise ReplyToReply("a reply handler may not reply")
            if not reply_cmd.opcode.is_reply:
                raise InvalidCommand(f"{reply_cmd.opcode.label} used as a reply")
            if record.reply_token not in self._tokens:
                raise BadToken(f"token {record.reply_token} already consumed")
            sent = self.submit_command(replace(reply_cmd, target=record.reply_token), now, source)
        del self._open[record.record_id]
        if isinstance(record.payload_where, Bounce):
            self._free.append(record.payload_where.index)
        if record.kind.is_request:
            self._tokens.pop(record.reply_token, None)
            self.requests_completed += 1
        return sent

    def check_invariants(self) -> None:
        held = self.bounce_held
        if held + self.bounce_free != NUM_BOUNCE:
            raise GasError(f"bounce conservation broken: {held} held + {self.bounce_free} free")
        if self.outstanding_tokens != self.requests_delivered - self.requests_completed:
            raise GasError("token accounting broken")
