"""Active Message model and its on-wire packet encoding.

Packet layout (little-endian)::

    [0]       kind code
    [1]       handler id
    [2:4]     source node        u16
    [4:6]     destination node   u16
    [6]       argument count
    [7]       reserved, must be 0
    [8:12]    payload length     u32
    [12:20]   destination offset u64 (Long kinds only)
    [20:24]   sequence number    u32
    then argument count x u32 args, then the payload bytes.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

from .errors import (
    FieldOutOfRange,
    MediumTooLarge,
    MediumWithDestOffset,
    ReservedNonzero,
    ShortWithDestOffset,
    ShortWithPayload,
    TooManyArgs,
    TrailingBytes,
    Truncated,
    UnknownKind,
)

HEADER_SIZE = 24
MAX_ARGS = 8
MAX_MEDIUM = 4096
MAX_NODE = 0xFFFF
U32 = 0xFFFFFFFF
U64 = 0xFFFFFFFFFFFFFFFF

_HEADER = struct.Struct("<BBHHBBIQI")
assert _HEADER.size == HEADER_SIZE


class Category(enum.IntEnum):
    SHORT = 1
    MEDIUM = 2
    LONG = 3


class MsgKind(enum.IntEnum):
    SHORT_REQUEST = 0x01
    MEDIUM_REQUEST = 0x02
    LONG_REQUEST = 0x03
    SHORT_REPLY = 0x11
    MEDIUM_REPLY = 0x12
    LONG_REPLY = 0x13

    @property
    def is_reply(self) -> bool:
        return bool(self & 0x10)

    @property
    def is_request(self) -> bool:
        return not self.is_reply

    @property
    def category(self) -> Category:
        return Category(self & 0x0F)

    @property
    def label(self) -> str:
        return "".join(w.capitalize() for w in self.name.split("_"))

    @classmethod
    def of(cls, category: Category | str, reply: bool) -> "MsgKind":
        if isinstance(category, str):
            category = Category[category.upper()]
        return cls(int(category) | (0x10 if reply else 0))


_KIND_CODES = frozenset(int(k) for k in MsgKind)


@dataclass(frozen=True)
class ActiveMessage:
    kind: MsgKind
    src_node: int
    dst_node: int
    handler_id: int
    args: tuple[int, ...] = ()
    payload: bytes = b""
    dest_offset: int = 0
    seq: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", MsgKind(self.kind))
        object.__setattr__(self, "args", tuple(self.args))
        object.__setattr__(self, "payload", bytes(self.payload))

    @property
    def encoded_size(self) -> int:
        return HEADER_SIZE + 4 * len(self.args) + len(self.payload)


def encoded_size(arg_count: int, payload_len: int) -> int:
    return HEADER_SIZE + 4 * arg_count + payload_len


def _check_range(name, value, hi):
    if not 0 <= value <= hi:
        raise FieldOutOfRange(f"{name}={value} outside 0..{hi}")


def validate(msg: ActiveMessage) -> None:
    """Raise the first violated invariant of ``msg``; return None when valid."""
    if len(msg.args) > MAX_ARGS:
        raise TooManyArgs(f"{len(msg.args)} args, limit is {MAX_ARGS}")
    _check_range("src_node", msg.src_node, MAX_NODE)
    _check_range("dst_node", msg.dst_node, MAX_NODE)
    _check_range("handler_id", msg.handler_id, 0xFF)
    _check_range("seq", msg.seq, U32)
    _check_range("dest_offset", msg.dest_offset, U64)
    _check_range("payload length", len(msg.payload), U32)
    for a in msg.args:
        _check_range("arg", a, U32)
    cat = msg.kind.category
    if cat is Category.SHORT:
        if msg.payload:
            raise ShortWithPayload(f"{len(msg.payload)}-byte payload on {msg.kind.label}")
        if msg.dest_offset:
            raise ShortWithDestOffset(f"dest_offset={msg.dest_offset} on {msg.kind.label}")
    elif cat is Category.MEDIUM:
        if len(msg.payload) > MAX_MEDIUM:
            raise MediumTooLarge(f"{len(msg.payload)} bytes, limit is {MAX_MEDIUM}")
        if msg.dest_offset:
            raise MediumWithDestOffset(f"dest_offset={msg.dest_offset} on {msg.kind.label}")


def encode_packet(msg: ActiveMessage) -> bytes:
    validate(msg)
    head = _HEADER.pack(
        msg.kind, msg.handler_id, msg.src_node, msg.dst_node, len(msg.args), 0,
        len(msg.payload), msg.dest_offset, msg.seq,
    )
    return head + struct.pack(f"<{len(msg.args)}I", *msg.args) + msg.payload


def declared_size(header: bytes) -> int:
    """Total packet size announced by the first HEADER_SIZE bytes of ``header``."""
    return HEADER_SIZE + 4 * header[6] + int.from_bytes(header[8:12], "little")


def decode_packet(data: bytes) -> ActiveMessage:
    data = bytes(data)
    if len(data) < HEADER_SIZE:
        raise Truncated(f"{len(data)} bytes, header needs {HEADER_SIZE}")
    kind, handler, src, dst, argc, reserved, plen, offset, seq = _HEADER.unpack_from(data)
    if kind not in _KIND_CODES:
        raise UnknownKind(f"kind byte 0x{kind:02x}")
    if reserved:
        raise ReservedNonzero(f"reserved byte 0x{reserved:02x}")
    if argc > MAX_ARGS:
        raise TooManyArgs(f"header declares {argc} args")
    total = encoded_size(argc, plen)
    if len(data) < total:
        raise Truncated(f"{len(data)} bytes, header declares {total}")
    if len(data) > total:
        raise TrailingBytes(f"{len(data) - total} bytes past declared end")
    args = struct.unpack_from(f"<{argc}I", data, HEADER_SIZE)
    body = HEADER_SIZE + 4 * argc
    msg = ActiveMessage(MsgKind(kind), src, dst, handler, args, data[body:], offset, seq)
    validate(msg)
    return msg
