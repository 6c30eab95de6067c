import random
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetgas.errors import (
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
    DecodeError,
    InvalidMessage,
)
from hetgas.protocol import (
    HEADER_SIZE,
    ActiveMessage,
    Category,
    MsgKind,
    decode_packet,
    encode_packet,
    validate,
)

from conftest import messages


def test_short_request_hand_encoded():
    msg = ActiveMessage(MsgKind.SHORT_REQUEST, 0, 1, 5, [0xDEADBEEF])
    expected = bytes([
        0x01, 0x05, 0x00, 0x00, 0x01, 0x00, 0x01, 0x00,   # kind handler src dst argc rsvd
        0x00, 0x00, 0x00, 0x00,                           # payload_len
        0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00,   # dest_offset
        0x00, 0x00, 0x00, 0x00,                           # seq
        0xEF, 0xBE, 0xAD, 0xDE,                           # arg0
    ])
    assert encode_packet(msg) == expected
    assert len(expected) == 28
    assert decode_packet(expected) == msg


def test_minimal_header_decodes_to_empty_short_request():
    data = bytes([0x01]) + bytes(23)
    msg = decode_packet(data)
    assert msg == ActiveMessage(MsgKind.SHORT_REQUEST, 0, 0, 0)
    assert msg.args == () and msg.payload == b"" and msg.seq == 0


def test_long_request_hand_encoded():
    msg = ActiveMessage(MsgKind.LONG_REQUEST, 3, 4, 2, [], b"\xAA\xBB", 0x10, 7)
    expected = (bytes([0x03, 0x02, 0x03, 0x00, 0x04, 0x00, 0x00, 0x00])
                + bytes([0x02, 0, 0, 0]) + bytes([0x10]) + bytes(7)
                + bytes([0x07, 0, 0, 0]) + b"\xAA\xBB")
    assert encode_packet(msg) == expected
    assert decode_packet(expected) == msg


def test_kind_codes_and_helpers():
    assert [int(k) for k in MsgKind] == [0x01, 0x02, 0x03, 0x11, 0x12, 0x13]
    assert MsgKind.MEDIUM_REPLY.is_reply and not MsgKind.MEDIUM_REPLY.is_request
    assert MsgKind.LONG_REQUEST.category is Category.LONG
    assert MsgKind.of("medium", reply=True) is MsgKind.MEDIUM_REPLY
    assert MsgKind.SHORT_REQUEST.label == "ShortRequest"


@pytest.mark.parametrize("msg, exc", [
    (ActiveMessage(MsgKind.SHORT_REQUEST, 0, 1, 0, [0] * 9), TooManyArgs),
    (ActiveMessage(MsgKind.SHORT_REQUEST, 0, 1, 0, payload=b"x"), ShortWithPayload),
    (ActiveMessage(MsgKind.SHORT_REPLY, 0, 1, 0, dest_offset=8), ShortWithDestOffset),
    (ActiveMessage(MsgKind.MEDIUM_REQUEST, 0, 1, 0, payload=bytes(4097)), MediumTooLarge),
    (ActiveMessage(MsgKind.MEDIUM_REQUEST, 0, 1, 0, payload=b"a", dest_offset=4),
     MediumWithDestOffset),
    (ActiveMessage(MsgKind.SHORT_REQUEST, 0, 1 << 16, 0), FieldOutOfRange),
    (ActiveMessage(MsgKind.SHORT_REQUEST, 0, 1, 256), FieldOutOfRange),
    (ActiveMessage(MsgKind.SHORT_REQUEST, 0, 1, 0, [1 << 32]), FieldOutOfRange),
])
def test_validate_rejects(msg, exc):
    with pytest.raises(exc):
        validate(msg)
    with pytest.raises(InvalidMessage):
        encode_packet(msg)


def test_validate_boundaries_accept():
    validate(ActiveMessage(MsgKind.SHORT_REQUEST, 0, 1, 0, [0] * 8))
    validate(ActiveMessage(MsgKind.MEDIUM_REPLY, 0, 1, 0, payload=bytes(4096)))
    validate(ActiveMessage(MsgKind.LONG_REPLY, 0xFFFF, 0xFFFF, 255, [], bytes(5000),
                           (1 << 64) - 1, (1 << 32) - 1))


def test_validate_reports_arg_count_first():
    msg = ActiveMessage(MsgKind.SHORT_REQUEST, 0, 1, 0, [0] * 9, payload=b"x")
    with pytest.raises(TooManyArgs):
        validate(msg)


def _header(kind=0x01, argc=0, rsvd=0, plen=0, handler=0):
    return struct.pack("<BBHHBBIQI", kind, handler, 0, 1, argc, rsvd, plen, 0, 0)


@pytest.mark.parametrize("data, exc", [
    (b"", Truncated),
    (bytes(23), Truncated),
    (_header(kind=0x04), UnknownKind),
    (_header(kind=0x00), UnknownKind),
    (_header(rsvd=1), ReservedNonzero),
    (_header(argc=9) + bytes(36), TooManyArgs),
    (_header(argc=2) + bytes(4), Truncated),
    (_header(kind=0x02, plen=10) + bytes(9), Truncated),
    (_header() + b"\x00", TrailingBytes),
    (_header(plen=1) + b"\x00", ShortWithPayload),
    (_header(kind=0x12, plen=4097) + bytes(4097), MediumTooLarge),
])
def test_decode_rejects(data, exc):
    with pytest.raises(exc):
        decode_packet(data)


@given(messages())
def test_round_trip(msg):
    data = encode_packet(msg)
    assert decode_packet(data) == msg


@given(messages())
def test_encoded_length_formula(msg):
    data = encode_packet(msg)
    assert len(data) == HEADER_SIZE + 4 * len(msg.args) + len(msg.payload)
    assert len(data) == msg.encoded_size


@given(messages(), messages())
def test_encoding_is_injective(a, b):
    if a != b:
        assert encode_packet(a) != encode_packet(b)


@given(st.binary(max_size=200))
def test_decode_is_total(data):
    try:
        msg = decode_packet(data)
    except DecodeError:
        return
    except InvalidMessage:
        return
    assert encode_packet(msg) == data


@settings(max_examples=200)
@given(messages(), st.data())
def test_any_truncation_is_rejected(msg, data):
    enc = encode_packet(msg)
    cut = data.draw(st.integers(0, len(enc) - 1))
    with pytest.raises(Truncated):
        decode_packet(enc[:cut])


def test_random_headers_never_crash():
    rng = random.Random(7)
    for _ in range(2000):
        blob = rng.randbytes(rng.randint(0, 64))
        if blob:
            blob = bytes([rng.choice([1, 2, 3, 0x11, 0x12, 0x13])]) + blob[1:]
        try:
            decode_packet(blob)
        except (DecodeError, InvalidMessage):
            pass


def test_long_request_field_offsets():
    data = encode_packet(ActiveMessage(MsgKind.LONG_REQUEST, 0, 1, 0, [], b"\x11\x22", 32))
    assert len(data) == 26
    assert data[8:12] == bytes([0x02, 0, 0, 0])
    assert data[12:20] == bytes([0x20, 0, 0, 0, 0, 0, 0, 0])
    assert data[24:] == b"\x11\x22"


def test_short_inputs_are_truncated():
    with pytest.raises(Truncated):
        decode_packet(bytes(10))
    with pytest.raises(Truncated):
        decode_packet(_header(argc=3) + bytes(8))
