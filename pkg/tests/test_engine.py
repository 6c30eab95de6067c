import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hetgas.engine import (
    NUM_BOUNCE,
    Bounce,
    GasCommand,
    GasCoreEngine,
    InSegment,
    decode_command,
    encode_command,
)
from hetgas.errors import (
    BadToken,
    BounceFull,
    DoubleComplete,
    InvalidCommand,
    OutOfBounds,
    ReplyToReply,
    Truncated,
    UnknownOpcode,
)
from hetgas.protocol import ActiveMessage, MsgKind
from hetgas.segment import Segment
from hetgas.trace import Trace


def make_engine(node=0, size=256, keep=False):
    sent = []
    trace = Trace(keep=keep)
    eng = GasCoreEngine(node, Segment(size), inject=lambda m, t: sent.append((m, t)), trace=trace)
    return eng, sent


# -- command FIFO encoding ----------------------------------------------------

def test_short_command_words():
    cmd = GasCommand(MsgKind.SHORT_REQUEST, 3, 2, (7,))
    words = encode_command(cmd)
    assert words == [0x00010301, 2, 0, 0, 0, 0, 0, 0, 7]
    assert decode_command(words) == cmd


def test_long_command_words_split_u64():
    cmd = GasCommand(MsgKind.LONG_REPLY, 9, 5, (), local_src_offset=0x1_0000_0002,
                     payload_len=16, dest_offset=0xAABBCCDD_00112233)
    words = encode_command(cmd)
    assert words == [0x0913, 5, 16, 0, 2, 1, 0x00112233, 0xAABBCCDD]
    assert decode_command(words) == cmd


@st.composite
def commands(draw):
    op = draw(st.sampled_from(list(MsgKind)))
    target = draw(st.integers(0, 0xFFFFFFFF if op.is_reply else 0xFFFF))
    plen, doff = 0, 0
    if op.category.name == "MEDIUM":
        plen = draw(st.integers(0, 4096))
    elif op.category.name == "LONG":
        plen = draw(st.integers(0, (1 << 64) - 1))
        doff = draw(st.integers(0, (1 << 64) - 1))
    src = draw(st.integers(0, (1 << 64) - 1)) if plen else 0
    return GasCommand(op, draw(st.integers(0, 255)), target,
                      tuple(draw(st.lists(st.integers(0, 0xFFFFFFFF), max_size=8))),
                      src, plen, doff)


@given(commands())
def test_command_round_trip(cmd):
    words = encode_command(cmd)
    assert len(words) == 8 + len(cmd.args)
    assert decode_command(words) == cmd


@given(commands(), st.data())
def test_command_truncation(cmd, data):
    words = encode_command(cmd)
    cut = data.draw(st.integers(0, len(words) - 1))
    with pytest.raises(Truncated):
        decode_command(words[:cut])


@pytest.mark.parametrize("w0", [0x00, 0x04, 0x10, 0x14, 0xFF])
def test_unknown_opcode(w0):
    with pytest.raises(UnknownOpcode):
        decode_command([w0, 0, 0, 0, 0, 0, 0, 0])


@pytest.mark.parametrize("words", [
    [0x01000001] + [0] * 7,                     # high byte set
    [0x00010001] + [0] * 7 + [1, 2],            # trailing word
    [0x00090001] + [0] * 7 + [0] * 9,           # nine args
    [0x0001, 0, 1, 0, 0, 0, 0, 0],              # Short with payload
    [0x0002, 0, 4097, 0, 0, 0, 0, 0],           # Medium too large
])
def test_invalid_commands(words):
    with pytest.raises(InvalidCommand):
        decode_command(words)


# -- send path --------------------------------------------------------------

def test_long_request_dmas_from_segment():
    eng, sent = make_engine(node=2)
    eng.segment.write(10, b"hello")
    msg = eng.submit_command(GasCommand(MsgKind.LONG_REQUEST, 4, 1, (9,), 10, 5, 64), now=3)
    assert msg == ActiveMessage(MsgKind.LONG_REQUEST, 2, 1, 4, (9,), b"hello", 64, 0)
    assert sent == [(msg, 3)]


def test_sequence_numbers_per_destination():
    eng, sent = make_engine()
    for dst in (1, 1, 2, 1):
        eng.submit_command(GasCommand(MsgKind.SHORT_REQUEST, 0, dst))
    assert [(m.dst_node, m.seq) for m, _ in sent] == [(1, 0), (1, 1), (2, 0), (1, 2)]


def test_reply_with_unknown_token():
    eng, sent = make_engine()
    with pytest.raises(BadToken):
        eng.submit_command(GasCommand(MsgKind.SHORT_REPLY, 0, 42))
    assert sent == []


def test_source_out_of_bounds_consumes_nothing():
    eng, sent = make_engine(size=16)
    with pytest.raises(OutOfBounds):
        eng.submit_command(GasCommand(MsgKind.MEDIUM_REQUEST, 0, 1, (), 8, 16))
    eng.submit_command(GasCommand(MsgKind.SHORT_REQUEST, 0, 1))
    assert sent[0][0].seq == 0


def test_push_words_decodes_and_sends():
    eng, sent = make_engine()
    msg = eng.push_words([0x00010301, 2, 0, 0, 0, 0, 0, 0, 7])
    assert (msg.kind, msg.handler_id, msg.dst_node, msg.args) == (MsgKind.SHORT_REQUEST, 3, 2, (7,))


# -- receive path -------------------------------------------------------------

def test_long_payload_written_before_delivery():
    eng, _ = make_engine(node=1, keep=True)
    rec = eng.on_packet(ActiveMessage(MsgKind.LONG_REQUEST, 0, 1, 4, (), b"abc", 100))
    assert eng.segment.read(100, 3) == b"abc"
    assert rec.payload_where == InSegment(100, 3)
    assert eng.payload_of(rec) == b"abc"
    assert rec.reply_token is not None
    assert eng.pop_delivery() is rec and eng.pop_delivery() is None
    assert eng.trace.of_kind("deliver")[0].detail == "LongRequest h=4 bytes=27"


def test_long_out_of_bounds_is_dropped():
    eng, sent = make_engine(node=1, size=64, keep=True)
    with pytest.raises(OutOfBounds):
        eng.on_packet(ActiveMessage(MsgKind.LONG_REQUEST, 0, 1, 9, (), bytes(8), 60))
    assert eng.segment.snapshot() == bytes(64)
    assert eng.pop_delivery() is None
    assert eng.dropped == 1 and len(eng.trace.of_kind("error")) == 1
    assert sent == []  # no nack for a user handler


def test_out_of_bounds_put_is_nacked():
    eng, sent = make_engine(node=1, size=64)
    with pytest.raises(OutOfBounds):
        eng.on_packet(ActiveMessage(MsgKind.LONG_REQUEST, 0, 1, 1, (77,), bytes(8), 60))
    (nack, _), = sent
    assert (nack.kind, nack.dst_node, nack.handler_id, nack.args) == \
        (MsgKind.SHORT_REPLY, 0, 1, (77, 1))


def test_bounce_exhaustion_and_recovery():
    eng, _ = make_engine(node=1)
    recs = [eng.on_packet(ActiveMessage(MsgKind.MEDIUM_REQUEST, 0, 1, 4, (), bytes([i]) * 3))
            for i in range(NUM_BOUNCE)]
    assert eng.bounce_free == 0
    with pytest.raises(BounceFull):
        eng.on_packet(ActiveMessage(MsgKind.MEDIUM_REQUEST, 0, 1, 4, (), b"late"))
    eng.complete_delivery(recs[5])
    rec = eng.on_packet(ActiveMessage(MsgKind.MEDIUM_REQUEST, 0, 1, 4, (), b"late"))
    assert rec.payload_where == Bounce(recs[5].payload_where.index, 4)
    assert eng.payload_of(rec) == b"late"
    assert eng.payload_of(recs[3]) == b"\x03\x03\x03"


def test_reply_uses_token_once():
    eng, sent = make_engine(node=1)
    rec = eng.on_packet(ActiveMessage(MsgKind.SHORT_REQUEST, 7, 1, 4, (1,)))
    out = eng.complete_delivery(rec, GasCommand(MsgKind.SHORT_REPLY, 5, 0, (2,)))
    assert (out.dst_node, out.handler_id, out.args) == (7, 5, (2,))
    with pytest.raises(BadToken):
        eng.submit_command(GasCommand(MsgKind.SHORT_REPLY, 5, rec.reply_token))
    with pytest.raises(DoubleComplete):
        eng.complete_delivery(rec)


def test_reply_handler_may_not_reply():
    eng, _ = make_engine(node=1)
    rec = eng.on_packet(ActiveMessage(MsgKind.SHORT_REPLY, 7, 1, 4))
    assert rec.reply_token is None
    with pytest.raises(ReplyToReply):
        eng.complete_delivery(rec, GasCommand(MsgKind.SHORT_REPLY, 5, 0))


def test_reply_command_must_be_a_reply():
    eng, _ = make_engine(node=1)
    rec = eng.on_packet(ActiveMessage(MsgKind.SHORT_REQUEST, 7, 1, 4))
    with pytest.raises(InvalidCommand):
        eng.complete_delivery(rec, GasCommand(MsgKind.SHORT_REQUEST, 5, 7))
    eng.complete_delivery(rec)
    eng.check_invariants()


def test_failed_reply_keeps_record_open():
    eng, _ = make_engine(node=1, size=16)
    rec = eng.on_packet(ActiveMessage(MsgKind.MEDIUM_REQUEST, 7, 1, 4, (), b"xy"))
    with pytest.raises(OutOfBounds):
        eng.complete_delivery(rec, GasCommand(MsgKind.MEDIUM_REPLY, 5, 0, (), 10, 10))
    assert eng.bounce_held == 1 and eng.outstanding_tokens == 1
    eng.complete_delivery(rec, GasCommand(MsgKind.MEDIUM_REPLY, 5, 0, (), 0, 4))
    assert eng.bounce_held == 0 and eng.outstanding_tokens == 0


def test_random_traffic_keeps_invariants():
    rng = random.Random(3)
    eng, _ = make_engine(node=1, size=128)
    open_recs = []
    for _ in range(3000):
        action = rng.random()
        if action < 0.5:
            kind = rng.choice(list(MsgKind))
            payload = rng.randbytes(rng.randint(0, 20)) if kind.category.name != "SHORT" else b""
            off = rng.randint(0, 120) if kind.category.name == "LONG" else 0
            try:
                open_recs.append(eng.on_packet(ActiveMessage(kind, rng.randint(0, 3), 1, 4, (),
                                                             payload, off)))
            except (BounceFull, OutOfBounds):
                pass
        elif open_recs:
            rec = open_recs.pop(rng.randrange(len(open_recs)))
            reply = None
            if rec.kind.is_request and rng.random() < 0.5:
                reply = GasCommand(MsgKind.SHORT_REPLY, 0, 0, (1,))
            eng.complete_delivery(rec, reply)
        eng.check_invariants()
        assert eng.bounce_held + eng.bounce_free == NUM_BOUNCE
        assert eng.outstanding_tokens == sum(1 for r in open_recs if r.kind.is_request)


def test_short_command_edge_cases():
    with pytest.raises(Truncated):
        decode_command([1, 2, 3])
    with pytest.raises(UnknownOpcode):
        decode_command([0x07, 0, 0, 0, 0, 0, 0, 0])
    with pytest.raises(InvalidCommand):
        encode_command(GasCommand(MsgKind.SHORT_REQUEST, 0, 1, tuple(range(9))))


def test_long_dma_of_eight_bytes():
    eng, _ = make_engine()
    eng.segment.write(0, bytes(range(1, 9)))
    msg = eng.submit_command(GasCommand(MsgKind.LONG_REQUEST, 4, 3, (), 0, 8, 32))
    assert msg.payload == bytes([1, 2, 3, 4, 5, 6, 7, 8]) and msg.dest_offset == 32
    again = eng.submit_command(GasCommand(MsgKind.SHORT_REQUEST, 4, 3))
    assert (msg.seq, again.seq) == (0, 1)


def test_long_write_visible_with_record():
    eng, _ = make_engine(node=1, size=64)
    eng.on_packet(ActiveMessage(MsgKind.LONG_REPLY, 0, 1, 4, (), bytes([9, 9]), 4))
    assert eng.segment.read(4, 2) == bytes([9, 9])
    with pytest.raises(OutOfBounds):
        eng.on_packet(ActiveMessage(MsgKind.LONG_REPLY, 0, 1, 4, (), b"\x01", 64))
    assert eng.segment.read(0, 64) == bytes(4) + bytes([9, 9]) + bytes(58)


def test_completing_medium_frees_its_buffer():
    eng, _ = make_engine(node=1)
    rec = eng.on_packet(ActiveMessage(MsgKind.MEDIUM_REQUEST, 0, 1, 4, (), b"abc"))
    assert eng.bounce_free == NUM_BOUNCE - 1
    eng.complete_delivery(rec)
    assert eng.bounce_free == NUM_BOUNCE
