"""Off-chip communication controller: framing, routing and link endpoints.

Frame layout::

    "GAS1" | length (u32 LE) | packet bytes | CRC-32 of packet (u32 LE)

The CRC is the IEEE 802.3 one (reflected, init and final xor 0xFFFFFFFF).
Frames always enclose an Active Message packet, so the decoder also checks
that the frame length agrees with the size the packet header declares;
that lets it resynchronise on a corrupted length field without waiting for
bytes that will never come.
"""

from __future__ import annotations

import bisect
import queue
import socket
import struct
import threading
import time
import zlib
from collections import deque
from dataclasses import dataclass

from .errors import BadPacketLength, EmptyPacket, LinkError, NonTotalRouting, UnroutableNode
from .protocol import HEADER_SIZE, ActiveMessage, declared_size

MAGIC = b"GAS1"
FRAME_OVERHEAD = 12
MAX_FRAME_PACKET = 1 << 28

_U32 = struct.Struct("<I")


def crc32(data: bytes) -> int:
    return zlib.crc32(data) & 0xFFFFFFFF


def frame_encode(packet: bytes) -> bytes:
    packet = bytes(packet)
    if not packet:
        raise EmptyPacket("cannot frame an empty packet")
    if len(packet) < HEADER_SIZE or declared_size(packet) != len(packet):
        raise BadPacketLength(f"{len(packet)} bytes do not form a complete packet")
    return MAGIC + _U32.pack(len(packet)) + packet + _U32.pack(crc32(packet))


@dataclass
class FrameStats:
    frames: int = 0
    crc_errors: int = 0
    length_errors: int = 0
    bad_magic: int = 0
    skipped_bytes: int = 0

    @property
    def errors(self) -> int:
        return self.crc_errors + self.length_errors + self.bad_magic


def _magic_prefix_tail(buf: bytes, start: int) -> int:
    """Index from which ``buf`` must be kept because it may begin a magic."""
    for k in (3, 2, 1):
        if len(buf) - k >= start and buf.endswith(MAGIC[:k]):
            return len(buf) - k
    return len(buf)


class FrameDecoder:
    """Incremental frame parser; feed it arbitrary chunks of a byte stream."""

    def __init__(self, stats: FrameStats | None = None):
        self.stats = stats if stats is not None else FrameStats()
        self.remainder = b""
        self._resyncing = False

    def _bad_frame(self, counter: str) -> None:
        setattr(self.stats, counter, getattr(self.stats, counter) + 1)
        self._resyncing = True

    def feed(self, chunk: bytes) -> list[bytes]:
        buf = self.remainder + bytes(chunk)
        pos = 0
        out = []
        st = self.stats
        while True:
            if buf[pos:pos + 4] != MAGIC:
                idx = buf.find(MAGIC, pos)
                stop = idx if idx >= 0 else _magic_prefix_tail(buf, pos)
                if stop > pos:
                    if not self._resyncing:
                        st.bad_magic += 1
                        self._resyncing = True
                    st.skipped_bytes += stop - pos
                    pos = stop
                if idx < 0:
                    break
            if len(buf) - pos < 8 + HEADER_SIZE:
                # A valid frame is never shorter; a bad length can be judged early.
                if len(buf) - pos >= 8:
                    length = _U32.unpack_from(buf, pos + 4)[0]
                    if length < HEADER_SIZE or length > MAX_FRAME_PACKET:
                        self._bad_frame("length_errors")
                        pos += 1
                        continue
                break
            length = _U32.unpack_from(buf, pos + 4)[0]
            if (length < HEADER_SIZE or length > MAX_FRAME_PACKET
                    or declared_size(buf[pos + 8:pos + 8 + HEADER_SIZE]) != length):
                self._bad_frame("length_errors")
                pos += 1
                continue
            end = pos + FRAME_OVERHEAD + length
            if len(buf) < end:
                break
            packet = buf[pos + 8:end - 4]
            if crc32(packet) != _U32.unpack_from(buf, end - 4)[0]:
                self._bad_frame("crc_errors")
                pos += 1
                continue
            out.append(packet)
            st.frames += 1
            self._resyncing = False
            pos = end
        self.remainder = buf[pos:]
        return out


def frame_decode(buffer: bytes, stats: FrameStats | None = None) -> tuple[list[bytes], bytes]:
    dec = FrameDecoder(stats)
    packets = dec.feed(buffer)
    return packets, dec.remainder


# -- routing ---------------------------------------------------------------

@dataclass(frozen=True)
class DeliverLocal:
    pass


@dataclass(frozen=True)
class SendOnLink:
    link_id: int


LOCAL = None


class RoutingTable:
    """Disjoint inclusive node-id ranges mapped to LOCAL (None) or a link id."""

    def __init__(self, entries):
        entries = sorted((int(lo), int(hi), target) for lo, hi, target in entries)
        for lo, hi, _ in entries:
            if lo > hi:
                raise NonTotalRouting(f"empty range {lo}..{hi}")
        for (lo1, hi1, _), (lo2, hi2, _) in zip(entries, entries[1:]):
            if lo2 <= hi1:
                raise NonTotalRouting(f"ranges {lo1}..{hi1} and {lo2}..{hi2} overlap")
        self.entries = entries
        self._lows = [e[0] for e in entries]

    def lookup(self, node: int):
        i = bisect.bisect_right(self._lows, node) - 1
        if i >= 0:
            lo, hi, target = self.entries[i]
            if lo <= node <= hi:
                return target
        raise UnroutableNode(f"no route to node {node}")

    def check_total(self, size: int) -> None:
        covered = 0
        for lo, hi, _ in self.entries:
            if hi >= size:
                raise NonTotalRouting(f"range {lo}..{hi} names nodes beyond {size - 1}")
            if lo != covered:
                raise NonTotalRouting(f"nodes {covered}..{lo - 1} have no route")
            covered = hi + 1
        if covered != size:
            raise NonTotalRouting(f"nodes {covered}..{size - 1} have no route")

    def __repr__(self):
        return f"RoutingTable({self.entries})"


def bridge_forward(table: RoutingTable, msg: ActiveMessage) -> DeliverLocal | SendOnLink:
    target = table.lookup(msg.dst_node)
    return DeliverLocal() if target is LOCAL else SendOnLink(target)


# -- link endpoints ----------------------------------------------------------

class MemoryLinkEnd:
    """One side of an in-process link with fixed latency and bandwidth.

    ``tamper`` may rewrite outgoing frames (fault injection); it receives
    the per-end frame index and the frame bytes.
    """

    def __init__(self, link_id: int, domain: int, latency: int, bytes_per_cycle: int):
        self.link_id = link_id
        self.domain = domain
        self.latency = latency
        self.bytes_per_cycle = bytes_per_cycle
        self.peer: MemoryLinkEnd | None = None
        self.decoder = FrameDecoder()
        self.tamper = None
        self.frames_sent = 0
        self.bytes_sent = 0
        self._inbox: deque[tuple[int, bytes]] = deque()
        self._last_arrival = 0

    @property
    def stats(self) -> FrameStats:
        return self.decoder.stats

    def send(self, packet: bytes, t: int) -> None:
        frame = frame_encode(packet)
        if self.tamper is not None:
            frame = self.tamper(self.frames_sent, frame)
        self.frames_sent += 1
        self.bytes_sent += len(frame)
        arrival = t + self.latency + -(-len(frame) // self.bytes_per_cycle)
        arrival = max(arrival, self._last_arrival)
        self._last_arrival = arrival
        self.peer._inbox.append((arrival, frame))

    def next_time(self) -> int | None:
        return self._inbox[0][0] if self._inbox else None

    @property
    def idle(self) -> bool:
        return not self._inbox

    def receive(self, until: int) -> list[bytes]:
        out = []
        while self._inbox and self._inbox[0][0] <= until:
            out.extend(self.decoder.feed(self._inbox.popleft()[1]))
        return out


def memory_link(link_id: int, domain_a: int, domain_b: int, latency: int = 16,
                bytes_per_cycle: int = 4) -> tuple[MemoryLinkEnd, MemoryLinkEnd]:
    a = MemoryLinkEnd(link_id, domain_a, latency, bytes_per_cycle)
    b = MemoryLinkEnd(link_id, domain_b, latency, bytes_per_cycle)
    a.peer, b.peer = b, a
    return a, b


class SocketLinkEnd:
    """Link endpoint over a connected stream socket.

    A reader thread pushes received chunks into ``inbox`` (shared by every
    endpoint of the process) as ``(endpoint, bytes)``; ``b""`` marks EOF.
    The owning scheduler drains the inbox and calls :meth:`accept_chunk`.
    """

    def __init__(self, link_id: int, domain: int, sock: socket.socket, inbox: queue.Queue):
        self.link_id = link_id
        self.domain = domain
        self.sock = sock
        self.inbox = inbox
        self.decoder = FrameDecoder()
        self.frames_sent = 0
        self.bytes_sent = 0
        self.closed = False
        self._reader = threading.Thread(target=self._read_loop, daemon=True,
                                        name=f"link{link_id}-reader")
        self._reader.start()

    @property
    def stats(self) -> FrameStats:
        return self.decoder.stats

    def _read_loop(self) -> None:
        while True:
            try:
                chunk = self.sock.recv(65536)
            except OSError:
                chunk = b""
            self.inbox.put((self, chunk))
            if not chunk:
                return

    def send(self, packet: bytes, t: int) -> None:
        frame = frame_encode(packet)
        try:
            self.sock.sendall(frame)
        except OSError as exc:
            raise LinkError(f"link {self.link_id}: send failed: {exc}") from exc
        self.frames_sent += 1
        self.bytes_sent += len(frame)

    def accept_chunk(self, chunk: bytes) -> list[bytes]:
        if not chunk:
            self.closed = True
            return []
        return self.decoder.feed(chunk)

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_WR)
        except OSError:
            pass
        self._reader.join(timeout=5)
        self.sock.close()


def parse_address(address: str) -> tuple[str, int]:
    host, _, port = address.rpartition(":")
    return host or "127.0.0.1", int(port)


def open_socket(address: str, listen: bool, timeout: float = 30.0) -> socket.socket:
    """Listen-and-accept or connect-with-retry on ``host:port``."""
    host, port = parse_address(address)
    deadline = time.monotonic() + timeout
    if listen:
        srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind((host, port))
        srv.listen(1)
        srv.settimeout(timeout)
        try:
            conn, _ = srv.accept()
        except socket.timeout as exc:
            raise LinkError(f"no peer connected to {address} within {timeout}s") from exc
        finally:
            srv.close()
        conn.settimeout(None)
    else:
        while True:
            try:
                conn = socket.create_connection((host, port), timeout=timeout)
                break
            except OSError as exc:
                if time.monotonic() > deadline:
                    raise LinkError(f"could not connect to {address}: {exc}") from exc
                time.sleep(0.05)
        conn.settimeout(None)
    conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return conn
