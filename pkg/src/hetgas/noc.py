"""Discrete-event model of the on-chip packet network of one chip domain.

Latency of a packet of ``size`` bytes over ``hops`` router hops::

    hops * router_latency + ceil(size / link_bytes_per_cycle)

Loopback (src == dst) bypasses the network and is delivered in the same
cycle. Deliveries for one (src, dst) pair never overtake each other: a
packet that would arrive before an earlier packet of the same pair is held
until that packet's arrival time (traced as a ``fifo-hold`` stall).
"""

from __future__ import annotations

import enum
import heapq
import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .engine import GasCoreEngine
from .errors import BounceFull, OutOfBounds, UnknownNode
from .protocol import ActiveMessage
from .trace import NULL_TRACE, Trace


class TopologyKind(enum.Enum):
    CROSSBAR = "crossbar"
    RING = "ring"

    @classmethod
    def parse(cls, value) -> "TopologyKind":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())


@dataclass(frozen=True)
class Topology:
    kind: TopologyKind = TopologyKind.CROSSBAR
    nodes: int = 1
    router_latency: int = 4
    link_bytes_per_cycle: int = 4

    def __post_init__(self):
        object.__setattr__(self, "kind", TopologyKind.parse(self.kind))
        if self.nodes < 1:
            raise ValueError(f"topology needs at least one node, got {self.nodes}")
        if self.router_latency <= 0 or self.link_bytes_per_cycle <= 0:
            raise ValueError("router_latency and link_bytes_per_cycle must be positive")


def route(topo: Topology, src: int, dst: int) -> int:
    """Hop count between node positions ``src`` and ``dst`` of ``topo``.

    Ring ties (exactly half way round) go clockwise; only the count is
    returned, which is the same either way.
    """
    n = topo.nodes
    if not (0 <= src < n and 0 <= dst < n):
        raise UnknownNode(f"{src}->{dst} not in a {n}-node {topo.kind.value}")
    if src == dst:
        return 0
    if topo.kind is TopologyKind.CROSSBAR:
        return 1
    return min((dst - src) % n, (src - dst) % n)


def serialization_cycles(topo: Topology, size: int) -> int:
    return -(-size // topo.link_bytes_per_cycle)


def closed_form_latency(topo: Topology, hops: int, size: int) -> int:
    if hops == 0:
        return 0
    return hops * topo.router_latency + serialization_cycles(topo, size)


@dataclass(order=True)
class TimedEvent:
    time: int
    src: int
    seq: int
    order: int
    packet: ActiveMessage = field(compare=False)
    kind: str = field(default="deliver", compare=False)
    # set once the packet has stalled: its place in the pair's hold queue
    ticket: int | None = field(default=None, compare=False)


class Network:
    """Event queue for one chip domain.

    ``ranks`` lists the global node ids of the domain in position order.
    Packets coming in from an off-chip bridge enter through a port attached
    next to position 0 (one extra hop on a ring, a regular port on a
    crossbar).
    """

    def __init__(self, topo: Topology, ranks: Sequence[int],
                 engines: Mapping[int, GasCoreEngine], trace: Trace = NULL_TRACE):
        if len(ranks) != topo.nodes:
            raise ValueError(f"{len(ranks)} ranks for a {topo.nodes}-node topology")
        self.topo = topo
        self.ranks = list(ranks)
        self._pos = {r: i for i, r in enumerate(self.ranks)}
        self.engines = engines
        self.trace = trace
        self.now = 0
        self._queue: list[TimedEvent] = []
        self._counter = itertools.count()
        self._last_arrival: dict[tuple[int, int], int] = {}
        self._held: dict[tuple[int, int], deque[int]] = {}
        self.injected = 0
        self.delivered = 0
        self.stalls = 0
        self.fifo_holds = 0
        self.dropped = 0

    def __contains__(self, rank: int) -> bool:
        return rank in self._pos

    @property
    def pending(self) -> int:
        return len(self._queue)

    def next_time(self) -> int | None:
        return self._queue[0].time if self._queue else None

    def hops(self, src: int, dst: int) -> int:
        if dst not in self._pos:
            raise UnknownNode(f"node {dst} is not in this domain")
        if src in self._pos:
            return route(self.topo, self._pos[src], self._pos[dst])
        if self.topo.kind is TopologyKind.CROSSBAR:
            return 1
        return 1 + route(self.topo, 0, self._pos[dst])

    def inject(self, packet: ActiveMessage, t: int, from_bridge: bool = False) -> int:
        """Schedule delivery of ``packet``; returns the delivery cycle."""
        if not from_bridge and packet.src_node not in self._pos:
            raise UnknownNode(f"source node {packet.src_node} is not in this domain")
        hops = self.hops(packet.src_node, packet.dst_node)
        arrival = t + closed_form_latency(self.topo, hops, packet.encoded_size)
        pair = (packet.src_node, packet.dst_node)
        last = self._last_arrival.get(pair, arrival)
        if last > arrival:
            self.fifo_holds += 1
            self.trace.emit(t, "stall", packet.dst_node, packet.src_node, packet.dst_node,
                            packet.seq, f"fifo-hold +{last - arrival}")
            arrival = last
        self._last_arrival[pair] = arrival
        self.injected += 1
        heapq.heappush(self._queue, TimedEvent(arrival, packet.src_node, packet.seq,
                                               next(self._counter), packet))
        return arrival

    def _stall(self, ev: TimedEvent, pair, reason: str) -> None:
        ticket = ev.ticket
        if ticket is None:
            ticket = ev.order
            self._held.setdefault(pair, deque()).append(ticket)
        self.stalls += 1
        self.trace.emit(ev.time, "stall", ev.packet.dst_node, ev.packet.src_node,
                        ev.packet.dst_node, ev.packet.seq, reason)
        heapq.heappush(self._queue, TimedEvent(ev.time + 1, ev.src, ev.seq, next(self._counter),
                                               ev.packet, "stall", ticket))

    def _release(self, ev: TimedEvent, pair) -> None:
        if ev.ticket is not None:
            held = self._held[pair]
            held.popleft()
            if not held:
                del self._held[pair]

    def advance(self, until: int) -> list[tuple[ActiveMessage, int]]:
        if until < self.now:
            raise ValueError(f"cannot advance backwards from {self.now} to {until}")
        out = []
        while self._queue and self._queue[0].time <= until:
            ev = heapq.heappop(self._queue)
            self.now = ev.time
            pkt = ev.packet
            pair = (pkt.src_node, pkt.dst_node)
            held = self._held.get(pair)
            if held and held[0] != ev.ticket:
                # an earlier packet of this pair is still waiting
                self._stall(ev, pair, "behind-stalled")
                continue
            try:
                self.engines[pkt.dst_node].on_packet(pkt, ev.time)
            except BounceFull:
                self._stall(ev, pair, "bounce-full")
                continue
            except OutOfBounds:
                # the engine traced the drop
                self.dropped += 1
                self._release(ev, pair)
                continue
            self._release(ev, pair)
            self.delivered += 1
            out.append((pkt, ev.time))
        self.now = until
        return out
