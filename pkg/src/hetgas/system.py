"""Deterministic scheduler tying engines, networks, links and nodes together.

All domains of a config run in one process unless ``local_domains`` is
restricted, in which case links to non-local domains are sockets (bridged
mode: one process per domain).

At each cycle the scheduler repeats, until nothing changes: deliver link
arrivals, advance every network to the current cycle, then step every node
in rank order (resume its program, or poll it if the program is done).
Then it jumps to the earliest pending event or timer.
"""

from __future__ import annotations

import heapq
import queue
from collections import Counter
from typing import Callable, Iterator

from .bridge import (
    DeliverLocal,
    MemoryLinkEnd,
    SocketLinkEnd,
    bridge_forward,
    memory_link,
    open_socket,
)
from .config import HARDWARE, SystemConfig
from .cores import CoreDriver, CorePort, make_behavior, CoreBehavior
from .engine import GasCoreEngine
from .errors import AppFailure, ConfigInvalid, CycleLimitExceeded, GasError
from .noc import Network
from .protocol import ActiveMessage, decode_packet, encode_packet
from .runtime import NodeHandle, node_init
from .segment import Segment
from .trace import Trace

DEFAULT_CYCLES_MAX = 100_000_000
SOCKET_IDLE_TIMEOUT = 60.0


class System:
    def __init__(self, config: SystemConfig, *, trace: Trace | None = None,
                 cycles_max: int | None = None, local_domains=None,
                 behaviors: dict[int, CoreBehavior] | None = None,
                 connect_timeout: float = 30.0):
        self.config = config
        self.trace = trace if trace is not None else Trace()
        self.cycles_max = cycles_max or config.cycles_max or DEFAULT_CYCLES_MAX
        self.now = 0
        all_domains = [d.id for d in config.domains]
        self.local_domains = list(all_domains if local_domains is None else local_domains)
        for d in self.local_domains:
            if d not in all_domains:
                raise ConfigInvalid(f"unknown domain {d}")
        self.dispatch_hooks: list[Callable] = []
        self.segments: dict[int, Segment] = {}
        self.engines: dict[int, GasCoreEngine] = {}
        self.nodes: dict[int, NodeHandle] = {}
        self.cores: dict[int, CoreDriver] = {}
        self.nets: dict[int, Network] = {}
        self.tables = {d: config.routing_table(d) for d in self.local_domains}
        self.messages = Counter()
        self.bytes_moved = 0
        self._procs: dict[int, Iterator] = {}
        self._timers: list[int] = []
        self._order: list[int] = []
        behaviors = behaviors or {}

        for d in self.local_domains:
            ranks = config.ranks_in(d)
            for r in ranks:
                ncfg = config.node(r)
                seg = Segment(ncfg.segment_size, ncfg.placement)
                eng = GasCoreEngine(r, seg, self._injector(d), self.trace)
                self.segments[r], self.engines[r] = seg, eng
                if ncfg.kind == HARDWARE:
                    beh = behaviors.get(r) or make_behavior(ncfg.behavior)
                    self.cores[r] = CoreDriver(beh, CorePort(self, r, eng))
                else:
                    self.nodes[r] = node_init(config, r, system=self, engine=eng)
                self._order.append(r)
            self.nets[d] = Network(config.domain(d).to_topology(), ranks, self.engines, self.trace)
        self._order.sort()

        # link ends keyed by (domain, link id)
        self.link_ends: dict[tuple[int, int], MemoryLinkEnd | SocketLinkEnd] = {}
        self._hub: queue.Queue = queue.Queue()
        for ln in config.links:
            a, b = ln.endpoints
            la, lb = a.domain in self.local_domains, b.domain in self.local_domains
            if la and lb:
                ea, eb = memory_link(ln.id, a.domain, b.domain, ln.latency, ln.bytes_per_cycle)
                self.link_ends[(a.domain, ln.id)] = ea
                self.link_ends[(b.domain, ln.id)] = eb
            elif la or lb:
                if not ln.address:
                    raise ConfigInvalid(f"link {ln.id} needs an address for bridged mode")
                dom = a.domain if la else b.domain
                sock = open_socket(ln.address, listen=la, timeout=connect_timeout)
                self.link_ends[(dom, ln.id)] = SocketLinkEnd(ln.id, dom, sock, self._hub)

    # -- wiring --------------------------------------------------------------

    def _injector(self, domain: int):
        def inject(msg: ActiveMessage, t: int) -> None:
            self.messages[msg.kind.label] += 1
            self.bytes_moved += msg.encoded_size
            self._route(msg, t, domain, from_bridge=False)
        return inject

    def _route(self, msg: ActiveMessage, t: int, domain: int, from_bridge: bool) -> None:
        action = bridge_forward(self.tables[domain], msg)
        if isinstance(action, DeliverLocal):
            self.nets[domain].inject(msg, t, from_bridge=from_bridge)
        else:
            self.link_ends[(domain, action.link_id)].send(encode_packet(msg), t)

    def _inbound(self, end, packets: list[bytes]) -> None:
        for raw in packets:
            try:
                msg = decode_packet(raw)
            except GasError as exc:
                self.trace.emit(self.now, "error", None, detail=f"link {end.link_id}: {exc}")
                continue
            self._route(msg, self.now, end.domain, from_bridge=True)

    # -- public API ------------------------------------------------------------

    def is_local(self, rank: int) -> bool:
        return rank in self.engines

    def node(self, rank: int) -> NodeHandle:
        return self.nodes[rank]

    def spawn(self, rank: int, program: Callable, *args, **kwargs) -> None:
        """Run ``program(node, *args, **kwargs)`` as the main program of ``rank``."""
        if rank not in self.nodes:
            raise ConfigInvalid(f"rank {rank} is not a local software node")
        if rank in self._procs:
            raise GasError(f"rank {rank} already has a program")
        gen = program(self.nodes[rank], *args, **kwargs)
        if gen is not None:
            self._procs[rank] = gen

    def add_timer(self, t: int) -> None:
        if t > self.now:
            heapq.heappush(self._timers, t)

    # -- scheduling ------------------------------------------------------------

    def _step_node(self, rank: int) -> bool:
        core = self.cores.get(rank)
        if core is not None:
            return core.step()
        node = self.nodes[rank]
        before = node.activity
        gen = self._procs.get(rank)
        if gen is None:
            node.poll()
        else:
            try:
                next(gen)
            except StopIteration:
                del self._procs[rank]
                node.activity += 1
            except GasError as exc:
                raise AppFailure(f"rank {rank}: {type(exc).__name__}: {exc}") from exc
        return node.activity != before

    def _drain_sockets(self, block: bool) -> bool:
        got = False
        while True:
            try:
                end, chunk = self._hub.get(block=block, timeout=SOCKET_IDLE_TIMEOUT if block else None)
            except queue.Empty:
                return got
            block = False
            got = True
            self._inbound(end, end.accept_chunk(chunk))

    def _settle(self) -> None:
        while True:
            progress = False
            for end in self.link_ends.values():
                if isinstance(end, MemoryLinkEnd):
                    pkts = end.receive(self.now)
                    if pkts:
                        progress = True
                        self._inbound(end, pkts)
            if self._drain_sockets(block=False):
                progress = True
            for net in self.nets.values():
                nt = net.next_time()
                if nt is not None and nt <= self.now:
                    net.advance(self.now)
                    progress = True
            for rank in self._order:
                try:
                    if self._step_node(rank):
                        progress = True
                except AppFailure:
                    raise
                except GasError as exc:
                    raise AppFailure(f"rank {rank}: {type(exc).__name__}: {exc}") from exc
            if not progress:
                return

    def _quiescent(self) -> bool:
        if self._procs:
            return False
        if any(net.pending for net in self.nets.values()):
            return False
        if any(e.deliveries for e in self.engines.values()):
            return False
        return all(end.idle for end in self.link_ends.values() if isinstance(end, MemoryLinkEnd))

    def _next_time(self) -> int | None:
        while self._timers and self._timers[0] <= self.now:
            heapq.heappop(self._timers)
        times = [t for t in (net.next_time() for net in self.nets.values()) if t is not None]
        times += [t for t in (e.next_time() for e in self.link_ends.values()
                              if isinstance(e, MemoryLinkEnd)) if t is not None]
        if self._timers:
            times.append(self._timers[0])
        return min(times) if times else None

    def run(self) -> dict:
        """Run until every program finishes and the system is quiescent."""
        try:
            while True:
                self._settle()
                if self._quiescent():
                    break
                nt = self._next_time()
                if nt is None:
                    sockets = [e for e in self.link_ends.values() if isinstance(e, SocketLinkEnd)]
                    if any(not e.closed for e in sockets):
                        if not self._drain_sockets(block=True):
                            raise AppFailure(f"no link traffic for {SOCKET_IDLE_TIMEOUT}s; "
                                             f"blocked ranks {sorted(self._procs)}")
                        continue
                    raise AppFailure(f"deadlock at cycle {self.now}: blocked ranks "
                                     f"{sorted(self._procs)}")
                if nt > self.cycles_max:
                    raise CycleLimitExceeded(f"next event at cycle {nt} exceeds limit {self.cycles_max}")
                self.now = nt
        finally:
            for end in self.link_ends.values():
                if isinstance(end, SocketLinkEnd):
                    end.close()
        return self.stats()

    def stats(self) -> dict:
        frame = [e.stats for e in self.link_ends.values()]
        return {
            "cycles": self.now,
            "messages": dict(sorted(self.messages.items())),
            "messages_total": sum(self.messages.values()),
            "bytes_moved": self.bytes_moved,
            "deliveries": sum(n.delivered for n in self.nets.values()),
            "stalls": sum(n.stalls for n in self.nets.values()),
            "fifo_holds": sum(n.fifo_holds for n in self.nets.values()),
            "dropped": sum(n.dropped for n in self.nets.values()),
            "errors": self.trace.counts.get("error", 0),
            "frames_sent": sum(e.frames_sent for e in self.link_ends.values()),
            "frame_errors": sum(s.errors for s in frame),
            "crc_errors": sum(s.crc_errors for s in frame),
        }

    def emit_stats(self, stats: dict) -> None:
        for key, value in stats.items():
            if isinstance(value, dict):
                value = ",".join(f"{k}:{v}" for k, v in value.items())
            self.trace.emit(self.now, "stat", None, detail=f"{key}={value}")
