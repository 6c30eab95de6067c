"""Example applications and benchmarks.

Each application installs handlers and per-rank programs on a
:class:`~hetgas.system.System` and reads its result back after the run.
"""

from __future__ import annotations

import hashlib
import random
import struct
from dataclasses import dataclass

import numpy as np

from .config import HARDWARE, SOFTWARE
from .cores import SCALE_REPLY_HANDLER, SCALE_REQUEST_HANDLER, scale_words
from .errors import BadPartition, BarrierMismatch, InvalidArgs
from .protocol import MAX_ARGS, MAX_MEDIUM, U32, MsgKind
from .system import System

APPS: dict[str, type["App"]] = {}


def register_app(cls):
    APPS[cls.name] = cls
    return cls


class App:
    name = "app"

    def install(self, system: System) -> None:
        raise NotImplementedError

    def result(self, system: System) -> dict:
        return {}


def _require(system: System, n: int, name: str) -> None:
    if system.config.size < n:
        raise InvalidArgs(f"{name} needs at least {n} nodes, config has {system.config.size}")


# -- ping-pong / stream ------------------------------------------------------

PING_HANDLER, PONG_HANDLER = 4, 5


@register_app
class PingPong(App):
    """Rank 0 sends a request to rank 1 and waits for the reply, ``iters`` times.

    ``size`` 0 uses Short messages with one argument; otherwise Medium
    messages carrying ``size`` bytes. Rank 1 may be a software node or a
    hardware ``echo`` core.
    """

    name = "pingpong"

    def __init__(self, iters: int = 1, size: int = 0):
        if iters < 1:
            raise InvalidArgs("iters must be >= 1")
        if not 0 <= size <= MAX_MEDIUM:
            raise InvalidArgs(f"size must be within 0..{MAX_MEDIUM}")
        self.iters = iters
        self.size = size
        self.rtts: list[int] = []

    def install(self, system):
        _require(system, 2, self.name)
        kind = "short" if self.size == 0 else "medium"
        payload = None if self.size == 0 else bytes(i & 0xFF for i in range(self.size))
        replies = []

        if system.is_local(1) and 1 in system.nodes:
            def pong(ctx):
                ctx.reply(kind, PONG_HANDLER, ctx.args, ctx.payload if payload else None)
            system.node(1).register_handler(PING_HANDLER, pong)

        if not system.is_local(0):
            return
        system.node(0).register_handler(PONG_HANDLER, lambda ctx: replies.append(ctx.args[0]))

        def client(node):
            for i in range(self.iters):
                t0 = node.now
                node.am_request(kind, 1, PING_HANDLER, (i,), payload)
                yield from node.wait_until(lambda: len(replies) > i)
                self.rtts.append(node.now - t0)

        system.spawn(0, client)

    def result(self, system):
        if not self.rtts:
            return {}
        return {"iters": self.iters, "size": self.size, "rtt_min": min(self.rtts),
                "rtt_mean": sum(self.rtts) / len(self.rtts), "rtt_max": max(self.rtts)}


@register_app
class Stream(App):
    """Rank 0 streams ``total_bytes`` to rank 1 as Medium messages of ``msg_size``."""

    name = "stream"
    DATA_HANDLER, DONE_HANDLER = 6, 7

    def __init__(self, total_bytes: int = 65536, msg_size: int = 1024):
        if not 0 < msg_size <= MAX_MEDIUM:
            raise InvalidArgs(f"stream uses Medium messages: msg_size must be 1..{MAX_MEDIUM}")
        if total_bytes <= 0:
            raise InvalidArgs("total_bytes must be positive")
        self.total_bytes = total_bytes
        self.msg_size = msg_size
        self.cycles = None

    def install(self, system):
        _require(system, 2, self.name)
        for r in (0, 1):
            if system.config.node(r).kind != SOFTWARE:
                raise InvalidArgs("stream needs software nodes at ranks 0 and 1")
        if system.is_local(1):
            def sink(ctx):
                if ctx.args[0]:
                    ctx.reply("short", self.DONE_HANDLER)
            system.node(1).register_handler(self.DATA_HANDLER, sink)
        if not system.is_local(0):
            return
        done = []
        system.node(0).register_handler(self.DONE_HANDLER, lambda ctx: done.append(ctx.src))

        def source(node):
            t0 = node.now
            left = self.total_bytes
            while left:
                n = min(left, self.msg_size)
                left -= n
                node.am_request("medium", 1, self.DATA_HANDLER, (int(left == 0),), bytes(n))
            yield from node.wait_until(lambda: bool(done))
            self.cycles = node.now - t0

        system.spawn(0, source)

    def result(self, system):
        if self.cycles is None:
            return {}
        return {"total_bytes": self.total_bytes, "msg_size": self.msg_size, "cycles": self.cycles,
                "bytes_per_cycle": self.total_bytes / self.cycles if self.cycles else float("inf")}


# -- Jacobi ----------------------------------------------------------------

def initial_grid(width: int, height: int, boundary: float = 1.0, interior: float = 0.0) -> np.ndarray:
    grid = np.full((height, width), boundary, dtype="<f8")
    grid[1:-1, 1:-1] = interior
    return grid


def sweep_rows(rows: np.ndarray, above: np.ndarray | None, below: np.ndarray | None,
               first_row: int, height: int) -> np.ndarray:
    """One Jacobi sweep of a horizontal band of the grid.

    ``rows`` holds global rows ``first_row...``; ``above``/``below`` are the
    neighbouring rows (None at the grid edge). Each interior cell becomes
    ``(((N + S) + E) + W) / 4``.
    """
    ext = [r for r in (above,) if r is not None] + list(rows) + [r for r in (below,) if r is not None]
    ext = np.asarray(ext, dtype="<f8")
    shift = 1 if above is not None else 0
    new = rows.copy()
    for i in range(len(rows)):
        g = first_row + i
        if 1 <= g <= height - 2:
            e = i + shift
            new[i, 1:-1] = (((ext[e - 1, 1:-1] + ext[e + 1, 1:-1]) + ext[e, 2:]) + ext[e, :-2]) / 4
    return new


def jacobi_reference(width: int, height: int, iterations: int, boundary: float = 1.0,
                     interior: float = 0.0) -> np.ndarray:
    grid = initial_grid(width, height, boundary, interior)
    for _ in range(iterations):
        grid = sweep_rows(grid, None, None, 0, height)
    return grid


def grid_checksum(grid: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(grid, dtype="<f8").tobytes()).hexdigest()


def jacobi_residual(grid: np.ndarray) -> float:
    nxt = sweep_rows(grid, None, None, 0, grid.shape[0])
    return float(np.max(np.abs(nxt - grid)))


@register_app
class Jacobi(App):
    """Row-block Jacobi relaxation with put-based halo exchange.

    Every node must be software. Halo rows are double buffered by iteration
    parity so one barrier per iteration suffices. The final grid is
    gathered into rank 0's segment.
    """

    name = "jacobi"

    def __init__(self, width: int = 8, height: int = 8, iterations: int = 10,
                 boundary: float = 1.0, interior: float = 0.0):
        if width < 3 or height < 3:
            raise InvalidArgs("grid must be at least 3x3")
        if iterations < 0:
            raise InvalidArgs("iterations must be >= 0")
        self.width, self.height, self.iterations = width, height, iterations
        self.boundary, self.interior = float(boundary), float(interior)
        self.grid: np.ndarray | None = None

    def segment_bytes(self, rank: int) -> int:
        row = self.width * 8
        return 4 * row + (self.height * row if rank == 0 else 0)

    def install(self, system):
        cfg = system.config
        nodes = cfg.size
        if self.height % nodes:
            raise BadPartition(f"height {self.height} does not divide over {nodes} nodes")
        for n in cfg.nodes:
            if n.kind != SOFTWARE:
                raise InvalidArgs("jacobi needs every node to be software")
            if n.segment_size < self.segment_bytes(n.rank):
                raise InvalidArgs(f"rank {n.rank} segment {n.segment_size} < "
                                  f"{self.segment_bytes(n.rank)} bytes needed")
        start = initial_grid(self.width, self.height, self.boundary, self.interior)
        for r in range(nodes):
            if system.is_local(r):
                system.spawn(r, self._program, start)

    def _program(self, node, start):
        P, r = node.size, node.rank
        rows = self.height // P
        W, H = self.width, self.height
        rowb = W * 8
        local = start[r * rows:(r + 1) * rows].copy()
        seg = node.segment

        def halo(parity, bottom):
            return (2 * parity + bottom) * rowb

        def row_at(off):
            return np.frombuffer(seg.read(off, rowb), dtype="<f8")

        for k in range(self.iterations):
            p = k % 2
            handles = []
            if r > 0:
                handles.append(node.put(r - 1, halo(p, 1), local[0].tobytes()))
            if r < P - 1:
                handles.append(node.put(r + 1, halo(p, 0), local[-1].tobytes()))
            for h in handles:
                yield from node.wait(h)
            yield from node.barrier()
            above = row_at(halo(p, 0)) if r > 0 else None
            below = row_at(halo(p, 1)) if r < P - 1 else None
            local = sweep_rows(local, above, below, r * rows, H)

        h = node.put(0, 4 * rowb + r * rows * rowb, local.tobytes())
        yield from node.wait(h)
        yield from node.barrier()
        if r == 0:
            data = seg.read(4 * rowb, H * rowb)
            self.grid = np.frombuffer(data, dtype="<f8").reshape(H, W).copy()

    def result(self, system):
        if self.grid is None:
            return {}
        return {"width": self.width, "height": self.height, "iterations": self.iterations,
                "checksum": grid_checksum(self.grid), "residual": jacobi_residual(self.grid),
                "sum": float(self.grid.sum())}


# -- kernel migration -----------------------------------------------------

@register_app
class KernelMigration(App):
    """Rank 0 ships a u32 vector to rank 1, which scales it and sends it back.

    Rank 1 is either a software node running a handler or a hardware core
    with the ``scale`` behavior; the config decides which.
    """

    name = "kernel"

    def __init__(self, vector=(1, 2, 3), scale: int = 10):
        vector = [int(v) for v in vector]
        if any(not 0 <= v <= U32 for v in vector) or not 0 <= scale <= U32:
            raise InvalidArgs("vector elements and scale must be u32")
        self.vector = vector
        self.scale = int(scale)
        self.output: list[int] | None = None

    def install(self, system):
        _require(system, 2, self.name)
        cfg = system.config
        nbytes = 4 * len(self.vector)
        if cfg.node(0).kind != SOFTWARE:
            raise InvalidArgs("kernel needs rank 0 to be software")
        if cfg.node(0).segment_size < nbytes or cfg.node(1).segment_size // 2 < nbytes:
            raise InvalidArgs("vector does not fit the segments")
        worker = cfg.node(1)
        if worker.kind == HARDWARE and worker.behavior != "scale":
            raise InvalidArgs("kernel needs rank 1 to run the 'scale' behavior")
        if worker.kind == SOFTWARE and system.is_local(1):
            node1 = system.node(1)

            def kernel(ctx):
                out = scale_words(ctx.payload, ctx.args[0])
                out_offset = node1.segment.size // 2
                node1.segment.write(out_offset, out)
                ctx.reply("long", SCALE_REPLY_HANDLER, (), dest_offset=ctx.args[1],
                          src_offset=out_offset, nbytes=len(out))

            node1.register_handler(SCALE_REQUEST_HANDLER, kernel)
        if not system.is_local(0):
            return
        done = []
        system.node(0).register_handler(SCALE_REPLY_HANDLER, lambda ctx: done.append(ctx.src))
        data = struct.pack(f"<{len(self.vector)}I", *self.vector)

        def client(node):
            node.am_request("long", 1, SCALE_REQUEST_HANDLER, (self.scale, 0), data, 0)
            yield from node.wait_until(lambda: bool(done))
            raw = node.segment.read(0, nbytes)
            self.output = list(struct.unpack(f"<{len(self.vector)}I", raw))

        system.spawn(0, client)

    def result(self, system):
        if self.output is None:
            return {}
        return {"mode": system.config.node(1).kind, "scale": self.scale, "output": self.output}


# -- randomized workloads ----------------------------------------------------

@dataclass
class _Send:
    delay: int
    dst: int
    kind: MsgKind
    args: tuple
    payload: bytes
    dest_offset: int


@register_app
class Traffic(App):
    """Random mixed Short/Medium/Long requests among all (software) nodes.

    The last rank first computes for ``nap`` cycles without polling while
    every other rank opens with a burst of full-size Mediums to it, so its
    bounce buffers fill and the network has to stall. Long payloads land in
    never-reused regions so each can be checked at dispatch.
    """

    name = "traffic"
    REQ_HANDLER, REPLY_HANDLER = 4, 5

    def __init__(self, messages: int = 10000, seed: int | None = None, max_long: int = 256,
                 nap: int = 400, burst: int = 20, poll_every: int = 8):
        self.messages = messages
        self.seed = seed
        self.max_long = max_long
        self.nap = nap
        self.burst = burst
        self.poll_every = poll_every
        self.sent: dict[tuple[int, int, int], bytes] = {}
        self.replies = 0
        self.scripts: dict[int, list[_Send]] = {}

    def _plan(self, nodes: int, seed: int) -> int:
        rng = random.Random(seed)
        quotas = [self.messages // nodes + (1 if i < self.messages % nodes else 0)
                  for i in range(nodes)]
        slice_size = max(quotas) * self.max_long
        bump = [[0] * nodes for _ in range(nodes)]
        last = nodes - 1
        for src in range(nodes):
            script = []
            for i in range(quotas[src]):
                args = tuple(rng.randrange(1 << 32) for _ in range(rng.randint(0, MAX_ARGS)))
                if i < self.burst and src != last and nodes > 1:
                    script.append(_Send(0, last, MsgKind.MEDIUM_REQUEST, args,
                                        rng.randbytes(MAX_MEDIUM), 0))
                    continue
                dst = rng.randrange(nodes)
                cat = rng.choice(("short", "medium", "long"))
                payload, offset = b"", 0
                if cat == "medium":
                    payload = rng.randbytes(rng.choice((0, rng.randint(1, 256), MAX_MEDIUM)))
                elif cat == "long":
                    payload = rng.randbytes(rng.randint(0, self.max_long))
                    offset = src * slice_size + bump[src][dst]
                    bump[src][dst] += len(payload)
                script.append(_Send(rng.choice((0, 0, 1, 2, 5)), dst,
                                    MsgKind.of(cat, reply=False), args, payload, offset))
            self.scripts[src] = script
        return nodes * slice_size

    def install(self, system):
        cfg = system.config
        seed = cfg.seed if self.seed is None else self.seed
        need = self._plan(cfg.size, seed)
        for n in cfg.nodes:
            if n.kind != SOFTWARE:
                raise InvalidArgs("traffic needs every node to be software")
            if n.segment_size < need:
                raise InvalidArgs(f"traffic needs segments of at least {need} bytes")

        def on_request(ctx):
            if ctx.kind is MsgKind.SHORT_REQUEST and ctx.args and ctx.args[0] & 1:
                ctx.reply("short", self.REPLY_HANDLER, ctx.args[:1])

        def on_reply(ctx):
            self.replies += 1

        for r in range(cfg.size):
            if system.is_local(r):
                node = system.node(r)
                node.register_handler(self.REQ_HANDLER, on_request)
                node.register_handler(self.REPLY_HANDLER, on_reply)
                system.spawn(r, self._program)

    def _program(self, node):
        if node.rank == node.size - 1 and self.nap:
            yield from node.sleep(self.nap)
        for i, s in enumerate(self.scripts[node.rank]):
            if s.delay:
                yield from node.sleep(s.delay)
            msg = node.am_request(s.kind, s.dst, self.REQ_HANDLER, s.args,
                                  s.payload if s.payload else None, s.dest_offset)
            self.sent[(msg.src_node, msg.dst_node, msg.seq)] = s.payload
            if i % self.poll_every == self.poll_every - 1:
                node.poll()

    def result(self, system):
        return {"requests": len(self.sent), "replies": self.replies}


@register_app
class BarrierStress(App):
    """Many barrier epochs with random per-node delays and named/anonymous mixes.

    For every epoch ``plan[epoch][rank]`` is ``(delay, anonymous, value)``.
    Outcomes (mismatch seen or not) and timings are recorded per node.
    """

    name = "barrier_stress"

    def __init__(self, epochs: int = 1000, max_delay: int = 50, seed: int | None = None):
        self.epochs = epochs
        self.max_delay = max_delay
        self.seed = seed
        self.plan: list[list[tuple[int, bool, int]]] = []
        self.notify_at: dict[tuple[int, int], int] = {}
        self.done_at: dict[tuple[int, int], int] = {}
        self.mismatch: dict[tuple[int, int], bool] = {}

    def install(self, system):
        cfg = system.config
        rng = random.Random(cfg.seed if self.seed is None else self.seed)
        for _ in range(self.epochs):
            mode = rng.choice(("anonymous", "equal", "mixed", "conflict"))
            base = rng.randrange(1 << 32)
            row = []
            for r in range(cfg.size):
                delay = rng.randint(0, self.max_delay)
                if mode == "anonymous":
                    row.append((delay, True, 0))
                elif mode == "equal":
                    row.append((delay, False, base))
                elif mode == "mixed":
                    row.append((delay, rng.random() < 0.5, base))
                else:
                    row.append((delay, rng.random() < 0.3, rng.choice((base, base ^ 1))))
            self.plan.append(row)
        for r in range(cfg.size):
            if cfg.node(r).kind != SOFTWARE:
                raise InvalidArgs("barrier_stress needs every node to be software")
            if system.is_local(r):
                system.spawn(r, self._program)

    def _program(self, node):
        r = node.rank
        for e, row in enumerate(self.plan):
            delay, anonymous, value = row[r]
            if delay:
                yield from node.sleep(delay)
            self.notify_at[(e, r)] = node.now
            node.barrier_notify(value, anonymous)
            try:
                yield from node.barrier_wait()
                self.mismatch[(e, r)] = False
            except BarrierMismatch:
                self.mismatch[(e, r)] = True
            self.done_at[(e, r)] = node.now

    def result(self, system):
        return {"epochs": self.epochs,
                "mismatch_epochs": len({e for (e, _), m in self.mismatch.items() if m})}
