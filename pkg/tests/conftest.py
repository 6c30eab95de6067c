import collections
import hashlib
import random
import socket
import struct

import pytest
from hypothesis import strategies as st

from hetgas.noc import TopologyKind
from hetgas.protocol import MAX_ARGS, MAX_MEDIUM, ActiveMessage, MsgKind


def crc32_bitwise(data: bytes) -> int:
    """Reference CRC-32 (IEEE 802.3, reflected), one bit at a time."""
    crc = 0xFFFFFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = (crc >> 1) ^ 0xEDB88320 if crc & 1 else crc >> 1
    return crc ^ 0xFFFFFFFF


def random_message(rng: random.Random, max_long: int = 512) -> ActiveMessage:
    kind = rng.choice(list(MsgKind))
    cat = int(kind) & 0x0F
    args = [rng.randrange(1 << 32) for _ in range(rng.randint(0, MAX_ARGS))]
    payload, offset = b"", 0
    if cat == 2:
        payload = rng.randbytes(rng.choice((0, rng.randint(0, 64), rng.randint(0, MAX_MEDIUM))))
    elif cat == 3:
        payload = rng.randbytes(rng.randint(0, max_long))
        offset = rng.randrange(1 << 64)
    return ActiveMessage(kind, rng.randrange(1 << 16), rng.randrange(1 << 16),
                         rng.randrange(256), args, payload, offset, rng.randrange(1 << 32))


@st.composite
def messages(draw):
    kind = draw(st.sampled_from(list(MsgKind)))
    cat = int(kind) & 0x0F
    payload, offset = b"", 0
    if cat == 2:
        payload = draw(st.binary(max_size=MAX_MEDIUM))
    elif cat == 3:
        payload = draw(st.binary(max_size=600))
        offset = draw(st.integers(0, (1 << 64) - 1))
    return ActiveMessage(
        kind,
        draw(st.integers(0, 0xFFFF)),
        draw(st.integers(0, 0xFFFF)),
        draw(st.integers(0, 255)),
        draw(st.lists(st.integers(0, 0xFFFFFFFF), max_size=MAX_ARGS)),
        payload,
        offset,
        draw(st.integers(0, 0xFFFFFFFF)),
    )


def jacobi_oracle(width, height, iterations, boundary=1.0, interior=0.0):
    """Sequential Jacobi on nested lists with the same per-cell summation order."""
    g = [[boundary if i in (0, height - 1) or j in (0, width - 1) else interior
          for j in range(width)] for i in range(height)]
    for _ in range(iterations):
        new = [row[:] for row in g]
        for i in range(1, height - 1):
            for j in range(1, width - 1):
                new[i][j] = (((g[i - 1][j] + g[i + 1][j]) + g[i][j + 1]) + g[i][j - 1]) / 4
        g = new
    return g


def oracle_checksum(rows):
    return hashlib.sha256(b"".join(struct.pack("<d", v) for row in rows for v in row)).hexdigest()


def bfs_hops(kind, n, src, dst):
    """Hop count by breadth-first search over an explicit adjacency list."""
    if TopologyKind.parse(kind) is TopologyKind.CROSSBAR:
        adj = {i: [j for j in range(n) if j != i] for i in range(n)}
    else:
        adj = {i: sorted({(i + 1) % n, (i - 1) % n} - {i}) for i in range(n)}
    dist = {src: 0}
    todo = collections.deque([src])
    while todo:
        u = todo.popleft()
        for v in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                todo.append(v)
    return dist[dst]


@pytest.fixture
def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


# criterion number -> (passed, description), filled by test_acceptance
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, text = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {n:2d}: {text}")
