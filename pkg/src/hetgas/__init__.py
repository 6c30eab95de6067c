"""Simulator and runtime for heterogeneous Active-Message (GASNet-style) systems.

Software nodes and scripted hardware cores exchange Active Messages through
per-node remote-DMA engines over simulated on-chip networks, optionally
bridged across OS processes by framed byte-stream links.
"""

from .config import SystemConfig, load_config, simple_config
from .engine import DeliveryRecord, GasCommand, GasCoreEngine, decode_command, encode_command
from .harness import RunResult, app_jacobi, app_kernel_migration, bench_pingpong, bench_stream, run
from .protocol import ActiveMessage, MsgKind, decode_packet, encode_packet, validate
from .runtime import HandlerContext, NodeHandle, SyncHandle, node_init
from .segment import Placement, Segment, attach_segment
from .system import System

__version__ = "0.1.0"

__all__ = [
    "ActiveMessage", "DeliveryRecord", "GasCommand", "GasCoreEngine", "HandlerContext",
    "MsgKind", "NodeHandle", "Placement", "RunResult", "Segment", "SyncHandle", "System",
    "SystemConfig", "app_jacobi", "app_kernel_migration", "attach_segment", "bench_pingpong",
    "bench_stream", "decode_command", "decode_packet", "encode_command", "encode_packet",
    "load_config", "node_init", "run", "simple_config", "validate",
]
