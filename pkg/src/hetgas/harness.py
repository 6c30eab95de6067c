"""Run an application on a configured system and collect its stats."""

from __future__ import annotations

import inspect
from dataclasses import dataclass, field

from .apps import APPS, App, Jacobi, KernelMigration, PingPong, Stream
from .config import SystemConfig, load_config, simple_config
from .errors import (AppFailure, BadPartition, ConfigError, CycleLimitExceeded, GasError,
                     InvalidArgs)
from .system import System
from .trace import Trace

EXIT_OK, EXIT_APP_FAILURE, EXIT_CONFIG, EXIT_CYCLE_LIMIT = 0, 1, 2, 3


@dataclass
class RunResult:
    status: int
    stats: dict = field(default_factory=dict)
    result: dict = field(default_factory=dict)
    error: str | None = None
    app: App | None = None
    system: System | None = None

    def to_dict(self) -> dict:
        out = {"status": self.status, "result": self.result, "stats": self.stats}
        if self.error:
            out["error"] = self.error
        return out


def make_app(name: str, params: dict | None = None) -> App:
    try:
        cls = APPS[name]
    except KeyError:
        raise InvalidArgs(f"unknown app {name!r}; known: {sorted(APPS)}") from None
    params = dict(params or {})
    allowed = set(inspect.signature(cls.__init__).parameters) - {"self"}
    unknown = set(params) - allowed
    if unknown:
        raise InvalidArgs(f"app {name!r} takes no parameter(s) {sorted(unknown)}; "
                          f"accepts {sorted(allowed)}")
    return cls(**params)


def run(config: SystemConfig | str, app: str | App, params: dict | None = None, *,
        trace: str | Trace | None = None, cycles_max: int | None = None,
        seed: int | None = None, local_domains=None, raise_errors: bool = False) -> RunResult:
    """Build the system, run ``app`` to completion, return status, stats and result.

    Errors become exit statuses (1 app failure, 2 config, 3 cycle limit)
    unless ``raise_errors`` is set.
    """
    system = None
    app_obj = None
    own_trace = False
    try:
        if not isinstance(config, SystemConfig):
            config = load_config(config)
        if seed is not None:
            config = config.with_seed(seed)
        if trace is None and config.trace:
            trace = config.trace
        if isinstance(trace, str):
            trace = Trace(trace)
            own_trace = True
        app_obj = app if isinstance(app, App) else make_app(app, params)
        system = System(config, trace=trace, cycles_max=cycles_max, local_domains=local_domains)
        app_obj.install(system)
        stats = system.run()
        system.emit_stats(stats)
        return RunResult(EXIT_OK, stats, app_obj.result(system), app=app_obj, system=system)
    except ConfigError as exc:
        if raise_errors:
            raise
        return RunResult(EXIT_CONFIG, error=f"{type(exc).__name__}: {exc}", app=app_obj)
    except CycleLimitExceeded as exc:
        if raise_errors:
            raise
        return RunResult(EXIT_CYCLE_LIMIT, system.stats(), error=str(exc), app=app_obj,
                         system=system)
    except GasError as exc:
        if raise_errors:
            raise
        stats = system.stats() if system is not None else {}
        return RunResult(EXIT_APP_FAILURE, stats, error=f"{type(exc).__name__}: {exc}",
                         app=app_obj, system=system)
    finally:
        if own_trace:
            trace.close()


def _checked(res: RunResult) -> RunResult:
    if res.status != EXIT_OK:
        raise AppFailure(res.error or f"run failed with status {res.status}")
    return res


def bench_pingpong(iters: int = 1, size: int = 0, config: SystemConfig | None = None,
                   **kw) -> dict:
    """Round-trip latency in cycles (min/mean/max) between ranks 0 and 1."""
    app = PingPong(iters, size)
    res = _checked(run(config or simple_config(2), app, **kw))
    return {**res.result, "rtts": list(app.rtts), "stats": res.stats}


def bench_stream(total_bytes: int = 65536, msg_size: int = 1024,
                 config: SystemConfig | None = None, **kw) -> dict:
    """Sustained bytes per cycle from rank 0 to rank 1."""
    app = Stream(total_bytes, msg_size)
    res = _checked(run(config or simple_config(2), app, **kw))
    return {**res.result, "stats": res.stats}


def jacobi_config(width: int, height: int, nodes: int, domains: int = 1, **kw) -> SystemConfig:
    seg = 4 * width * 8 + height * width * 8
    return simple_config(nodes, segment_size=seg, domains=domains, **kw)


def app_jacobi(width: int, height: int, iterations: int, nodes: int, *, domains: int = 1,
               boundary: float = 1.0, interior: float = 0.0, **kw):
    """Distributed Jacobi; returns (grid, checksum, residual)."""
    app = Jacobi(width, height, iterations, boundary, interior)
    if height % nodes:
        raise BadPartition(f"height {height} does not divide over {nodes} nodes")
    res = _checked(run(jacobi_config(width, height, nodes, domains), app, **kw))
    return app.grid, res.result["checksum"], res.result["residual"]


def kernel_config(length: int, mode: str) -> SystemConfig:
    seg = max(64, 8 * length)
    hardware = {1: "scale"} if mode == "hardware" else None
    return simple_config(2, segment_size=seg, hardware=hardware)


def app_kernel_migration(mode: str, vector, scale: int, **kw) -> list[int]:
    """Scale ``vector`` on a software-handler or hardware-core worker."""
    mode = mode.lower()
    if mode not in ("software", "hardware"):
        raise InvalidArgs(f"mode must be software or hardware, got {mode!r}")
    app = KernelMigration(vector, scale)
    _checked(run(kernel_config(len(app.vector), mode), app, **kw))
    return app.output
