"""Command line interface.

    hetgas run --config sys.yaml --app jacobi --param width=16 --trace out.jsonl
    hetgas run --config two.yaml --app jacobi --rank 1        # bridged, domain 1 only
    hetgas bench pingpong --iters 10 --size 64
    hetgas validate-config --config sys.yaml

Exit codes: 0 ok, 1 application failure, 2 config error, 3 cycle limit.
"""

from __future__ import annotations

import argparse
import ast
import json
import sys

from .apps import APPS
from .config import load_config, simple_config
from .errors import ConfigError
from .harness import EXIT_CONFIG, EXIT_OK, run


def _param(text: str) -> tuple[str, object]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key, ast.literal_eval(value)
    except (ValueError, SyntaxError):
        return key, value


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--trace", help="write the trace (JSON lines) to this path")
    p.add_argument("--cycles-max", type=int, help="abort when simulated time passes this cycle")
    p.add_argument("--seed", type=int, help="override the config seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hetgas", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an application")
    p.add_argument("--config", required=True)
    p.add_argument("--app", required=True, choices=sorted(APPS))
    p.add_argument("--param", action="append", type=_param, default=[], metavar="KEY=VALUE")
    p.add_argument("--rank", type=int, help="bridged mode: run only this domain")
    p.add_argument("--output", help="also write the JSON summary to this file")
    _common(p)

    p = sub.add_parser("bench", help="run a benchmark")
    p.add_argument("which", choices=("pingpong", "stream"))
    p.add_argument("--config", help="default: two software nodes on a crossbar")
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--size", type=int, default=0, help="pingpong payload bytes")
    p.add_argument("--total-bytes", type=int, default=65536)
    p.add_argument("--msg-size", type=int, default=1024)
    _common(p)

    p = sub.add_parser("validate-config", help="check a config file")
    p.add_argument("--config", required=True)
    return parser


def _emit(summary: dict, output: str | None = None) -> None:
    text = json.dumps(summary, indent=2, sort_keys=True)
    print(text)
    if output:
        with open(output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "validate-config":
        try:
            cfg = load_config(args.config)
        except ConfigError as exc:
            print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        _emit({"status": EXIT_OK, "size": cfg.size, "domains": len(cfg.domains),
               "links": len(cfg.links)})
        return EXIT_OK

    if args.command == "run":
        local = None if args.rank is None else [args.rank]
        res = run(args.config, args.app, dict(args.param), trace=args.trace,
                  cycles_max=args.cycles_max, seed=args.seed, local_domains=local)
        summary = {"app": args.app, **res.to_dict()}
        if args.rank is not None:
            summary["domain"] = args.rank
        _emit(summary, args.output)
        if res.error:
            print(res.error, file=sys.stderr)
        return res.status

    try:
        cfg = load_config(args.config) if args.config else simple_config(2)
    except ConfigError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.which == "pingpong":
        params = {"iters": args.iters, "size": args.size}
    else:
        params = {"total_bytes": args.total_bytes, "msg_size": args.msg_size}
    res = run(cfg, args.which, params, trace=args.trace, cycles_max=args.cycles_max,
              seed=args.seed)
    _emit({"bench": args.which, **res.to_dict()})
    if res.error:
        print(res.error, file=sys.stderr)
    return res.status


if __name__ == "__main__":
    sys.exit(main())
