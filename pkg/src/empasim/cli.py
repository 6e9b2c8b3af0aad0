"""Command-line front end.

Machine-readable output (JSON or CSV) goes to stdout; human-readable
summaries and diagnostics go to stderr.

Exit codes: 0 success, 1 assembly/usage/config error, 2 deadlock,
3 cycle cap, 4 any other simulation failure.
"""

from __future__ import annotations

import argparse
import functools
import json
import os
import sys
from pathlib import Path
from typing import Sequence

from . import workloads
from .core import CoreError
from .engine import ConfigError, SimConfig, SimulationError, Simulator
from .isa import AssemblyError, Program, assemble, disassemble
from .messaging import RoutingError
from .processor import ProcessorError
from .report import compare, sweep, sweep_csv
from .topology import GridConfig, TopologyError, build_clusters, topology_rows

CONFIG_ENV = "EMPASIM_CONFIG"

EXIT_OK, EXIT_USAGE, EXIT_DEADLOCK, EXIT_CAP, EXIT_SIM = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit 2, which means deadlock here
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _err(*parts: object) -> None:
    print(*parts, file=sys.stderr)


def _emit(obj: object) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# config ---------------------------------------------------------------------


def _config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("machine configuration")
    g.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV})")
    g.add_argument("--grid", help="grid size WxH")
    g.add_argument("--hop-cost", type=int)
    g.add_argument("--memory-latency", type=int)
    g.add_argument("--cycle-per-instr", type=int)
    g.add_argument("--meta-dispatch-cost", type=int)
    g.add_argument("--denied", help="comma-separated core ids, 'all-heads' or 'random:FRACTION'")
    g.add_argument("--seed", type=int)
    g.add_argument("--cap", type=int, help="cycle cap")
    g.add_argument("--trace", action="store_true", help="record message and per-core traces")


def load_config(args: argparse.Namespace) -> SimConfig:
    """Config file first, then command-line overrides."""
    data: dict = {}
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    if path:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError(f"config {path} must hold a JSON object")
    overrides = {
        "grid": args.grid,
        "hop_cost": args.hop_cost,
        "memory_latency": args.memory_latency,
        "cycle_per_instr": args.cycle_per_instr,
        "meta_dispatch_cost": args.meta_dispatch_cost,
        "denied": args.denied,
        "seed": args.seed,
        "cap": args.cap,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    if args.trace:
        data["trace_messages"] = data["trace_cores"] = True
    return SimConfig.from_dict(data)


# program input ----------------------------------------------------------------


def _program_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("program", nargs="?", help="assembly file ('-' for stdin)")
    p.add_argument("--workload", "-w", help="bundled workload name instead of a file")
    p.add_argument("--param", "-p", action="append", default=[], metavar="NAME=VALUE",
                   help="workload parameter (repeatable)")


def _parse_params(items: Sequence[str]) -> dict[str, int]:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"parameter {item!r} must look like NAME=VALUE")
        try:
            out[key.strip()] = int(value)
        except ValueError:
            raise UsageError(f"parameter {key} needs an integer value") from None
    return out


def _read_source(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None


def _load_program(args: argparse.Namespace) -> Program:
    params = _parse_params(args.param)
    if args.workload:
        if args.program:
            raise UsageError("give either a program file or --workload, not both")
        try:
            return workloads.load(args.workload, **params)
        except KeyError as exc:
            raise UsageError(exc.args[0]) from None
    if not args.program:
        raise UsageError("no program given")
    if params:
        raise UsageError("--param only applies to bundled workloads")
    return assemble(_read_source(args.program))


def _build_workload(name: str, param: str, fixed: dict, value: int) -> Program:
    return workloads.load(name, **{**fixed, param: value})


def _parse_sweep(text: str) -> tuple[str, list[int]]:
    key, sep, values = text.partition("=")
    if not sep:
        raise UsageError("--sweep must look like NAME=V1,V2,...")
    try:
        return key.strip(), [int(v) for v in values.split(",") if v.strip()]
    except ValueError:
        raise UsageError("--sweep values must be integers") from None


# commands ------------------------------------------------------------------


def cmd_asm(args: argparse.Namespace) -> int:
    program = _load_program(args)
    if args.json:
        _emit(
            {
                "entry": program.entry,
                "fragments": [
                    {
                        "name": f.name,
                        "length": len(f),
                        "labels": dict(sorted(f.labels.items())),
                        "instructions": [ins.render() for ins in f],
                    }
                    for f in program.fragments
                ],
                "symbols": {k: list(v) for k, v in sorted(program.symbols.items())},
            }
        )
    else:
        print(f"{'fragment':<16}{'length':>8}  labels")
        for f in program.fragments:
            mark = " (entry)" if f.name == program.entry else ""
            labels = ", ".join(f"{k}@{v}" for k, v in sorted(f.labels.items(), key=lambda kv: kv[1]))
            print(f"{f.name + mark:<16}{len(f):>8}  {labels}")
        print()
        sys.stdout.write(disassemble(program))
    return EXIT_OK


def _summary(metrics) -> str:
    keys = ("makespan", "energy", "messages", "hops", "memory_ops", "qt_count", "max_live_qts",
            "pool_exhaustion", "guard_wait_cycles")
    return "\n".join(f"  {k:<18}{getattr(metrics, k)}" for k in keys)


def cmd_run(args: argparse.Namespace) -> int:
    program = _load_program(args)
    config = load_config(args)
    sim = Simulator(program, config)
    try:
        result = sim.run()
    finally:
        if args.events:
            Path(args.events).write_text(sim.events.to_jsonl())
        if args.messages and sim.trace is not None:
            Path(args.messages).write_text(sim.trace.to_csv())
    if args.messages and sim.trace is None:
        _err("note: --messages needs --trace; no message trace written")
    _emit({"metrics": result.metrics.to_dict(), "final": result.final.to_dict(), "config": config.to_dict()})
    _err(f"run finished on {config.grid}:\n{_summary(result.metrics)}")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    config = load_config(args)
    if args.sweep:
        if not args.workload:
            raise UsageError("--sweep needs --workload")
        key, values = _parse_sweep(args.sweep)
        fixed = _parse_params(args.param)
        if key not in workloads.parameters(args.workload):
            raise UsageError(f"workload {args.workload} has no parameter {key}")
        build = functools.partial(_build_workload, args.workload, key, fixed)
        points = sweep(build, values, config, args.workers)
        sys.stdout.write(sweep_csv(points, key))
        return EXIT_OK
    report = compare(_load_program(args), config)
    _emit(report.to_dict())
    _err(report.table())
    for note in report.notes:
        _err("note:", note)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    if not args.sweep:
        raise UsageError("sweep needs --sweep NAME=V1,V2,...")
    return cmd_compare(args)


def cmd_topology(args: argparse.Namespace) -> int:
    try:
        grid = GridConfig.parse(args.grid)
    except TopologyError as exc:
        raise UsageError(str(exc)) from None
    rows = topology_rows(build_clusters(grid))
    if args.json:
        _emit({"grid": str(grid), "cores": rows})
        return EXIT_OK
    print(f"{'id':>4} {'x':>3} {'y':>3} {'q':>4} {'r':>4} {'cluster':>8} {'slot':>5} {'addr':>6}  class"
          "          ext")
    for r in rows:
        ext = r.get("extended_size", "")
        print(f"{r['id']:>4} {r['x']:>3} {r['y']:>3} {r['q']:>4} {r['r']:>4} {r['cluster']:>8} "
              f"{r['slot']:>5} {r['address']:>6}  {r['class']:<14} {ext}")
    return EXIT_OK


def cmd_workloads(args: argparse.Namespace) -> int:
    _emit({name: workloads.parameters(name) for name in workloads.names()})
    return EXIT_OK


# parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="empasim", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("asm", help="assemble a file and list it")
    _program_flags(p)
    p.add_argument("--json", action="store_true", help="emit the symbol table as JSON")
    p.set_defaults(func=cmd_asm)

    p = sub.add_parser("run", help="simulate a program")
    _program_flags(p)
    _config_flags(p)
    p.add_argument("--events", metavar="PATH", help="write the event log as JSON lines")
    p.add_argument("--messages", metavar="PATH", help="write the message trace as CSV (needs --trace)")
    p.add_argument("--json", action="store_true", help="accepted for symmetry; output is always JSON")
    p.set_defaults(func=cmd_run)

    for name, func, text in (("compare", cmd_compare, "run both machines side by side"),
                             ("sweep", cmd_sweep, "compare over a parameter sweep (CSV)")):
        p = sub.add_parser(name, help=text)
        _program_flags(p)
        _config_flags(p)
        p.add_argument("--sweep", metavar="NAME=V1,V2,...")
        p.add_argument("--workers", type=int, default=1, help="parallel sweep processes")
        p.add_argument("--json", action="store_true", help="accepted for symmetry")
        p.set_defaults(func=func)

    def topo(p: argparse.ArgumentParser) -> None:
        p.add_argument("--grid", default="8x8")
        p.add_argument("--json", action="store_true")
        p.set_defaults(func=cmd_topology)

    topo(sub.add_parser("topology", help="dump the per-core topology table"))
    info = sub.add_parser("info", help="inspection helpers")
    isub = info.add_subparsers(dest="what", required=True, parser_class=_Parser)
    topo(isub.add_parser("topology", help="same as the topology command"))
    p = isub.add_parser("workloads", help="list bundled workloads and parameters")
    p.set_defaults(func=cmd_workloads)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AssemblyError as exc:
        for d in exc.diagnostics:
            _err(f"{getattr(args, 'program', None) or '<input>'}:{d}")
        return EXIT_USAGE
    except (UsageError, ConfigError) as exc:
        _err(f"empasim: {exc}")
        return EXIT_USAGE
    except SimulationError as exc:
        _err(f"empasim: {type(exc).__name__}: {exc}")
        return exc.exit_code
    except (CoreError, ProcessorError, RoutingError, TopologyError) as exc:
        _err(f"empasim: {type(exc).__name__}: {exc}")
        return EXIT_SIM


if __name__ == "__main__":
    sys.exit(main())
