"""Side-by-side comparison of the two machines and parameter sweeps."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .baseline import run_spa_baseline
from .engine import Metrics, SimConfig, run
from .isa import Program

COMPARED = (
    "makespan",
    "energy",
    "messages",
    "hops",
    "memory_ops",
    "call_memory_ops",
    "qt_count",
    "max_live_qts",
    "spawn_critical_path",
    "os_sched_events",
    "guard_wait_cycles",
)


def ratio(a: float, b: float) -> float | None:
    """``a / b`` where equal values (including both zero) give 1 and ``b == 0`` gives None."""
    if a == b:
        return 1.0
    if b == 0:
        return None
    return a / b


@dataclass
class ComparisonReport:
    empa: Metrics
    spa: Metrics
    ratios: dict[str, float | None] = field(default_factory=dict)
    deltas: dict[str, int] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "empa": self.empa.to_dict(),
            "spa": self.spa.to_dict(),
            "ratios": self.ratios,
            "deltas": self.deltas,
            "notes": self.notes,
        }

    def table(self) -> str:
        lines = [f"{'metric':<22}{'empa':>14}{'spa':>14}{'spa/empa':>12}"]
        for key in COMPARED:
            r = self.ratios[key]
            shown = "-" if r is None else f"{r:.3g}"
            lines.append(f"{key:<22}{getattr(self.empa, key):>14}{getattr(self.spa, key):>14}{shown:>12}")
        return "\n".join(lines)


def compare(program: Program, config: SimConfig | None = None) -> ComparisonReport:
    """Run both machines; ratios are baseline over quasi-thread machine."""
    empa = run(program, config).metrics
    spa = run_spa_baseline(program, config).metrics
    rep = ComparisonReport(empa, spa)
    for key in COMPARED:
        a, b = getattr(spa, key), getattr(empa, key)
        rep.ratios[key] = ratio(a, b)
        rep.deltas[key] = a - b
    if empa.guard_calls:
        rep.notes.append(
            f"{empa.guard_calls} guarded calls, {empa.guard_wait_cycles} cycles spent queued at guards, "
            f"{empa.os_sched_events} scheduler events"
        )
    if spa.call_memory_ops:
        rep.notes.append(
            f"baseline spent {spa.call_memory_ops} memory operations saving and restoring call state; "
            f"quasi-thread run spent {empa.call_memory_ops}"
        )
    return rep


def fit_scaling(xs: Sequence[float], ys: Sequence[float], f: Callable[[float], float]) -> tuple[float, float]:
    """Least-squares ``y = c * f(x)`` without intercept.

    Returns ``(c, worst relative residual)``.
    """
    fx = [f(x) for x in xs]
    denom = sum(v * v for v in fx)
    if denom == 0:
        raise ValueError("f(x) is zero everywhere")
    c = sum(v * y for v, y in zip(fx, ys)) / denom
    if c == 0:
        return 0.0, math.inf if any(ys) else 0.0
    worst = max(abs(y - c * v) / abs(c * v) for v, y in zip(fx, ys))
    return c, worst


@dataclass(frozen=True)
class SweepPoint:
    value: int
    empa: Metrics
    spa: Metrics


def _sweep_one(args: tuple[Callable[[int], Program], int, SimConfig]) -> SweepPoint:
    build, value, config = args
    program = build(value)
    return SweepPoint(value, run(program, config).metrics, run_spa_baseline(program, config).metrics)


def sweep(
    build: Callable[[int], Program],
    values: Sequence[int],
    config: SimConfig | None = None,
    workers: int = 1,
) -> list[SweepPoint]:
    """Run both machines for each parameter value; results keep input order."""
    config = config or SimConfig()
    jobs = [(build, v, config) for v in values]
    if workers <= 1:
        return [_sweep_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_sweep_one, jobs))


SWEEP_COLUMNS = ("makespan", "energy", "messages", "memory_ops", "call_memory_ops", "spawn_critical_path")


def sweep_csv(points: Sequence[SweepPoint], param: str = "N") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([param] + [f"{m}_{col}" for col in SWEEP_COLUMNS for m in ("empa", "spa")])
    for p in points:
        w.writerow([p.value] + [getattr(getattr(p, m), col) for col in SWEEP_COLUMNS for m in ("empa", "spa")])
    return buf.getvalue()
