"""Deterministic discrete-event loop for the many-core machine.

Events live in a heap keyed on ``(time, phase, ordinal)``.  Phase 0 holds
instruction steps, message arrivals and meta submissions; phase 1 holds
processor arbitration, so the processor sees every meta-instruction
submitted at a given cycle before it picks one.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Callable, Iterable, Iterator

from .core import Core, CoreError, CoreState, Esme, Next, QtContext, Send, Submit
from .isa import AssemblyError, Instruction, Program, validate
from .messaging import GLOBAL_MEMORY, Message, MessageKind, MessageTrace, Router, Timing, deliver
from .processor import (
    ADMITTED,
    CorePool,
    FamilyTree,
    Guard,
    GuardRegistry,
    HireRequest,
    MetaEntry,
    MetaFifo,
    ProcessorError,
    Waiter,
)
from .topology import GridConfig, build_clusters


class SimulationError(Exception):
    exit_code = 4


class Deadlock(SimulationError):
    exit_code = 2

    def __init__(self, message: str, blocked: list[dict], simulator: "Simulator | None" = None):
        self.blocked = blocked
        self.simulator = simulator
        super().__init__(message)


class CycleCapExceeded(SimulationError):
    exit_code = 3


class NoRootCore(SimulationError):
    pass


class MemoryFault(SimulationError):
    pass


class ProtocolError(SimulationError):
    pass


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class SimConfig:
    grid: GridConfig = field(default_factory=lambda: GridConfig(8, 8))
    timing: Timing = field(default_factory=Timing)
    denied_cores: frozenset[int] = frozenset()
    seed: int = 0
    memory_size: int = 1 << 16
    stack_words: int = 4096
    cycle_cap: int = 10_000_000
    num_registers: int = 16
    trace_messages: bool = False
    trace_cores: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "denied_cores", frozenset(self.denied_cores))
        bad = [c for c in self.denied_cores if not 0 <= c < self.grid.size]
        if bad:
            raise ConfigError(f"denied cores {sorted(bad)} are outside the {self.grid} grid")
        if not 0 <= self.stack_words < self.memory_size:
            raise ConfigError("stack_words must be smaller than memory_size")
        if self.cycle_cap < 1:
            raise ConfigError("cycle cap must be >= 1")

    @property
    def stack_base(self) -> int:
        return self.memory_size - self.stack_words

    def with_(self, **changes: Any) -> "SimConfig":
        timing_keys = {f.name for f in fields(Timing)}
        t = {k: changes.pop(k) for k in list(changes) if k in timing_keys}
        cfg = replace(self, **changes)
        return replace(cfg, timing=replace(cfg.timing, **t)) if t else cfg

    def to_dict(self) -> dict:
        return {
            "grid": str(self.grid),
            **asdict(self.timing),
            "denied": sorted(self.denied_cores),
            "seed": self.seed,
            "memory_size": self.memory_size,
            "stack_words": self.stack_words,
            "cap": self.cycle_cap,
            "num_registers": self.num_registers,
            "trace_messages": self.trace_messages,
            "trace_cores": self.trace_cores,
        }

    @classmethod
    def from_dict(cls, data: dict, base: "SimConfig | None" = None) -> "SimConfig":
        """Build from flat keys; unknown keys are rejected."""
        unknown = set(data) - CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        cfg = base or cls()
        changes: dict[str, Any] = {}
        try:
            if "grid" in data:
                grid = data["grid"]
                changes["grid"] = GridConfig.parse(grid) if isinstance(grid, str) else GridConfig(*grid)
            for key in ("cycle_per_instr", "hop_cost", "memory_latency", "meta_dispatch_cost"):
                if key in data:
                    changes[key] = int(data[key])
            for key, attr in (("seed", "seed"), ("memory_size", "memory_size"),
                              ("stack_words", "stack_words"), ("cap", "cycle_cap"),
                              ("num_registers", "num_registers")):
                if key in data:
                    changes[attr] = int(data[key])
            for key in ("trace_messages", "trace_cores"):
                if key in data:
                    changes[key] = bool(data[key])
            if "denied" in data:
                grid = changes.get("grid", cfg.grid)
                seed = changes.get("seed", cfg.seed)
                changes["denied_cores"] = resolve_denied(data["denied"], grid, seed)
            elif "grid" in changes and cfg.denied_cores:
                changes["denied_cores"] = frozenset()
            return cfg.with_(**changes)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None


CONFIG_KEYS = frozenset(
    {"grid", "cycle_per_instr", "hop_cost", "memory_latency", "meta_dispatch_cost", "denied",
     "seed", "memory_size", "stack_words", "cap", "num_registers", "trace_messages", "trace_cores"}
)


def resolve_denied(value: Any, grid: GridConfig, seed: int = 0) -> frozenset[int]:
    """Denied-core set from a list of ids, ``"all-heads"`` or ``"random:F"``.

    ``random:F`` denies a seeded fraction F of the non-head cores.
    """
    if value is None or value == "" or value == []:
        return frozenset()
    if isinstance(value, str):
        text = value.strip()
        if text == "all-heads":
            return frozenset(build_clusters(grid).heads)
        if text.startswith("random:"):
            frac = float(text.split(":", 1)[1])
            if not 0 <= frac <= 1:
                raise ConfigError(f"denied fraction must be in [0, 1], got {frac}")
            heads = set(build_clusters(grid).heads)
            others = [c for c in range(grid.size) if c not in heads]
            k = round(frac * len(others))
            return frozenset(random.Random(seed).sample(others, k))
        value = [s for s in text.replace(",", " ").split()]
    try:
        return frozenset(int(c) for c in value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad denied-core list {value!r}") from None


# ---------------------------------------------------------------------------
# memory, results


class GlobalMemory:
    """Flat word-addressed store; unwritten words read as zero."""

    def __init__(self, size: int):
        self.size = size
        self._words: dict[int, int] = {}

    def _check(self, address: int) -> None:
        if not 0 <= address < self.size:
            raise MemoryFault(f"address {address} outside memory of {self.size} words")

    def read(self, address: int) -> int:
        self._check(address)
        return self._words.get(address, 0)

    def write(self, address: int, value: int) -> None:
        self._check(address)
        if value:
            self._words[address] = value
        else:
            self._words.pop(address, None)

    def nonzero(self, exclude_from: int | None = None) -> tuple[tuple[int, int], ...]:
        return tuple(
            sorted((a, v) for a, v in self._words.items() if exclude_from is None or a < exclude_from)
        )


@dataclass(frozen=True)
class FinalState:
    registers: tuple[int, ...]
    memory: tuple[tuple[int, int], ...]

    def word(self, address: int) -> int:
        return dict(self.memory).get(address, 0)

    def to_dict(self) -> dict:
        return {"registers": list(self.registers), "memory": {str(a): v for a, v in self.memory}}


@dataclass
class Metrics:
    makespan: int = 0
    energy: int = 0
    per_core: list[int] = field(default_factory=list)
    messages: int = 0
    hops: int = 0
    memory_ops: int = 0
    call_memory_ops: int = 0
    instructions: int = 0
    qt_count: int = 0
    guard_calls: int = 0
    max_live_qts: int = 0
    pool_exhaustion: int = 0
    guard_wait_cycles: int = 0
    os_sched_events: int = 0
    nacks: int = 0
    latch_conflicts: int = 0
    spawn_critical_path: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_core"] = [{"core": i, "active_cycles": c} for i, c in enumerate(self.per_core)]
        return d


class EventLog:
    """Ordered list of ``{t, kind, core, qt, detail}`` records."""

    def __init__(self) -> None:
        self.records: list[dict] = []

    def add(self, t: int, kind: str, core: int | None = None, qt: int | None = None, /, **detail: Any) -> None:
        self.records.append({"t": t, "kind": kind, "core": core, "qt": qt, "detail": detail})

    def __iter__(self) -> Iterator[dict]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def of(self, *kinds: str) -> list[dict]:
        return [r for r in self.records if r["kind"] in kinds]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)


@dataclass
class RunResult:
    metrics: Metrics
    final: FinalState
    events: EventLog
    trace: MessageTrace | None = None
    core_trace: list[tuple[int, int, str, int, str]] | None = None

    def __iter__(self):
        return iter((self.metrics, self.final, self.events))


@dataclass
class QtInfo:
    qt: int
    core: int
    parent: int | None
    created: int
    started: int | None = None
    guarded: bool = False


def _check_program(program: Program) -> None:
    diags = validate(program)
    if diags:
        raise AssemblyError(diags)


def _root_core(clustering, denied: frozenset[int]) -> int:
    live = [h for h in clustering.heads if h not in denied]
    if not live:
        raise NoRootCore("every cluster head is denied; nowhere to start the root QT")
    return min(live)


# ---------------------------------------------------------------------------
# simulator


Probe = Callable[["Simulator", str, tuple], None]


class Simulator:
    """One run of a program on the configured grid.

    ``probe`` is called after every processed event.  ``withhold`` may drop
    core-to-core messages before they are sent; it exists for control runs.
    """

    def __init__(
        self,
        program: Program,
        config: SimConfig | None = None,
        *,
        probe: Probe | None = None,
        withhold: Callable[[Message], bool] | None = None,
    ):
        _check_program(program)
        self.program = program
        self.config = cfg = config or SimConfig()
        self.timing = cfg.timing
        self.probe = probe
        self.withhold = withhold
        self.clustering = build_clusters(cfg.grid)
        self.denied = cfg.denied_cores
        self.router = Router(self.clustering, self.denied)
        n = cfg.grid.size
        self.cores = [Core(i, program.num_registers, self.timing.cycle_per_instr) for i in range(n)]
        for c in self.denied:
            self.cores[c].deny()
        self.pool = CorePool(range(n), self.denied)
        self.fifo = MetaFifo()
        self.tree = FamilyTree()
        self.guards = GuardRegistry()
        self.memory = GlobalMemory(cfg.memory_size)
        self.esme = {h: Esme(h) for h in self.clustering.heads}
        self.metrics = Metrics()
        self.events = EventLog()
        self.trace = MessageTrace() if cfg.trace_messages else None
        self.core_trace: list[tuple[int, int, str, int, str]] | None = [] if cfg.trace_cores else None
        self.hired: set[int] = set()
        self.qts: dict[int, QtInfo] = {}
        self.in_flight = 0
        self.now = 0
        self.final: FinalState | None = None
        self.root_core: int | None = None
        self._queue: list[tuple] = []
        self._ordinal = 0
        self._qt_seq = 0
        self._msg_seq = 0
        self._arbitration: set[int] = set()
        self._ran = False

    # scheduling -----------------------------------------------------------

    def schedule(self, time: int, kind: str, *payload: Any, phase: int = 0) -> None:
        if time < self.now:
            raise SimulationError(f"event {kind} scheduled in the past ({time} < {self.now})")
        heapq.heappush(self._queue, (time, phase, self._ordinal, kind, payload))
        self._ordinal += 1

    def _apply(self, core: Core, effects: Iterable) -> None:
        for eff in effects:
            if isinstance(eff, Next):
                self.schedule(eff.time, "step", core.core_id)
            elif isinstance(eff, Submit):
                self.schedule(eff.time, "submit", core.core_id, eff.instr)
            elif isinstance(eff, Send):
                self._send(eff.message)

    def _new_qt(self) -> int:
        self._qt_seq += 1
        return self._qt_seq

    def pool_counts(self) -> tuple[int, int, int]:
        """(hired, pooled, denied); these always add up to the grid size."""
        return len(self.hired), len(self.pool), len(self.denied)

    def _qt_of(self, core: Core) -> int | None:
        return core.qt.qt_id if core.qt else None

    def _note_live(self) -> None:
        self.metrics.max_live_qts = max(self.metrics.max_live_qts, len(self.tree))

    # main loop -------------------------------------------------------------

    def run(self) -> RunResult:
        if self._ran:
            raise SimulationError("a Simulator instance runs once")
        self._ran = True
        self._start_root()
        cap = self.config.cycle_cap
        handlers = {
            "step": self._on_step,
            "submit": self._on_submit,
            "arbitrate": self._on_arbitrate,
            "complete": self._on_complete,
            "arrive": self._on_arrive,
            "nack": self._on_nack,
            "esme_request": self._on_esme_request,
            "memory": self._on_memory,
            "esme_reply": self._on_esme_reply,
            "reply": self._on_reply,
        }
        while self._queue:
            time, _phase, _ord, kind, payload = heapq.heappop(self._queue)
            if time > cap:
                raise CycleCapExceeded(f"simulation passed the cycle cap of {cap}")
            self.now = time
            try:
                handlers[kind](*payload)
            except (CoreError, ProcessorError) as exc:
                self.events.add(time, "error", getattr(exc, "core", None), detail=str(exc))
                raise
            if self.probe is not None:
                self.probe(self, kind, payload)
        return self._finish()

    def _start_root(self) -> None:
        root = _root_core(self.clustering, self.denied)
        self.root_core = root
        self.pool.take(root)
        self.hired.add(root)
        qt = 0
        self.tree.add_root(qt)
        self.qts[qt] = QtInfo(qt, root, None, 0, 0)
        core = self.cores[root]
        core.assign(QtContext(qt, self.program.entry))
        self.events.add(0, "qt_start", root, qt, fragment=self.program.entry, root=True)
        self._note_live()
        self._apply(core, core.start(self.program.fragment(self.program.entry), (), 0))

    def _blocked_dump(self) -> list[dict]:
        out = []
        for core in self.cores:
            if core.state in (CoreState.IN_POOL, CoreState.DENIED):
                continue
            if core.core_id in self.guards.by_core and core.qt is None:
                continue
            out.append(
                {
                    "core": core.core_id,
                    "state": core.state.value,
                    "qt": self._qt_of(core),
                    "fragment": core.fragment.name if core.fragment else None,
                    "ip": core.ip,
                    "blocked_on": core.blocked_on(),
                }
            )
        return out

    def _finish(self) -> RunResult:
        blocked = self._blocked_dump()
        if self.final is None or blocked or self.in_flight or self.pool.pending:
            lines = "; ".join(
                f"core {b['core']} {b['state']} in {b['fragment']}:{b['ip']} waiting on {b['blocked_on']}"
                for b in blocked
            )
            raise Deadlock(f"no events left but the machine is not quiescent: {lines or 'root not ended'}",
                           blocked, self)
        m = self.metrics
        m.makespan = self.now
        m.per_core = [c.active_cycles for c in self.cores]
        m.energy = sum(m.per_core)
        m.instructions = sum(c.instructions for c in self.cores)
        m.spawn_critical_path = self._spawn_critical_path()
        return RunResult(m, self.final, self.events, self.trace, self.core_trace)

    def _spawn_critical_path(self) -> int:
        """Longest chain of create-to-start latencies through the family tree."""
        memo: dict[int, int] = {}

        def chain(qt: int) -> int:
            if qt not in memo:
                info = self.qts[qt]
                if info.parent is None or info.guarded or info.started is None:
                    memo[qt] = 0
                else:
                    memo[qt] = info.started - info.created + chain(info.parent)
            return memo[qt]

        return max((chain(q) for q, i in self.qts.items() if not i.guarded), default=0)

    # handlers ---------------------------------------------------------------

    def _trace_core(self, core: Core, what: str) -> None:
        if self.core_trace is not None:
            self.core_trace.append((self.now, core.core_id, core.state.value, core.ip, what))

    def _on_step(self, core_id: int) -> None:
        core = self.cores[core_id]
        ins = core.current
        effects = core.step(self.now)
        self._trace_core(core, ins.op)
        if ins.op in ("QEND", "HALT"):
            if not effects:
                self.events.add(self.now, "end_deferred", core_id, self._qt_of(core), outstanding=core.outstanding)
            elif core.qt.guard is not None:
                self.events.add(self.now, "guard_exit", core_id, core.qt.qt_id, guard=core.qt.guard)
        self._apply(core, effects)

    def _on_submit(self, core_id: int, instr: Instruction) -> None:
        entry = self.fifo.push(core_id, instr, self.now)
        core = self.cores[core_id]
        self.events.add(self.now, "submit", core_id, self._qt_of(core), op=instr.op, seq=entry.seq,
                        priority=entry.priority.name)
        if self.now not in self._arbitration:
            self._arbitration.add(self.now)
            self.schedule(self.now, "arbitrate", phase=1)

    def _on_arbitrate(self) -> None:
        self._arbitration.discard(self.now)
        while len(self.fifo):
            entry = self.fifo.pop()
            core = self.cores[entry.core]
            self.events.add(self.now, "dispatch", entry.core, self._qt_of(core), op=entry.instr.op,
                            seq=entry.seq, priority=entry.priority.name)
            self._dispatch(entry)

    def _dispatch(self, entry: MetaEntry) -> None:
        core = self.cores[entry.core]
        op = entry.instr.op
        if op in ("QEND", "HALT"):
            self._terminate(core)
        elif op == "QCREATE":
            self._create(core, entry)
        elif op == "QGUARD":
            self._register_guard(core, entry)
        elif op == "QCALLG":
            self._call_guard(core, entry)
        else:
            raise ProtocolError(f"{op} reached the meta FIFO")

    def _complete_later(self, core: Core, handle: int | None = None, transfer: tuple | None = None) -> None:
        self.schedule(self.now + self.timing.meta_dispatch_cost, "complete", core.core_id, handle, transfer)

    def _on_complete(self, core_id: int, handle: int | None, transfer: tuple | None) -> None:
        core = self.cores[core_id]
        self._apply(core, core.complete_meta(self.now, handle))
        if transfer is not None:
            child, qt, fragment, mask, values = transfer
            msg = Message(MessageKind.REGISTER_TRANSFER, core_id, child, values=values, mask=mask,
                          qt_id=qt, fragment=fragment)
            self._send(msg)

    # hiring ------------------------------------------------------------------

    def _select(self, near: int) -> int | None:
        return self.pool.select(near, self.clustering, lambda c: self.router.reachable(near, c))

    def _pend(self, core: Core, entry: MetaEntry) -> None:
        self.pool.pending.append(HireRequest(core.core_id, entry.instr, entry.submitted, self.now))
        core.wait_for_resource(self.now)
        self.metrics.pool_exhaustion += 1
        self.events.add(self.now, "pending", core.core_id, self._qt_of(core), op=entry.instr.op,
                        queue=len(self.pool.pending))

    def _take(self, core_id: int) -> None:
        if core_id in self.pool:
            self.pool.take(core_id)
        self.hired.add(core_id)

    def _create(self, parent: Core, entry: MetaEntry) -> None:
        child = self._select(parent.core_id)
        if child is None:
            self._pend(parent, entry)
        else:
            self._hire(parent, child, entry.instr, entry.submitted)

    def _hire(self, parent: Core, child_id: int, instr: Instruction, submitted: int) -> None:
        self._take(child_id)
        qt = self._new_qt()
        pqt = parent.qt.qt_id
        self.tree.add(pqt, qt)
        parent.add_child(qt, child_id)
        self.cores[child_id].assign(QtContext(qt, instr.label, parent.core_id, pqt, instr.ret_mask))
        self.qts[qt] = QtInfo(qt, child_id, pqt, submitted)
        self.metrics.qt_count += 1
        self._note_live()
        self.events.add(self.now, "hire", child_id, qt, parent=parent.core_id, parent_qt=pqt,
                        fragment=instr.label, distance=self.clustering.distance(parent.core_id, child_id))
        values = parent.regs.pick(instr.in_mask)
        self._complete_later(parent, qt, (child_id, qt, instr.label, instr.in_mask, values))

    def _free_core(self, core: Core) -> None:
        """Return a core to the pool, or hand it straight to the oldest waiting request."""
        core.release(self.now)
        cid = core.core_id
        self.hired.discard(cid)
        while True:
            req = next((r for r in self.pool.pending if self.router.reachable(r.requester, cid)), None)
            if req is None:
                break
            self.pool.pending.remove(req)
            requester = self.cores[req.requester]
            requester.resource_granted(self.now)
            if req.instr.op == "QGUARD" and req.instr.label in self.guards:
                # registered by someone else while this request waited
                self._complete_later(requester)
                continue
            self.events.add(self.now, "rehire", cid, None, requester=req.requester, op=req.instr.op)
            if req.instr.op == "QCREATE":
                self._hire(requester, cid, req.instr, req.submitted)
            else:
                self._install_guard(requester, cid, req.instr)
            return
        self.pool.put(cid)
        self.events.add(self.now, "pool", cid, None, size=len(self.pool))

    def _terminate(self, core: Core) -> None:
        ctx = core.qt
        qt = ctx.qt_id
        self.tree.remove(qt)
        self.events.add(self.now, "release", core.core_id, qt, fragment=ctx.fragment, guard=ctx.guard)
        if ctx.guard is not None:
            guard = self.guards.get(ctx.guard)
            core.release(self.now)
            core.state = CoreState.WAITING_OPERANDS
            nxt = self.guards.leave(ctx.guard)
            if nxt is not None:
                self._admit(guard, nxt, queued=True)
            elif guard.retiring:
                self._retire_guard(guard)
            return
        if ctx.parent_core is None:
            self.final = FinalState(core.regs.snapshot(), self.memory.nonzero(self.config.stack_base))
            self.events.add(self.now, "root_end", core.core_id, qt)
        for guard in self.guards.owned_by(qt):
            if guard.idle:
                self._retire_guard(guard)
            else:
                guard.retiring = True
        self._free_core(core)

    # guards ------------------------------------------------------------------

    def _register_guard(self, owner: Core, entry: MetaEntry) -> None:
        label = entry.instr.label
        if label in self.guards:
            self.events.add(self.now, "guard_exists", owner.core_id, self._qt_of(owner), guard=label)
            self._complete_later(owner)
            return
        gcore = self._select(owner.core_id)
        if gcore is None:
            self._pend(owner, entry)
        else:
            self._install_guard(owner, gcore, entry.instr)

    def _install_guard(self, owner: Core, gcore: int, instr: Instruction) -> None:
        self._take(gcore)
        self.guards.register(instr.label, gcore, owner.qt.qt_id)
        self.cores[gcore].state = CoreState.WAITING_OPERANDS
        self.events.add(self.now, "guard_register", gcore, owner.qt.qt_id, guard=instr.label,
                        owner=owner.core_id)
        self._complete_later(owner)

    def _retire_guard(self, guard: Guard) -> None:
        self.guards.remove(guard.label)
        self.events.add(self.now, "guard_teardown", guard.core, guard.owner_qt, guard=guard.label,
                        served=guard.served)
        self._free_core(self.cores[guard.core])

    def _call_guard(self, caller: Core, entry: MetaEntry) -> None:
        label = entry.instr.label
        waiter = Waiter(caller.core_id, entry.instr, entry.submitted, self.now)
        if self.guards.enter(label, waiter) is ADMITTED:
            self._admit(self.guards.get(label), waiter, queued=False)
        else:
            caller.wait_for_resource(self.now)
            self.events.add(self.now, "guard_queue", caller.core_id, self._qt_of(caller), guard=label,
                            waiting=len(self.guards.get(label).waiters))

    def _admit(self, guard: Guard, waiter: Waiter, queued: bool) -> None:
        caller = self.cores[waiter.core]
        if queued:
            caller.resource_granted(self.now)
            self.metrics.guard_wait_cycles += self.now - waiter.queued
        qt = self._new_qt()
        pqt = caller.qt.qt_id
        self.tree.add(pqt, qt)
        caller.add_child(qt, guard.core, guarded=True)
        instr = waiter.instr
        self.cores[guard.core].assign(
            QtContext(qt, guard.label, caller.core_id, pqt, instr.ret_mask, guard=guard.label)
        )
        self.qts[qt] = QtInfo(qt, guard.core, pqt, waiter.submitted, guarded=True)
        self.metrics.guard_calls += 1
        self._note_live()
        self.events.add(self.now, "guard_admit", guard.core, qt, guard=guard.label, caller=caller.core_id)
        values = caller.regs.pick(instr.in_mask)
        self._complete_later(caller, None, (guard.core, qt, guard.label, instr.in_mask, values))

    # messages ----------------------------------------------------------------

    def _send(self, msg: Message) -> None:
        self._msg_seq += 1
        msg = replace(msg, seq=self._msg_seq)
        if msg.kind.is_request:
            self._memory_request(msg)
            return
        if self.withhold is not None and self.withhold(msg):
            self.events.add(self.now, "withheld", msg.src, msg.qt_id, message=msg.kind.value, dst=msg.dst)
            return
        route = self.router.route_message(msg)
        ev = deliver(msg, route, self.now, self.timing, self.denied)
        self.metrics.messages += 1
        self.metrics.hops += route.hops * (2 if ev.nacked else 1)
        if self.trace is not None:
            self.trace.record(self.now, ev)
        self.in_flight += 1
        self.schedule(ev.time, "nack" if ev.nacked else "arrive", msg)

    def _on_arrive(self, msg: Message) -> None:
        self.in_flight -= 1
        core = self.cores[msg.dst]
        if msg.kind is MessageKind.REGISTER_TRANSFER:
            ctx = core.qt
            if ctx is None or ctx.qt_id != msg.qt_id or core.state is not CoreState.WAITING_OPERANDS:
                raise ProtocolError(f"core {msg.dst} got operands for QT {msg.qt_id} it was not hired for")
            self.qts[msg.qt_id].started = self.now
            kind = "guard_enter" if ctx.guard else "qt_start"
            self.events.add(self.now, kind, msg.dst, msg.qt_id, fragment=msg.fragment, guard=ctx.guard)
            self._apply(core, core.start(self.program.fragment(msg.fragment), msg.values, self.now))
            self._trace_core(core, "start")
        elif msg.kind is MessageKind.QT_RESULT:
            effects, clobbered = core.on_child_result(msg, self.now)
            self.events.add(self.now, "result", msg.dst, self._qt_of(core), child=msg.qt_id,
                            mask=msg.mask)
            if clobbered:
                self.metrics.latch_conflicts += 1
                self.events.add(self.now, "latch_conflict", msg.dst, self._qt_of(core), child=msg.qt_id,
                                registers=clobbered)
            self._apply(core, effects)
            self._trace_core(core, "result")
        else:
            raise ProtocolError(f"unexpected {msg.kind.value} at core {msg.dst}")

    def _on_nack(self, msg: Message) -> None:
        self.in_flight -= 1
        self.metrics.nacks += 1
        self.events.add(self.now, "nack", msg.src, msg.qt_id, message=msg.kind.value, dst=msg.dst)
        raise ProtocolError(f"{msg.kind.value} from core {msg.src} refused by denied core {msg.dst}")

    # memory path: requester -> (relays) -> head ESME -> memory -> head ESME -> requester

    def _memory_request(self, msg: Message) -> None:
        route = self.router.route(msg.src, GLOBAL_MEMORY)
        hops = route.hops
        gateway = route.nodes[-2]
        hop, lat = self.timing.hop_cost, self.timing.memory_latency
        self.metrics.memory_ops += 1
        self.metrics.messages += 2
        self.metrics.hops += 2 * hops
        self.in_flight += 1
        self.events.add(self.now, "memory", msg.src, self._qt_of(self.cores[msg.src]),
                        op="read" if msg.kind is MessageKind.MEMORY_READ else "write",
                        address=msg.address, gateway=gateway, hops=hops, call=False)
        if self.trace is not None:
            self.trace.rows.append((self.now, self.now + hops * hop + lat, msg.kind.value, msg.src,
                                    GLOBAL_MEMORY, hops))
        if gateway == msg.src:
            self.schedule(self.now + hop + lat, "memory", msg, route)
        else:
            self.schedule(self.now + (hops - 1) * hop, "esme_request", msg, route)

    def _on_esme_request(self, msg: Message, route) -> None:
        gateway = route.nodes[-2]
        self.esme[gateway].intercept(msg)
        self.events.add(self.now, "esme", gateway, None, seq=msg.seq, requester=msg.src, leg="request")
        self.schedule(self.now + self.timing.hop_cost + self.timing.memory_latency, "memory", msg, route)

    def _on_memory(self, msg: Message, route) -> None:
        if msg.kind is MessageKind.MEMORY_READ:
            reply = Message(MessageKind.MEMORY_READ_REPLY, GLOBAL_MEMORY, msg.src, seq=msg.seq,
                            address=msg.address, word=self.memory.read(msg.address), requester=msg.src)
        else:
            self.memory.write(msg.address, msg.word)
            reply = Message(MessageKind.MEMORY_WRITE_ACK, GLOBAL_MEMORY, msg.src, seq=msg.seq,
                            address=msg.address, requester=msg.src)
        hop = self.timing.hop_cost
        if self.trace is not None:
            self.trace.rows.append((self.now, self.now + route.hops * hop, reply.kind.value,
                                    GLOBAL_MEMORY, msg.src, route.hops))
        if route.nodes[-2] == msg.src:
            self.schedule(self.now + hop, "reply", reply)
        else:
            self.schedule(self.now + hop, "esme_reply", reply, route)

    def _on_esme_reply(self, reply: Message, route) -> None:
        gateway = route.nodes[-2]
        self.esme[gateway].intercept(reply)
        self.events.add(self.now, "esme", gateway, None, seq=reply.seq, requester=reply.dst, leg="reply")
        self.schedule(self.now + (route.hops - 1) * self.timing.hop_cost, "reply", reply)

    def _on_reply(self, reply: Message) -> None:
        self.in_flight -= 1
        core = self.cores[reply.dst]
        self._apply(core, core.on_memory_reply(reply, self.now))
        self._trace_core(core, "memory_reply")


def run(program: Program, config: SimConfig | None = None, **kwargs: Any) -> RunResult:
    """Simulate ``program`` to quiescence; returns ``(metrics, final, events)``-unpackable result."""
    return Simulator(program, config, **kwargs).run()


__all__ = [
    "ConfigError",
    "CycleCapExceeded",
    "Deadlock",
    "EventLog",
    "FinalState",
    "GlobalMemory",
    "MemoryFault",
    "Metrics",
    "NoRootCore",
    "ProtocolError",
    "RunResult",
    "SimConfig",
    "SimulationError",
    "Simulator",
    "resolve_denied",
    "run",
]
