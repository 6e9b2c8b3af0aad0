"""Processor-level supervision structures.

These containers hold the bookkeeping the engine consults when it
arbitrates meta-instructions: which cores are free, which requests are
waiting, who is whose parent and which critical sections are guarded.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Iterable

from .isa import Instruction
from .topology import Clustering


class ProcessorError(Exception):
    pass


class UnknownGuard(ProcessorError):
    pass


class ChildHasLiveChildren(ProcessorError):
    pass


class Priority(IntEnum):
    TERMINATE = 0
    CREATE = 1
    OTHER = 2


def priority_of(op: str) -> Priority:
    if op in ("QEND", "HALT"):
        return Priority.TERMINATE
    if op == "QCREATE":
        return Priority.CREATE
    return Priority.OTHER


@dataclass(frozen=True, order=True)
class MetaEntry:
    priority: Priority
    seq: int
    core: int = field(compare=False)
    instr: Instruction = field(compare=False)
    submitted: int = field(compare=False)


class MetaFifo:
    """Priority queue of submitted meta-instructions, FIFO within a class."""

    def __init__(self) -> None:
        self._heap: list[MetaEntry] = []
        self._seq = 0

    def push(self, core: int, instr: Instruction, now: int) -> MetaEntry:
        entry = MetaEntry(priority_of(instr.op), self._seq, core, instr, now)
        self._seq += 1
        heapq.heappush(self._heap, entry)
        return entry

    def pop(self) -> MetaEntry:
        return heapq.heappop(self._heap)

    def peek(self) -> MetaEntry | None:
        return self._heap[0] if self._heap else None

    def has(self, priority: Priority) -> bool:
        return any(e.priority is priority for e in self._heap)

    def __len__(self) -> int:
        return len(self._heap)

    def __iter__(self):
        return iter(sorted(self._heap))


@dataclass(frozen=True)
class HireRequest:
    requester: int
    instr: Instruction
    submitted: int
    queued: int


class CorePool:
    """Idle cores plus the queue of hire requests that found the pool empty."""

    def __init__(self, cores: Iterable[int], denied: Iterable[int] = ()):
        self.denied = frozenset(denied)
        self.free: set[int] = set(cores) - self.denied
        self.pending: deque[HireRequest] = deque()

    def __len__(self) -> int:
        return len(self.free)

    def __contains__(self, core: int) -> bool:
        return core in self.free

    def take(self, core: int) -> None:
        self.free.remove(core)

    def put(self, core: int) -> None:
        if core in self.denied:
            raise ProcessorError(f"denied core {core} cannot enter the pool")
        if core in self.free:
            raise ProcessorError(f"core {core} is already pooled")
        self.free.add(core)

    def select(
        self,
        near: int,
        clustering: Clustering,
        usable: Callable[[int], bool] = lambda core: True,
    ) -> int | None:
        """Closest free core to ``near`` by hex distance, lowest id on ties."""
        best = None
        for core in self.free:
            if not usable(core):
                continue
            key = (clustering.distance(near, core), core)
            if best is None or key < best:
                best = key
        return None if best is None else best[1]


class FamilyTree:
    """Parent/child links between live QTs."""

    def __init__(self) -> None:
        self.parent: dict[int, int | None] = {}
        self.children: dict[int, set[int]] = {}

    def __contains__(self, qt: int) -> bool:
        return qt in self.parent

    def __len__(self) -> int:
        return len(self.parent)

    def add_root(self, qt: int) -> None:
        self.parent[qt] = None
        self.children[qt] = set()

    def add(self, parent: int, child: int) -> None:
        if child in self.parent:
            raise ProcessorError(f"QT {child} already has a parent")
        if parent not in self.parent:
            raise ProcessorError(f"parent QT {parent} is not live")
        self.parent[child] = parent
        self.children[child] = set()
        self.children[parent].add(child)

    def outstanding(self, qt: int) -> int:
        return len(self.children[qt])

    def remove(self, qt: int) -> None:
        if self.children[qt]:
            raise ChildHasLiveChildren(f"QT {qt} still has children {sorted(self.children[qt])}")
        parent = self.parent.pop(qt)
        del self.children[qt]
        if parent is not None:
            self.children[parent].discard(qt)

    def ancestors(self, qt: int) -> list[int]:
        out = []
        cur = self.parent.get(qt)
        while cur is not None:
            out.append(cur)
            cur = self.parent.get(cur)
        return out


@dataclass
class Waiter:
    core: int
    instr: Instruction
    submitted: int
    queued: int


@dataclass
class Guard:
    label: str
    core: int
    owner_qt: int
    busy: int | None = None
    waiters: deque[Waiter] = field(default_factory=deque)
    retiring: bool = False
    served: int = 0

    @property
    def idle(self) -> bool:
        return self.busy is None and not self.waiters


class Admitted:
    def __repr__(self) -> str:
        return "Admitted"


class Queued:
    def __repr__(self) -> str:
        return "Queued"


ADMITTED = Admitted()
QUEUED = Queued()


class GuardRegistry:
    """Critical sections, each served by one delegated core."""

    def __init__(self) -> None:
        self.guards: dict[str, Guard] = {}
        self.by_core: dict[int, Guard] = {}

    def __contains__(self, label: str) -> bool:
        return label in self.guards

    def register(self, label: str, core: int, owner_qt: int) -> Guard:
        if label in self.guards:
            raise ProcessorError(f"guard {label!r} already registered")
        guard = Guard(label, core, owner_qt)
        self.guards[label] = guard
        self.by_core[core] = guard
        return guard

    def get(self, label: str) -> Guard:
        try:
            return self.guards[label]
        except KeyError:
            raise UnknownGuard(f"no guard registered for {label!r}") from None

    def enter(self, label: str, waiter: Waiter) -> Admitted | Queued:
        guard = self.get(label)
        if guard.busy is None and not guard.waiters:
            guard.busy = waiter.core
            guard.served += 1
            return ADMITTED
        guard.waiters.append(waiter)
        return QUEUED

    def leave(self, label: str) -> Waiter | None:
        """The guarded fragment ended; admit the next waiter if any."""
        guard = self.get(label)
        guard.busy = None
        if guard.waiters:
            nxt = guard.waiters.popleft()
            guard.busy = nxt.core
            guard.served += 1
            return nxt
        return None

    def owned_by(self, qt: int) -> list[Guard]:
        return [g for g in self.guards.values() if g.owner_qt == qt]

    def remove(self, label: str) -> Guard:
        guard = self.guards.pop(label)
        del self.by_core[guard.core]
        return guard


def guard_enter(qt: int, label: str, registry: GuardRegistry, now: int = 0) -> Admitted | Queued:
    return registry.enter(label, Waiter(qt, Instruction("QCALLG", label=label), now, now))
