"""Per-core state: register file, latch file, signals and the fetch/execute step.

A :class:`Core` knows nothing about time beyond the ``now`` it is handed and
nothing about other cores.  Its methods mutate local state and return
*effects* (:class:`Next`, :class:`Submit`, :class:`Send`) that the engine
turns into scheduled events.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

from .isa import Fragment, Instruction, mask_registers, wrap
from .messaging import GLOBAL_MEMORY, Message, MessageKind

log = logging.getLogger(__name__)


class CoreState(Enum):
    IN_POOL = "InPool"
    RUNNING = "Running"
    MORPHING = "Morphing"
    WAITING_WAIT = "WaitingWait"
    WAITING_LATCH = "WaitingLatch"
    WAITING_MEMORY = "WaitingMemory"
    WAITING_OPERANDS = "WaitingOperands"
    DENIED = "Denied"


class CoreError(Exception):
    def __init__(self, core: int, message: str):
        self.core = core
        super().__init__(f"core {core}: {message}")


class IllegalInstruction(CoreError):
    pass


class UnknownChild(CoreError):
    pass


@dataclass(frozen=True)
class Next:
    time: int


@dataclass(frozen=True)
class Submit:
    instr: Instruction
    time: int


@dataclass(frozen=True)
class Send:
    message: Message


Effect = Next | Submit | Send


@dataclass
class Signals:
    meta: bool = False
    wait: bool = False
    denied: bool = False


class RegisterFile:
    """R signed words; r0 is hard-wired to zero."""

    def __init__(self, size: int):
        self.size = size
        self._v = [0] * size

    def __getitem__(self, idx: int) -> int:
        return self._v[idx]

    def __setitem__(self, idx: int, value: int) -> None:
        if idx:
            self._v[idx] = wrap(value)

    def snapshot(self) -> tuple[int, ...]:
        return tuple(self._v)

    def clear(self) -> None:
        self._v = [0] * self.size

    def pick(self, mask: int) -> tuple[tuple[int, int], ...]:
        return tuple((r, self._v[r]) for r in mask_registers(mask))


class LatchFile:
    """Parent-side holding area for register values returned by children."""

    def __init__(self, size: int):
        self.size = size
        self.values = [0] * size
        self.tags: list[int | None] = [None] * size
        self.valid = 0

    def write(self, qt_id: int, values: Iterable[tuple[int, int]]) -> list[int]:
        """Latch ``values`` for child ``qt_id``.

        Returns the slots that already held a valid value from another child;
        the newer value wins.
        """
        clobbered = []
        for reg, value in values:
            if self.valid >> reg & 1 and self.tags[reg] != qt_id:
                clobbered.append(reg)
            self.values[reg] = value
            self.tags[reg] = qt_id
            self.valid |= 1 << reg
        return clobbered

    def ready(self, mask: int) -> bool:
        return self.valid & mask == mask

    def take(self, mask: int) -> list[tuple[int, int]]:
        out = [(r, self.values[r]) for r in mask_registers(mask)]
        self.valid &= ~mask
        return out

    def clear(self) -> None:
        self.values = [0] * self.size
        self.tags = [None] * self.size
        self.valid = 0


@dataclass
class QtContext:
    qt_id: int
    fragment: str
    parent_core: int | None = None
    parent_qt: int | None = None
    ret_mask: int = 0
    guard: str | None = None


@dataclass
class ChildRecord:
    qt_id: int
    core: int
    returned: bool = False
    guarded: bool = False


class Core:
    """One EMPA core: processing, morphing and communication elements."""

    def __init__(self, core_id: int, num_registers: int = 16, cycle_per_instr: int = 1):
        self.core_id = core_id
        self.cpi = cycle_per_instr
        self.regs = RegisterFile(num_registers)
        self.latches = LatchFile(num_registers)
        self.signals = Signals()
        self.state = CoreState.IN_POOL
        self.fragment: Fragment | None = None
        self.ip = 0
        self.qt: QtContext | None = None
        self.children: dict[int, ChildRecord] = {}
        self.outstanding = 0
        self.active_cycles = 0
        self.instructions = 0
        self.ending = False
        self._mark: int | None = None
        self._waiting: tuple[str, int] | None = None
        self._mem_dest: int | None = None

    def __repr__(self) -> str:
        frag = self.fragment.name if self.fragment else "-"
        return f"<Core {self.core_id} {self.state.value} {frag}:{self.ip}>"

    @property
    def current(self) -> Instruction:
        return self.fragment.instructions[self.ip]

    @property
    def is_root(self) -> bool:
        return self.qt is not None and self.qt.parent_core is None and self.qt.guard is None

    def deny(self) -> None:
        self.state = CoreState.DENIED
        self.signals.denied = True

    # lifecycle -----------------------------------------------------------

    def assign(self, ctx: QtContext) -> None:
        """Hired: wait for the register transfer that carries the operands."""
        self.qt = ctx
        self.state = CoreState.WAITING_OPERANDS

    def start(self, fragment: Fragment, values: Iterable[tuple[int, int]], now: int) -> list[Effect]:
        self.regs.clear()
        self.latches.clear()
        for reg, value in values:
            self.regs[reg] = value
        self.fragment = fragment
        self.ip = 0
        self.children.clear()
        self.outstanding = 0
        self.ending = False
        self.state = CoreState.RUNNING
        return [Next(now)]

    def release(self, now: int) -> None:
        """Back to the pool; the register file is dropped with the QT."""
        self._close_interval(now)
        self.signals.meta = False
        self.signals.wait = False
        self.state = CoreState.IN_POOL
        self.qt = None
        self.fragment = None
        self.children.clear()
        self._waiting = None

    def _close_interval(self, now: int) -> None:
        if self._mark is not None:
            self.active_cycles += now - self._mark
            self._mark = None

    # execution -----------------------------------------------------------

    def step(self, now: int) -> list[Effect]:
        """Fetch and execute one instruction at time ``now``."""
        if self.state is not CoreState.RUNNING:
            raise CoreError(self.core_id, f"step while {self.state.value}")
        ins = self.current
        op = ins.op
        regs = self.regs
        cpi = self.cpi

        if op in ("QEND", "HALT"):
            if op == "HALT" and not self.is_root:
                raise IllegalInstruction(self.core_id, f"HALT outside the root fragment (line {ins.line})")
            if self.outstanding:
                # parents outlive their children: spin here until all returned
                self.ending = True
                self._mark = now
                return []
            self._close_interval(now)
            self.ending = False
            self._retire(now, cpi)
            effects: list[Effect] = []
            if self.qt is not None and self.qt.parent_core is not None:
                msg = Message(
                    MessageKind.QT_RESULT,
                    self.core_id,
                    self.qt.parent_core,
                    values=regs.pick(self.qt.ret_mask),
                    mask=self.qt.ret_mask,
                    qt_id=self.qt.qt_id,
                )
                effects.append(Send(msg))
            return effects + self._raise_meta(ins, now)

        if op in ("QCREATE", "QGUARD", "QCALLG"):
            self._retire(now, cpi)
            return self._raise_meta(ins, now)

        if op == "QWAIT":
            handle = regs[ins.rs]
            child = self.children.get(handle)
            if child is None:
                raise UnknownChild(self.core_id, f"QWAIT on unknown handle {handle} (line {ins.line})")
            if not child.returned:
                return self._block(("child", handle))
            return self._advance(now)

        if op == "QCLONE":
            return self.exec_qclone(ins.mask, now)

        if op == "LD" or op == "ST":
            address = regs[ins.rs] + ins.imm
            if op == "LD":
                msg = Message(MessageKind.MEMORY_READ, self.core_id, GLOBAL_MEMORY, address=address,
                              requester=self.core_id)
                self._mem_dest = ins.rd
            else:
                msg = Message(MessageKind.MEMORY_WRITE, self.core_id, GLOBAL_MEMORY, address=address,
                              word=regs[ins.rt], requester=self.core_id)
                self._mem_dest = None
            self._retire(now, cpi)
            self.state = CoreState.WAITING_MEMORY
            return [Send(msg)]

        if op == "LI":
            regs[ins.rd] = ins.imm
        elif op == "MOV":
            regs[ins.rd] = regs[ins.rs]
        elif op == "ADD":
            regs[ins.rd] = regs[ins.rs] + regs[ins.rt]
        elif op == "SUB":
            regs[ins.rd] = regs[ins.rs] - regs[ins.rt]
        elif op == "MUL":
            regs[ins.rd] = regs[ins.rs] * regs[ins.rt]
        elif op in ("BEQ", "BNE", "BLT", "JMP"):
            a, b = regs[ins.rs or 0], regs[ins.rt or 0]
            taken = (
                op == "JMP"
                or (op == "BEQ" and a == b)
                or (op == "BNE" and a != b)
                or (op == "BLT" and a < b)
            )
            if taken:
                self._retire(now, cpi)
                self.ip = ins.target
                return [Next(now + cpi)]
        elif op == "NOP":
            pass
        else:
            raise IllegalInstruction(self.core_id, f"{op} is not executable here (line {ins.line})")
        return self._advance(now)

    def _retire(self, now: int, cycles: int) -> None:
        self.active_cycles += cycles
        self.instructions += 1

    def _advance(self, now: int) -> list[Effect]:
        self._retire(now, self.cpi)
        self.ip += 1
        return [Next(now + self.cpi)]

    def _block(self, what: tuple[str, int]) -> list[Effect]:
        self._waiting = what
        self.state = CoreState.WAITING_LATCH
        return []

    def _raise_meta(self, ins: Instruction, now: int) -> list[Effect]:
        self.signals.meta = True
        self.state = CoreState.MORPHING
        # the decode cycle is already charged; morphing time starts after it
        self._mark = now + self.cpi
        return [Submit(ins, now + self.cpi)]

    # meta-instruction outcomes --------------------------------------------

    def complete_meta(self, now: int, handle: int | None = None) -> list[Effect]:
        """The processor finished this core's meta-instruction."""
        ins = self.current
        self._close_interval(now)
        self.signals.meta = False
        self.signals.wait = False
        self.state = CoreState.RUNNING
        if ins.op == "QCREATE" and handle is not None:
            self.regs[ins.rd] = handle
        self.ip += 1
        return [Next(now)]

    def wait_for_resource(self, now: int) -> None:
        """No core available: park with the Wait signal up."""
        self._close_interval(now)
        self.signals.wait = True
        self.state = CoreState.WAITING_WAIT

    def resource_granted(self, now: int) -> None:
        self.signals.wait = False
        self.state = CoreState.MORPHING
        self._mark = now

    def exec_qclone(self, mask: int, now: int) -> list[Effect]:
        """Copy latched values named by ``mask`` into registers.

        Blocks in WaitingLatch until every named latch is valid.
        """
        if not self.latches.ready(mask):
            return self._block(("mask", mask))
        for reg, value in self.latches.take(mask):
            self.regs[reg] = value
        return self._advance(now)

    def add_child(self, qt_id: int, core: int, guarded: bool = False) -> None:
        self.children[qt_id] = ChildRecord(qt_id, core, guarded=guarded)
        self.outstanding += 1

    def on_child_result(self, msg: Message, now: int) -> tuple[list[Effect], list[int]]:
        """Latch a child's returned registers without touching the register file.

        Returns the effects plus any latch slots that another child's value
        overwrote.
        """
        child = self.children.get(msg.qt_id)
        if child is None or child.returned:
            raise UnknownChild(self.core_id, f"result from unexpected QT {msg.qt_id}")
        clobbered = self.latches.write(msg.qt_id, msg.values)
        if clobbered:
            log.warning("core %d: latches %s overwritten by QT %d", self.core_id, clobbered, msg.qt_id)
        child.returned = True
        self.outstanding -= 1
        effects: list[Effect] = []
        if self.state is CoreState.WAITING_LATCH:
            kind, what = self._waiting
            if (kind == "child" and what == msg.qt_id) or (kind == "mask" and self.latches.ready(what)):
                self._waiting = None
                self.state = CoreState.RUNNING
                effects.append(Next(now))
        elif self.ending and self.outstanding == 0:
            self._close_interval(now)
            effects.append(Next(now))
        return effects, clobbered

    def on_memory_reply(self, msg: Message, now: int) -> list[Effect]:
        if self.state is not CoreState.WAITING_MEMORY:
            raise CoreError(self.core_id, f"memory reply while {self.state.value}")
        if msg.kind is MessageKind.MEMORY_READ_REPLY and self._mem_dest is not None:
            self.regs[self._mem_dest] = msg.word
        self._mem_dest = None
        self.state = CoreState.RUNNING
        self.ip += 1
        return [Next(now)]

    def blocked_on(self) -> str:
        if self.state is CoreState.WAITING_LATCH and self._waiting:
            kind, what = self._waiting
            return f"child QT {what}" if kind == "child" else f"latches {mask_registers(what)}"
        if self.ending:
            return f"{self.outstanding} outstanding children"
        if self.state is CoreState.WAITING_WAIT:
            return "a free core or guard"
        return self.state.value


class Esme:
    """Storage-management element of a cluster head.

    Memory requests from members transit the head; the ESME forwards them to
    global memory and hands each reply back to the member that asked.
    """

    def __init__(self, head: int):
        self.head = head
        self._pending: dict[int, int] = {}

    def __len__(self) -> int:
        return len(self._pending)

    def intercept(self, msg: Message) -> Message:
        if msg.kind.is_request:
            self._pending[msg.seq] = msg.requester if msg.requester is not None else msg.src
            return msg
        requester = self._pending.pop(msg.seq)
        if requester != msg.dst:
            raise CoreError(self.head, f"reply {msg.seq} addressed to {msg.dst}, owed to {requester}")
        return msg


def esme_intercept(esme: Esme, msg: Message) -> Message:
    return esme.intercept(msg)
