"""Single-core reference machine with a memory-resident call stack.

Meta-instructions are lowered to ``CALL``/``RET`` first.  ``CALL`` pushes
the registers named by its mask and then the return address; ``RET`` pops
the return address, looks up the mask of the ``CALL`` it returns to, and
restores those registers.  Every push and pop is a main-memory access.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import RegisterFile
from .engine import (
    CycleCapExceeded,
    EventLog,
    FinalState,
    GlobalMemory,
    Metrics,
    RunResult,
    SimConfig,
    SimulationError,
    _check_program,
    _root_core,
)
from .isa import Fragment, Program, lower_for_baseline, mask_registers
from .messaging import GLOBAL_MEMORY, Router
from .topology import build_clusters


class StackOverflow(SimulationError):
    pass


@dataclass
class SpaBaselineState:
    regs: RegisterFile
    fragment: Fragment
    ip: int = 0
    sp: int = 0
    depth: int = 0


def _encode_return(frag_index: int, ip: int) -> int:
    return frag_index << 32 | ip


def _decode_return(word: int) -> tuple[int, int]:
    return word >> 32, word & 0xFFFFFFFF


class SpaMachine:
    def __init__(self, program: Program, config: SimConfig | None = None):
        if program.has_meta:
            program = lower_for_baseline(program)
        _check_program(program)
        self.program = program
        self.config = cfg = config or SimConfig()
        self.t = cfg.timing
        clustering = build_clusters(cfg.grid)
        self.core_id = _root_core(clustering, cfg.denied_cores)
        hops = Router(clustering, cfg.denied_cores).route(self.core_id, GLOBAL_MEMORY).hops
        self.hops = hops
        self.mem_cost = 2 * hops * self.t.hop_cost + self.t.memory_latency
        self.memory = GlobalMemory(cfg.memory_size)
        self.events = EventLog()
        self.metrics = Metrics()
        self._index = {f.name: i for i, f in enumerate(program.fragments)}
        self.state = SpaBaselineState(
            RegisterFile(program.num_registers), program.fragment(program.entry), sp=cfg.memory_size
        )
        self.now = 0
        self.active = 0

    def _access(self, kind: str, address: int, value: int | None = None, call: bool = False) -> int:
        m = self.metrics
        m.memory_ops += 1
        m.messages += 2
        m.hops += 2 * self.hops
        if call:
            m.call_memory_ops += 1
        self.events.add(self.now, "memory", self.core_id, None, op=kind, address=address, call=call)
        self.now += self.mem_cost
        if kind == "read":
            return self.memory.read(address)
        self.memory.write(address, value)
        return 0

    def _push(self, value: int) -> None:
        st = self.state
        if st.sp - 1 < self.config.stack_base:
            raise StackOverflow(f"call stack exhausted at depth {st.depth}")
        st.sp -= 1
        self._access("write", st.sp, value, call=True)

    def _pop(self) -> int:
        st = self.state
        value = self._access("read", st.sp, call=True)
        st.sp += 1
        return value

    def run(self) -> RunResult:
        st = self.state
        regs = st.regs
        cpi = self.t.cycle_per_instr
        cap = self.config.cycle_cap
        m = self.metrics
        m.max_live_qts = 1
        while True:
            if self.now > cap:
                raise CycleCapExceeded(f"baseline passed the cycle cap of {cap}")
            ins = st.fragment.instructions[st.ip]
            op = ins.op
            self.active += cpi
            m.instructions += 1
            nxt = st.ip + 1
            if op == "HALT":
                self.now += cpi
                break
            if op == "CALL":
                start = self.now
                self.now += cpi
                for r in mask_registers(ins.mask):
                    self._push(regs[r])
                self._push(_encode_return(self._index[st.fragment.name], nxt))
                st.depth += 1
                m.qt_count += 1
                m.max_live_qts = max(m.max_live_qts, st.depth + 1)
                m.spawn_critical_path += self.now - start
                self.events.add(start, "call", self.core_id, None, fragment=ins.label,
                                saved=mask_registers(ins.mask), latency=self.now - start)
                st.fragment = self.program.fragment(ins.label)
                st.ip = 0
                continue
            if op == "RET":
                if st.depth == 0:
                    raise SimulationError("RET with an empty call stack")
                start = self.now
                self.now += cpi
                frag_index, ip = _decode_return(self._pop())
                caller = self.program.fragments[frag_index]
                call = caller.instructions[ip - 1]
                for r in reversed(mask_registers(call.mask)):
                    regs[r] = self._pop()
                st.depth -= 1
                self.events.add(start, "ret", self.core_id, None, fragment=caller.name,
                                restored=mask_registers(call.mask))
                st.fragment, st.ip = caller, ip
                continue
            if op == "LD":
                # the reply, not a decode cycle, bounds the issuing instruction
                regs[ins.rd] = self._access("read", regs[ins.rs] + ins.imm)
            elif op == "ST":
                self._access("write", regs[ins.rs] + ins.imm, regs[ins.rt])
            else:
                self.now += cpi
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
                elif op == "JMP":
                    nxt = ins.target
                elif op == "BEQ":
                    nxt = ins.target if regs[ins.rs] == regs[ins.rt] else nxt
                elif op == "BNE":
                    nxt = ins.target if regs[ins.rs] != regs[ins.rt] else nxt
                elif op == "BLT":
                    nxt = ins.target if regs[ins.rs] < regs[ins.rt] else nxt
                elif op != "NOP":
                    raise SimulationError(f"{op} cannot run on the baseline machine")
            st.ip = nxt
        m.makespan = self.now
        m.per_core = [self.active]
        m.energy = self.active
        final = FinalState(regs.snapshot(), self.memory.nonzero(self.config.stack_base))
        return RunResult(m, final, self.events)


def run_spa_baseline(program: Program, config: SimConfig | None = None) -> RunResult:
    """Run ``program`` on one core with stack-based calls."""
    return SpaMachine(program, config).run()
