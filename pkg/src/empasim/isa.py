"""Instruction set, two-pass assembler and disassembler.

The conventional layer is a small load/store machine over 64-bit signed
words.  The meta layer brackets code fragments into quasi-threads::

    QCREATE rd, frag, {in}, {ret}   hire a core to run ``frag``
    QWAIT   rs                      block until the child named by rs returned
    QCLONE  {mask}                  copy latched child results into registers
    QEND                            terminate the running fragment
    QGUARD  frag                    delegate a core to guard ``frag``
    QCALLG  frag, {in}, {ret}       conditional call into a guarded fragment

``CALL label, {mask}`` / ``RET`` only appear in programs lowered for the
single-processor baseline (see :func:`lower_for_baseline`).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator

NUM_REGISTERS = 16
WORD_BITS = 64

CONVENTIONAL = frozenset(
    {"LI", "MOV", "ADD", "SUB", "MUL", "LD", "ST", "BEQ", "BNE", "BLT", "JMP", "HALT", "NOP"}
)
META = frozenset({"QCREATE", "QWAIT", "QCLONE", "QEND", "QGUARD", "QCALLG"})
BASELINE_ONLY = frozenset({"CALL", "RET"})
MNEMONICS = CONVENTIONAL | META | BASELINE_ONLY

BRANCHES = frozenset({"BEQ", "BNE", "BLT", "JMP"})
FRAGMENT_REFS = frozenset({"QCREATE", "QGUARD", "QCALLG", "CALL"})
TERMINATORS = frozenset({"QEND", "HALT", "RET"})


def wrap(value: int) -> int:
    """Reduce ``value`` to a signed 64-bit word."""
    value &= (1 << WORD_BITS) - 1
    if value >> (WORD_BITS - 1):
        value -= 1 << WORD_BITS
    return value


def mask_registers(mask: int) -> list[int]:
    """Indices of the hot bits of ``mask`` in ascending order."""
    return [i for i in range(mask.bit_length()) if mask >> i & 1]


def registers_mask(regs: Iterable[int]) -> int:
    mask = 0
    for r in regs:
        mask |= 1 << r
    return mask


def format_mask(mask: int) -> str:
    return "{" + ",".join(f"r{i}" for i in mask_registers(mask)) + "}"


@dataclass(frozen=True)
class Instruction:
    op: str
    rd: int | None = None
    rs: int | None = None
    rt: int | None = None
    imm: int | None = None
    label: str | None = None
    target: int | None = None
    in_mask: int = 0
    ret_mask: int = 0
    mask: int = 0
    line: int = field(default=0, compare=False)

    @property
    def is_meta(self) -> bool:
        return self.op in META

    def reads(self) -> set[int]:
        """Registers this instruction reads."""
        op = self.op
        if op in ("MOV", "LD"):
            return {self.rs}
        if op in ("ADD", "SUB", "MUL", "BEQ", "BNE", "BLT"):
            return {self.rs, self.rt}
        if op == "ST":
            return {self.rs, self.rt}
        if op == "QWAIT":
            return {self.rs}
        if op in ("QCREATE", "QCALLG"):
            return set(mask_registers(self.in_mask))
        return set()

    def writes(self) -> set[int]:
        """Registers this instruction writes (meta writes excluded)."""
        if self.op in ("LI", "MOV", "ADD", "SUB", "MUL", "LD"):
            return {self.rd}
        if self.op == "QCREATE":
            return {self.rd}
        if self.op == "QCLONE":
            return set(mask_registers(self.mask))
        return set()

    def render(self) -> str:
        op = self.op
        if op == "LI":
            return f"LI r{self.rd}, {self.imm}"
        if op == "MOV":
            return f"MOV r{self.rd}, r{self.rs}"
        if op in ("ADD", "SUB", "MUL"):
            return f"{op} r{self.rd}, r{self.rs}, r{self.rt}"
        if op == "LD":
            return f"LD r{self.rd}, [r{self.rs}{_offset(self.imm)}]"
        if op == "ST":
            return f"ST [r{self.rs}{_offset(self.imm)}], r{self.rt}"
        if op in ("BEQ", "BNE", "BLT"):
            return f"{op} r{self.rs}, r{self.rt}, {self.label}"
        if op in ("JMP", "QGUARD"):
            return f"{op} {self.label}"
        if op == "QCREATE":
            return (
                f"QCREATE r{self.rd}, {self.label}, "
                f"{format_mask(self.in_mask)}, {format_mask(self.ret_mask)}"
            )
        if op == "QCALLG":
            return f"QCALLG {self.label}, {format_mask(self.in_mask)}, {format_mask(self.ret_mask)}"
        if op == "QWAIT":
            return f"QWAIT r{self.rs}"
        if op == "QCLONE":
            return f"QCLONE {format_mask(self.mask)}"
        if op == "CALL":
            return f"CALL {self.label}, {format_mask(self.mask)}"
        return op


def _offset(imm: int | None) -> str:
    imm = imm or 0
    if imm == 0:
        return ""
    return f"+{imm}" if imm > 0 else f"-{-imm}"


@dataclass(frozen=True)
class Fragment:
    name: str
    instructions: tuple[Instruction, ...]
    labels: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.instructions)

    def __iter__(self) -> Iterator[Instruction]:
        return iter(self.instructions)

    def __hash__(self) -> int:
        return hash((self.name, self.instructions))


@dataclass(frozen=True)
class Program:
    fragments: tuple[Fragment, ...]
    entry: str = "main"
    num_registers: int = NUM_REGISTERS

    def __post_init__(self) -> None:
        object.__setattr__(self, "_by_name", {f.name: f for f in self.fragments})

    def fragment(self, name: str) -> Fragment:
        return self._by_name[name]

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    @property
    def symbols(self) -> dict[str, tuple[str, int]]:
        """Label -> (fragment, offset).  Local labels are qualified by fragment."""
        table: dict[str, tuple[str, int]] = {}
        for frag in self.fragments:
            table[frag.name] = (frag.name, 0)
            for label, offset in frag.labels.items():
                table[f"{frag.name}{label}"] = (frag.name, offset)
        return table

    @property
    def has_meta(self) -> bool:
        return any(ins.is_meta for frag in self.fragments for ins in frag)

    def instructions(self) -> Iterator[tuple[Fragment, int, Instruction]]:
        for frag in self.fragments:
            for i, ins in enumerate(frag.instructions):
                yield frag, i, ins


@dataclass(frozen=True)
class Diagnostic:
    code: str
    line: int
    message: str

    def __str__(self) -> str:
        where = f"line {self.line}" if self.line else "program"
        return f"{where}: {self.code}: {self.message}"


class AssemblyError(Exception):
    """Raised by :func:`assemble` with every diagnostic it collected."""

    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("\n".join(str(d) for d in diagnostics))


_FRAGMENT_RE = re.compile(r"^([A-Za-z_][\w]*):\s*(.*)$")
_LOCAL_RE = re.compile(r"^(\.[A-Za-z_][\w]*):\s*(.*)$")
_REG_RE = re.compile(r"^[rR](\d+)$")
_MEM_RE = re.compile(r"^\[\s*([rR]\d+)\s*(?:([+-])\s*(\w+))?\s*\]$")
_LABEL_RE = re.compile(r"^\.?[A-Za-z_][\w]*$")

_SHAPES = {
    "LI": ("reg", "imm"),
    "MOV": ("reg", "reg"),
    "ADD": ("reg", "reg", "reg"),
    "SUB": ("reg", "reg", "reg"),
    "MUL": ("reg", "reg", "reg"),
    "LD": ("reg", "mem"),
    "ST": ("mem", "reg"),
    "BEQ": ("reg", "reg", "label"),
    "BNE": ("reg", "reg", "label"),
    "BLT": ("reg", "reg", "label"),
    "JMP": ("label",),
    "HALT": (),
    "NOP": (),
    "RET": (),
    "QEND": (),
    "CALL": ("label", "mask"),
    "QCREATE": ("reg", "label", "mask", "mask"),
    "QWAIT": ("reg",),
    "QCLONE": ("mask",),
    "QGUARD": ("label",),
    "QCALLG": ("label", "mask", "mask"),
}


class _OperandError(Exception):
    def __init__(self, code: str, message: str):
        self.code = code
        self.message = message


def _split_operands(text: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch in "{[":
            depth += 1
        elif ch in "}]":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    tail = "".join(cur).strip()
    if tail or parts:
        parts.append(tail)
    return parts


def _parse_int(text: str) -> int:
    try:
        return int(text, 0)
    except ValueError:
        raise _OperandError("BadOperand", f"not an integer: {text!r}") from None


def _parse_reg(text: str, nregs: int) -> int:
    m = _REG_RE.match(text.strip())
    if not m:
        raise _OperandError("BadOperand", f"expected register, got {text!r}")
    idx = int(m.group(1))
    if idx >= nregs:
        raise _OperandError("RegisterOutOfRange", f"r{idx} outside r0..r{nregs - 1}")
    return idx


def _parse_mask(text: str, nregs: int) -> int:
    text = text.strip()
    if not (text.startswith("{") and text.endswith("}")):
        raise _OperandError("BadOperand", f"expected register mask, got {text!r}")
    body = text[1:-1].strip()
    if not body:
        return 0
    return registers_mask(_parse_reg(part, nregs) for part in body.split(","))


def _parse_instruction(mnemonic: str, operands: str, line: int, nregs: int) -> Instruction:
    shape = _SHAPES[mnemonic]
    args = _split_operands(operands)
    if len(args) != len(shape):
        raise _OperandError(
            "BadOperand", f"{mnemonic} takes {len(shape)} operand(s), got {len(args)}"
        )
    regs: list[int] = []
    masks: list[int] = []
    imm = None
    label = None
    mem: tuple[int, int] | None = None
    for kind, arg in zip(shape, args):
        if kind == "reg":
            regs.append(_parse_reg(arg, nregs))
        elif kind == "imm":
            imm = _parse_int(arg)
        elif kind == "mask":
            masks.append(_parse_mask(arg, nregs))
        elif kind == "label":
            if not _LABEL_RE.match(arg):
                raise _OperandError("BadOperand", f"bad label {arg!r}")
            label = arg
        else:
            m = _MEM_RE.match(arg)
            if not m:
                raise _OperandError("BadOperand", f"expected [rN+imm], got {arg!r}")
            base = _parse_reg(m.group(1), nregs)
            off = _parse_int(m.group(3)) if m.group(3) else 0
            mem = (base, -off if m.group(2) == "-" else off)

    kw: dict = {"op": mnemonic, "line": line, "label": label}
    if mnemonic == "LI":
        kw.update(rd=regs[0], imm=imm)
    elif mnemonic == "MOV":
        kw.update(rd=regs[0], rs=regs[1])
    elif mnemonic in ("ADD", "SUB", "MUL"):
        kw.update(rd=regs[0], rs=regs[1], rt=regs[2])
    elif mnemonic == "LD":
        kw.update(rd=regs[0], rs=mem[0], imm=mem[1])
    elif mnemonic == "ST":
        kw.update(rs=mem[0], imm=mem[1], rt=regs[0])
    elif mnemonic in ("BEQ", "BNE", "BLT"):
        kw.update(rs=regs[0], rt=regs[1])
    elif mnemonic == "QCREATE":
        kw.update(rd=regs[0], in_mask=masks[0], ret_mask=masks[1])
    elif mnemonic == "QCALLG":
        kw.update(in_mask=masks[0], ret_mask=masks[1])
    elif mnemonic == "QWAIT":
        kw.update(rs=regs[0])
    elif mnemonic in ("QCLONE", "CALL"):
        kw.update(mask=masks[0])
    return Instruction(**kw)


def assemble(source: str, num_registers: int = NUM_REGISTERS) -> Program:
    """Assemble ``source`` into a :class:`Program`.

    Pass one splits the text into fragments and records label offsets;
    pass two resolves branch targets and runs :func:`validate`.  All
    problems found are raised together as an :class:`AssemblyError`.
    """
    diags: list[Diagnostic] = []
    frags: list[tuple[str, int, list[Instruction], dict[str, int]]] = []
    current: tuple[str, int, list[Instruction], dict[str, int]] | None = None

    def open_fragment(name: str, line: int):
        nonlocal current
        current = (name, line, [], {})
        frags.append(current)

    for lineno, raw in enumerate(source.splitlines(), start=1):
        text = raw.split(";", 1)[0].rstrip()
        if not text.strip():
            continue
        if not text[0].isspace():
            m = _FRAGMENT_RE.match(text)
            if m and not text.startswith("."):
                name = m.group(1)
                if any(f[0] == name for f in frags):
                    diags.append(Diagnostic("DuplicateLabel", lineno, f"fragment {name!r} redefined"))
                open_fragment(name, lineno)
                text = m.group(2)
                if not text.strip():
                    continue
        text = text.strip()
        m = _LOCAL_RE.match(text)
        if m:
            if current is None:
                open_fragment("main", lineno)
            label = m.group(1)
            if label in current[3]:
                diags.append(Diagnostic("DuplicateLabel", lineno, f"label {label!r} redefined"))
            current[3][label] = len(current[2])
            text = m.group(2).strip()
            if not text:
                continue
        mnemonic, _, operands = text.partition(" ")
        mnemonic = mnemonic.upper()
        if mnemonic not in MNEMONICS:
            diags.append(Diagnostic("UnknownMnemonic", lineno, f"unknown mnemonic {mnemonic!r}"))
            continue
        if current is None:
            open_fragment("main", lineno)
        try:
            current[2].append(_parse_instruction(mnemonic, operands, lineno, num_registers))
        except _OperandError as exc:
            diags.append(Diagnostic(exc.code, lineno, exc.message))

    fragments = []
    names = {f[0] for f in frags}
    for name, line, body, labels in frags:
        resolved = []
        for ins in body:
            if ins.op in BRANCHES:
                if ins.label not in labels:
                    detail = (
                        f"{ins.label!r} is a fragment, not a local label"
                        if ins.label in names
                        else f"undefined label {ins.label!r}"
                    )
                    diags.append(Diagnostic("UndefinedLabel", ins.line, detail))
                else:
                    ins = replace(ins, target=labels[ins.label])
            resolved.append(ins)
        fragments.append(Fragment(name, tuple(resolved), dict(labels)))

    entry = "main" if "main" in names else (frags[0][0] if frags else "main")
    program = Program(tuple(fragments), entry, num_registers)
    if not diags:
        diags.extend(validate(program, _lines={f[0]: f[1] for f in frags}))
    if diags:
        raise AssemblyError(sorted(diags, key=lambda d: d.line))
    return program


def validate(program: Program, _lines: dict[str, int] | None = None) -> list[Diagnostic]:
    """Check structural invariants; an empty list means the program is sound."""
    diags: list[Diagnostic] = []
    lines = _lines or {}
    nregs = program.num_registers
    names = [f.name for f in program.fragments]
    if not program.fragments:
        return [Diagnostic("EmptyProgram", 0, "program has no fragments")]
    if program.entry not in names:
        diags.append(Diagnostic("MissingEntry", 0, f"entry fragment {program.entry!r} not defined"))
    if len(set(names)) != len(names):
        diags.append(Diagnostic("DuplicateLabel", 0, "fragment names are not unique"))

    for frag in program.fragments:
        root = frag.name == program.entry
        head_line = lines.get(frag.name, frag.instructions[0].line if frag.instructions else 0)
        if not frag.instructions:
            diags.append(Diagnostic("EmptyFragment", head_line, f"fragment {frag.name!r} is empty"))
            continue
        before = len(diags)
        for ins in frag:
            for reg in (ins.rd, ins.rs, ins.rt):
                if reg is not None and not 0 <= reg < nregs:
                    diags.append(Diagnostic("RegisterOutOfRange", ins.line, f"r{reg} in {ins.op}"))
            for m in (ins.in_mask, ins.ret_mask, ins.mask):
                if m >> nregs:
                    diags.append(Diagnostic("RegisterOutOfRange", ins.line, f"mask {m:#x} exceeds r{nregs - 1}"))
            if ins.op in FRAGMENT_REFS and ins.label not in program:
                diags.append(Diagnostic("UndefinedLabel", ins.line, f"no fragment named {ins.label!r}"))
            if ins.op in BRANCHES and (ins.target is None or not 0 <= ins.target <= len(frag)):
                diags.append(Diagnostic("UndefinedLabel", ins.line, f"unresolved target {ins.label!r}"))
            if ins.op == "HALT" and not root:
                diags.append(Diagnostic("HaltOutsideRoot", ins.line, f"HALT in QT fragment {frag.name!r}"))
        if len(diags) > before:
            continue
        if _falls_off(frag):
            line = frag.instructions[-1].line
            diags.append(
                Diagnostic("MissingQEND", line, f"fragment {frag.name!r} can run past its end without QEND")
            )
    return diags


def _falls_off(frag: Fragment) -> bool:
    """True if some control path leaves the fragment without a terminator."""
    seen: set[int] = set()
    stack = [0]
    n = len(frag)
    while stack:
        pc = stack.pop()
        if pc in seen:
            continue
        if pc >= n:
            return True
        seen.add(pc)
        ins = frag.instructions[pc]
        if ins.op in TERMINATORS:
            continue
        if ins.op == "JMP":
            stack.append(ins.target)
        elif ins.op in BRANCHES:
            stack.extend((ins.target, pc + 1))
        else:
            stack.append(pc + 1)
    return False


def disassemble(program: Program) -> str:
    """Render ``program`` back to assembly text that re-assembles identically."""
    out: list[str] = []
    ordered = sorted(program.fragments, key=lambda f: f.name != program.entry)
    for frag in ordered:
        out.append(f"{frag.name}:")
        by_offset: dict[int, list[str]] = {}
        for label, off in frag.labels.items():
            by_offset.setdefault(off, []).append(label)
        for i, ins in enumerate(frag.instructions):
            for label in sorted(by_offset.get(i, ())):
                out.append(f"{label}:")
            out.append(f"    {ins.render()}")
        for label in sorted(by_offset.get(len(frag), ())):
            out.append(f"{label}:")
    return "\n".join(out) + "\n"


def lower_for_baseline(program: Program) -> Program:
    """Rewrite meta-instructions into stack-based CALL/RET for the SPA baseline.

    ``QCREATE``/``QCALLG`` become ``CALL`` whose save mask holds every
    register the callee writes apart from the ones it hands back; ``QWAIT``,
    ``QCLONE`` and ``QGUARD`` become ``NOP`` so offsets stay put; ``QEND``
    becomes ``RET`` (``HALT`` in the entry fragment).  Handles are not
    written.  Equivalence with the quasi-thread run assumes the parent leaves
    returned registers alone between create and clone and the child reads
    only registers it was sent.
    """
    written = {frag.name: _written_after_lowering(frag) for frag in program.fragments}
    lowered = []
    for frag in program.fragments:
        root = frag.name == program.entry
        body = []
        for ins in frag:
            if ins.op in ("QCREATE", "QCALLG"):
                save = written[ins.label] & ~ins.ret_mask & ~1
                ins = Instruction("CALL", label=ins.label, mask=save, line=ins.line)
            elif ins.op in ("QWAIT", "QCLONE", "QGUARD"):
                ins = Instruction("NOP", line=ins.line)
            elif ins.op == "QEND":
                ins = Instruction("HALT" if root else "RET", line=ins.line)
            body.append(ins)
        lowered.append(Fragment(frag.name, tuple(body), dict(frag.labels)))
    return Program(tuple(lowered), program.entry, program.num_registers)


def _written_after_lowering(frag: Fragment) -> int:
    regs: set[int] = set()
    for ins in frag:
        if ins.op == "QCREATE":
            # the handle write disappears; returned values land via the call
            regs.update(mask_registers(ins.ret_mask))
        elif ins.op == "QCALLG":
            regs.update(mask_registers(ins.ret_mask))
        elif ins.op == "QCLONE":
            continue
        else:
            regs.update(ins.writes())
    regs.discard(0)
    return registers_mask(regs)
