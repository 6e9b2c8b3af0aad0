"""Shared oracles and generators for the test suite.

Nothing here imports the simulator's topology or routing code; the oracles
recompute geometry from first principles so they can check it.
"""

from __future__ import annotations

import random

import networkx as nx

# ---------------------------------------------------------------------------
# geometry oracle: odd-q style layout, columns with odd x sit half a cell lower


def offset_neighbors(x: int, y: int, w: int, h: int) -> set[tuple[int, int]]:
    if x % 2 == 0:
        cand = [(x, y - 1), (x, y + 1), (x - 1, y - 1), (x - 1, y), (x + 1, y - 1), (x + 1, y)]
    else:
        cand = [(x, y - 1), (x, y + 1), (x - 1, y), (x - 1, y + 1), (x + 1, y), (x + 1, y + 1)]
    return {(a, b) for a, b in cand if 0 <= a < w and 0 <= b < h}


def hex_graph(w: int, h: int) -> nx.Graph:
    g = nx.Graph()
    g.add_nodes_from(range(w * h))
    for y in range(h):
        for x in range(w):
            for a, b in offset_neighbors(x, y, w, h):
                g.add_edge(y * w + x, b * w + a)
    return g


def axial(core: int, w: int) -> tuple[int, int]:
    x, y = core % w, core // w
    return x, y - (x - (x & 1)) // 2


def is_head_cell(q: int, r: int) -> bool:
    return (q + 3 * r) % 7 == 0


def routing_graph(w: int, h: int, heads_of: dict[int, int | None], denied=frozenset()) -> nx.Graph:
    """Hex adjacency plus a bus between heads of clusters that touch."""
    g = hex_graph(w, h)
    for a, b in list(g.edges):
        ha, hb = heads_of[a], heads_of[b]
        if ha is not None and hb is not None and ha != hb and ha not in denied and hb not in denied:
            g.add_edge(ha, hb)
    return g


# ---------------------------------------------------------------------------
# random conventional programs

_DATA_REGS = list(range(1, 13))  # r13 base pointer, r14 = 1, r15 loop counter


def random_program(seed: int, length: int = 30) -> str:
    """A terminating conventional-only program with branches, loops and memory traffic."""
    rnd = random.Random(seed)
    lines = ["main:", "    LI r14,1", f"    LI r13,{rnd.randrange(0, 64)}"]
    for r in rnd.sample(_DATA_REGS, 4):
        lines.append(f"    LI r{r},{rnd.randrange(-1000, 1000)}")
    label = 0
    emitted = 0
    open_loop = None
    pending_fwd: list[tuple[str, int]] = []

    def reg() -> str:
        return f"r{rnd.choice(_DATA_REGS + [0])}"

    def dst() -> str:
        return f"r{rnd.choice(_DATA_REGS)}"

    while emitted < length:
        kind = rnd.random()
        for name, due in list(pending_fwd):
            if due <= emitted:
                lines.append(f".{name}:")
                pending_fwd.remove((name, due))
        if kind < 0.35:
            op = rnd.choice(["ADD", "SUB", "MUL"])
            lines.append(f"    {op} {dst()},{reg()},{reg()}")
        elif kind < 0.45:
            lines.append(f"    LI {dst()},{rnd.randrange(-(2**40), 2**40)}")
        elif kind < 0.52:
            lines.append(f"    MOV {dst()},{reg()}")
        elif kind < 0.62:
            base = rnd.choice(["r0", "r13"])
            lines.append(f"    ST [{base}+{rnd.randrange(0, 64)}],{reg()}")
        elif kind < 0.72:
            base = rnd.choice(["r0", "r13"])
            lines.append(f"    LD {dst()},[{base}+{rnd.randrange(0, 64)}]")
        elif kind < 0.84:
            label += 1
            name = f"Lf{label}"
            op = rnd.choice(["BEQ", "BNE", "BLT"])
            lines.append(f"    {op} {reg()},{reg()},.{name}")
            pending_fwd.append((name, emitted + rnd.randrange(1, 6)))
        elif kind < 0.9 and open_loop is None:
            # never let an outside branch land inside the loop body
            lines.extend(f".{name}:" for name, _ in pending_fwd)
            pending_fwd.clear()
            label += 1
            open_loop = (f"Ll{label}", emitted + rnd.randrange(2, 6))
            lines.append(f"    LI r15,{rnd.randrange(1, 5)}")
            lines.append(f".{open_loop[0]}:")
        else:
            lines.append("    NOP")
        emitted += 1
        if open_loop is not None and emitted >= open_loop[1]:
            lines.append("    SUB r15,r15,r14")
            lines.append(f"    BNE r15,r0,.{open_loop[0]}")
            open_loop = None
    if open_loop is not None:
        lines.append("    SUB r15,r15,r14")
        lines.append(f"    BNE r15,r0,.{open_loop[0]}")
    for name, _ in pending_fwd:
        lines.append(f".{name}:")
    lines.append("    HALT")
    return "\n".join(lines) + "\n"


def loop_free_body(rnd: random.Random, n: int, regs: list[int]) -> list[str]:
    """Straight-line arithmetic over ``regs`` only."""
    out = []
    for _ in range(n):
        op = rnd.choice(["ADD", "SUB", "MUL", "LI"])
        d = rnd.choice(regs)
        if op == "LI":
            out.append(f"    LI r{d},{rnd.randrange(-50, 50)}")
        else:
            out.append(f"    {op} r{d},r{rnd.choice(regs)},r{rnd.choice(regs)}")
    return out
