"""Bundled assembly workloads.

Each ``.s`` file may declare parameters as ``; param NAME=default`` comment
lines; ``$NAME`` in the body is replaced by the chosen value.
"""

from __future__ import annotations

import re
from importlib import resources

from ..isa import Program, assemble

CONVENTIONAL = ("sum_loop", "memcopy", "gcd", "factorial")
CORPUS = CONVENTIONAL + ("fib", "spawn_tree", "mutex_counter", "subroutine")

_PARAM = re.compile(r"^;\s*param\s+([A-Z_][A-Z0-9_]*)\s*=\s*(-?\d+)\s*$", re.M)


def names() -> list[str]:
    return sorted(p.name[:-2] for p in resources.files(__name__).iterdir() if p.name.endswith(".s"))


def raw(name: str) -> str:
    path = resources.files(__name__) / f"{name}.s"
    if not path.is_file():
        raise KeyError(f"no bundled workload named {name!r}; have {', '.join(names())}")
    return path.read_text()


def parameters(name: str) -> dict[str, int]:
    return {k: int(v) for k, v in _PARAM.findall(raw(name))}


def source(name: str, **params: int) -> str:
    text = raw(name)
    values = parameters(name)
    unknown = set(params) - set(values)
    if unknown:
        raise KeyError(f"workload {name!r} has no parameter(s) {', '.join(sorted(unknown))}")
    values.update(params)
    # longest names first so $NN is not clobbered by $N
    for key in sorted(values, key=len, reverse=True):
        text = text.replace(f"${key}", str(int(values[key])))
    return text


def load(name: str, **params: int) -> Program:
    return assemble(source(name, **params))
