import pytest
from hypothesis import given
from hypothesis import strategies as st

from empasim.isa import Instruction
from empasim.processor import (
    ADMITTED,
    QUEUED,
    ChildHasLiveChildren,
    CorePool,
    FamilyTree,
    GuardRegistry,
    MetaFifo,
    Priority,
    ProcessorError,
    UnknownGuard,
    Waiter,
    guard_enter,
    priority_of,
)
from empasim.topology import GridConfig, build_clusters, hex_distance

CREATE = Instruction("QCREATE", rd=1, label="f")
END = Instruction("QEND")
GUARD = Instruction("QGUARD", label="g")


def test_priority_classes():
    assert priority_of("QEND") is Priority.TERMINATE
    assert priority_of("HALT") is Priority.TERMINATE
    assert priority_of("QCREATE") is Priority.CREATE
    assert priority_of("QCALLG") is Priority.OTHER


def test_terminate_dispatched_before_earlier_create():
    f = MetaFifo()
    f.push(1, CREATE, 0)
    f.push(2, END, 0)
    assert f.pop().core == 2
    assert f.pop().core == 1
    assert len(f) == 0


def test_creates_in_arrival_order():
    f = MetaFifo()
    for core in (7, 3, 5):
        f.push(core, CREATE, 0)
    assert [f.pop().core for _ in range(3)] == [7, 3, 5]


@given(st.lists(st.sampled_from(["QEND", "QCREATE", "QGUARD", "QCALLG"]), max_size=30))
def test_fifo_order_is_priority_then_arrival(ops):
    f = MetaFifo()
    for i, op in enumerate(ops):
        f.push(i, Instruction(op, label="x"), 0)
    out = [f.pop() for _ in range(len(ops))]
    keys = [(e.priority, e.seq) for e in out]
    assert keys == sorted(keys)
    assert [e.seq for e in out if e.priority is Priority.CREATE] == sorted(
        e.seq for e in out if e.priority is Priority.CREATE
    )


@given(st.sets(st.integers(0, 63), min_size=1), st.integers(0, 63))
def test_pool_selects_nearest_then_lowest_id(free, near):
    cl = build_clusters(GridConfig(8, 8))
    pool = CorePool(range(64))
    pool.free = set(free)
    chosen = pool.select(near, cl)
    best = min(free, key=lambda c: (hex_distance(near, c, cl.grid), c))
    assert chosen == best


def test_pool_excludes_denied_and_rejects_double_put():
    pool = CorePool(range(4), denied={2})
    assert 2 not in pool and len(pool) == 3
    with pytest.raises(ProcessorError):
        pool.put(2)
    with pytest.raises(ProcessorError):
        pool.put(1)
    assert CorePool(range(4)).select(0, build_clusters(GridConfig(2, 2)), lambda c: False) is None


def test_family_tree_soundness():
    t = FamilyTree()
    t.add_root(0)
    t.add(0, 1)
    t.add(1, 2)
    assert t.outstanding(0) == 1 and t.ancestors(2) == [1, 0]
    with pytest.raises(ProcessorError):
        t.add(0, 2)
    with pytest.raises(ChildHasLiveChildren):
        t.remove(1)
    t.remove(2)
    t.remove(1)
    assert t.outstanding(0) == 0 and len(t) == 1


def test_guard_admits_one_and_serves_fifo():
    reg = GuardRegistry()
    reg.register("g", core=9, owner_qt=0)
    ws = [Waiter(c, Instruction("QCALLG", label="g"), 0, 0) for c in (1, 2, 3)]
    assert reg.enter("g", ws[0]) is ADMITTED
    assert reg.enter("g", ws[1]) is QUEUED
    assert reg.enter("g", ws[2]) is QUEUED
    assert reg.get("g").busy == 1
    assert reg.leave("g").core == 2
    assert reg.leave("g").core == 3
    assert reg.leave("g") is None
    assert reg.get("g").idle and reg.get("g").served == 3


def test_unknown_guard():
    with pytest.raises(UnknownGuard):
        guard_enter(1, "missing", GuardRegistry())
    reg = GuardRegistry()
    reg.register("g", 3, 0)
    assert guard_enter(1, "g", reg) is ADMITTED
    with pytest.raises(ProcessorError):
        reg.register("g", 4, 0)
    assert [g.label for g in reg.owned_by(0)] == ["g"]
    reg.remove("g")
    assert "g" not in reg
