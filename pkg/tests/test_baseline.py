import pytest

from empasim import workloads
from empasim.baseline import StackOverflow, run_spa_baseline
from empasim.engine import SimConfig, run
from empasim.isa import assemble


def leaf_call(k):
    regs = ",".join(f"r{i}" for i in range(1, k + 1))
    body = "".join(f"  LI r{i},{i}\n" for i in range(1, k + 1))
    return assemble(f"main:\n  CALL leaf,{{{regs}}}\n  HALT\nleaf:\n{body}  RET\n")


@pytest.mark.parametrize("k", [0, 1, 4, 7])
def test_leaf_call_costs_two_k_plus_one(k):
    m, final, events = run_spa_baseline(leaf_call(k))
    assert m.memory_ops == m.call_memory_ops == 2 * (k + 1)
    # registers restored to their pre-call zeros
    assert final.registers[1 : k + 1] == (0,) * k
    (call,) = events.of("call")
    assert call["detail"]["latency"] == 1 + (k + 1) * (2 * 3 + 100)


def test_cost_model_matches_engine_on_straight_line():
    prog = assemble("LI r1,2\nLI r2,3\nADD r3,r1,r2\nHALT\n")
    m, final, _ = run_spa_baseline(prog)
    assert m.makespan == 4 and final.registers[3] == 5


def test_fib_call_traffic():
    prog = workloads.load("fib", N=10)
    spa = run_spa_baseline(prog)
    empa = run(prog)
    assert spa.final.registers[2] == empa.final.registers[2] == 55
    assert spa.metrics.qt_count == empa.metrics.qt_count == 177
    k = 3
    assert spa.metrics.call_memory_ops == 2 * (k + 1) * 177
    assert empa.metrics.call_memory_ops == 0


@pytest.mark.parametrize("name", workloads.CONVENTIONAL)
def test_conventional_corpus_matches_engine(name):
    prog = workloads.load(name)
    assert run_spa_baseline(prog).final == run(prog).final


def test_stack_overflow():
    prog = workloads.load("subroutine", DEPTH=8)
    with pytest.raises(StackOverflow):
        run_spa_baseline(prog, SimConfig(stack_words=20))
    assert run_spa_baseline(prog, SimConfig(stack_words=45)).final.registers[2] == 72


def test_guarded_counter_is_sequential_on_one_core():
    _, final, _ = run_spa_baseline(workloads.load("mutex_counter", WORKERS=3, ITERS=7))
    assert final.word(256) == 21
