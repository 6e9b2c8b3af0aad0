import pytest
from hypothesis import given
from hypothesis import strategies as st

from empasim import workloads
from empasim.engine import SimConfig
from empasim.isa import assemble
from empasim.report import COMPARED, compare, fit_scaling, ratio, sweep, sweep_csv
from empasim.topology import GridConfig


def test_ratio_rules():
    assert ratio(0, 0) == 1.0
    assert ratio(5, 5) == 1.0
    assert ratio(3, 0) is None
    assert ratio(6, 3) == 2.0


def test_empty_program_ratios_are_one():
    rep = compare(assemble("HALT\n"))
    assert all(rep.ratios[k] == 1.0 for k in COMPARED)
    assert all(v == 0 for v in rep.deltas.values())


def test_mutex_report_notes_guard_wait():
    rep = compare(workloads.load("mutex_counter", WORKERS=3, ITERS=4))
    assert rep.empa.os_sched_events == 0
    assert any("guard" in n for n in rep.notes)
    assert "makespan" in rep.table()


@given(st.floats(0.1, 100), st.lists(st.integers(1, 1000), min_size=2, max_size=8, unique=True))
def test_fit_recovers_exact_proportionality(c, xs):
    ys = [c * x for x in xs]
    got, worst = fit_scaling(xs, ys, float)
    assert got == pytest.approx(c)
    assert worst == pytest.approx(0, abs=1e-9)


def test_fit_reports_worst_relative_residual():
    c, worst = fit_scaling([1, 2], [1, 3], float)
    # least squares: c = (1 + 6) / 5
    assert c == pytest.approx(1.4)
    assert worst == pytest.approx(max(abs(1 - 1.4) / 1.4, abs(3 - 2.8) / 2.8))
    with pytest.raises(ValueError):
        fit_scaling([1], [1], lambda x: 0.0)


def _tree(n):
    return workloads.load("spawn_tree", N=n)


def test_parallel_sweep_equals_sequential():
    cfg = SimConfig(grid=GridConfig(8, 8))
    seq = sweep(_tree, [4, 8], cfg)
    par = sweep(_tree, [4, 8], cfg, workers=2)
    assert seq == par
    lines = sweep_csv(seq).splitlines()
    assert lines[0].startswith("N,empa_makespan,spa_makespan")
    assert [l.split(",")[0] for l in lines[1:]] == ["4", "8"]
