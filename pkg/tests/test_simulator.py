import itertools

import numpy as np
import pytest

from elastree import forecast
from elastree.model import STATIC_LAYOUTS, CloudPricing, ContainerLayout, LayoutBounds, UnsatisfiableBounds
from elastree.simulator import (
    ConfigError,
    Phase,
    SimConfig,
    Simulation,
    apply_layout,
    generate_arrivals,
    run,
)

from conftest import LAYOUT_A, LAYOUT_B, LAYOUT_C, PHASE_CLASS, three_phase_config, two_query_config


# ---------------------------------------------------------------- arrivals

def test_arrival_count_for_an_hour():
    counts = [len(generate_arrivals(60, 3600, s)) for s in range(20)]
    assert 55 <= np.mean(counts) <= 65


@pytest.mark.parametrize("lam", [30, 60])
def test_mean_gap(lam):
    times = generate_arrivals(lam, lam * 10_500, seed=11)[:10_001]
    assert len(times) == 10_001
    assert np.mean(np.diff(times)) == pytest.approx(lam, rel=0.05)


def test_empty_duration():
    assert generate_arrivals(10, 0, seed=1) == []


def test_rate_ratio():
    a = len(generate_arrivals(30, 10_000, seed=3))
    b = len(generate_arrivals(60, 10_000, seed=4))
    assert a / b == pytest.approx(2.0, rel=0.10)


def test_arrivals_deterministic_and_offset():
    assert generate_arrivals(20, 1000, 5) == generate_arrivals(20, 1000, 5)
    shifted = generate_arrivals(20, 1000, 5, start=300)
    assert shifted == [t + 300 for t in generate_arrivals(20, 1000, 5)]


def test_bad_rate():
    with pytest.raises(ValueError):
        generate_arrivals(0, 10, 1)


# ---------------------------------------------------------------- two-query example

@pytest.mark.parametrize(
    "layout, times, profit",
    [(LAYOUT_A, (13, 14), 8.27), (LAYOUT_B, (9, 10), 9.66), (LAYOUT_C, (6, 7), 6.68)],
)
def test_two_query_example(layout, times, profit):
    res = run(two_query_config(layout))
    got = tuple(q.finish - q.arrival for q in res.queries)
    assert got == pytest.approx(times, abs=1e-9)
    assert res.cost == layout.total
    assert res.profit == pytest.approx(profit, abs=0.02)


def test_zero_arrivals_one_epoch():
    cfg = SimConfig(classes={"q1": PHASE_CLASS}, phases=[], initial_layout=STATIC_LAYOUTS["small"],
                    mode="static", horizon=300)
    res = run(cfg)
    assert res.revenue == 0
    assert res.cost == pytest.approx(6.15)
    assert res.profit == pytest.approx(-6.15)
    assert res.quanta == 15


# ---------------------------------------------------------------- layouts and billing

def _pool(levels, lease_end=300.0):
    from elastree.simulator import _Container

    ids = itertools.count()
    pools = {lvl: [_Container(next(ids), lvl, lease_end) for _ in range(n)] for lvl, n in enumerate(levels)}
    return pools, ids


def _active(pools):
    return tuple(sum(not c.pending_delete for c in pools[k]) for k in sorted(pools))


def test_apply_same_layout_is_a_no_op():
    pools, ids = _pool((3, 2, 1))
    assert apply_layout(pools, ContainerLayout((3, 2, 1)), 0, 300, lambda: next(ids)) == []
    assert _active(pools) == (3, 2, 1)


def test_shrink_then_grow_reuses_containers():
    pools, ids = _pool((5, 2, 1))
    apply_layout(pools, ContainerLayout((3, 2, 1)), 100, 300, lambda: next(ids))
    assert _active(pools) == (3, 2, 1) and len(pools[0]) == 5
    fresh = apply_layout(pools, ContainerLayout((5, 2, 1)), 150, 300, lambda: next(ids))
    assert fresh == []
    assert _active(pools) == (5, 2, 1)


def test_shrink_marks_earliest_lease_first():
    from elastree.simulator import _Container

    pools = {0: [_Container(0, 0, 900), _Container(1, 0, 600), _Container(2, 0, 1200)]}
    apply_layout(pools, ContainerLayout((2,)), 300, 300, lambda: 99)
    assert [c.id for c in pools[0] if c.pending_delete] == [1]


def test_grow_allocates_fresh_lease():
    pools, ids = _pool((1,))
    fresh = apply_layout(pools, ContainerLayout((3,)), 120, 300, lambda: next(ids))
    assert [c.lease_end for c in fresh] == [420, 420]


def test_one_step_growth_records_a_move():
    cfg = SimConfig(classes={"q1": PHASE_CLASS}, phases=[], initial_layout=ContainerLayout((26, 8, 2)),
                    mode="static", horizon=300, data_size=8e9)
    sim = Simulation(cfg)
    sim._set_layout(cfg.initial_layout, 0.0)
    seconds = sim._set_layout(ContainerLayout((27, 8, 2)), 10.0)
    assert len(sim.moves) == 1
    report = sim.moves[0]
    assert report.moved_partitions > 0
    assert seconds == pytest.approx(report.bytes_to_fetch / (1 * 4 * cfg.pricing.net_speed))


def test_shrinking_mid_quantum_keeps_paying():
    # quantum spans two epochs; the idle workload makes the optimiser shrink at t=300
    pricing = CloudPricing(quantum=600, quantum_cost=1.0)
    cfg = SimConfig(classes={"q1": PHASE_CLASS}, phases=[], initial_layout=STATIC_LAYOUTS["medium"],
                    bounds=LayoutBounds((1, 1, 1), (64, 16, 4)), pricing=pricing, mode="elastic", horizon=600)
    res = run(cfg)
    assert res.epochs[1].layout.levels == (1, 1, 1)
    assert res.epochs[1].containers == (26, 8, 2)
    assert res.cost == 36.0
    for e in res.epochs:
        assert e.cost == pytest.approx(round(e.cost / pricing.quantum_cost) * pricing.quantum_cost)


# ---------------------------------------------------------------- whole runs

def _short(mode="elastic", seed=3, **kw):
    kw.setdefault("phases", [Phase(600, "q1", 30), Phase(600, "q1", 15)])
    return SimConfig(classes={"q1": PHASE_CLASS}, initial_layout=STATIC_LAYOUTS["small"],
                     bounds=LayoutBounds((1, 1, 1), (40, 12, 3)), mode=mode, seed=seed, data_size=4e9, **kw)


def _trace(res):
    return ([(q.id, q.class_id, q.arrival, q.finish, q.price) for q in res.queries],
            [(e.layout.levels, e.containers, e.revenue, e.cost, e.reorg_seconds, e.predicted_profit)
             for e in res.epochs])


def test_bitwise_determinism():
    assert _trace(run(_short())) == _trace(run(_short()))
    assert _trace(run(_short())) != _trace(run(_short(seed=4)))


@pytest.mark.parametrize("mode", ["elastic", "static"])
def test_accounting_identities(mode):
    cfg = _short(mode)
    res = run(cfg)
    prices = sum(q.price for q in res.queries)
    assert sum(e.revenue for e in res.epochs) == pytest.approx(prices)
    assert res.cost == pytest.approx(cfg.pricing.quantum_cost * res.quanta)
    for e in res.epochs:
        assert e.profit == e.revenue - e.cost
    # work conservation
    assert all(q.finish is not None and q.finish >= q.arrival for q in res.queries)
    assert len(res.queries) > 20


def test_capacity_never_exceeded(monkeypatch):
    cfg = _short(concurrent_ops_per_container=3)
    peak = []
    original = Simulation._reschedule

    def watch(self, c, now):
        peak.append(len(c.running))
        original(self, c, now)

    monkeypatch.setattr(Simulation, "_reschedule", watch)
    run(cfg)
    assert max(peak) == 3


def test_static_mode_never_optimises(monkeypatch):
    def boom(*a, **k):
        raise AssertionError("optimiser called in static mode")

    monkeypatch.setattr(forecast, "optimize_layout", boom)
    res = run(_short("static"))
    assert {e.layout.levels for e in res.epochs} == {(10, 4, 1)}
    assert {e.containers for e in res.epochs} == {(10, 4, 1)}


def test_sub_seeds_are_stable():
    cfg = _short()
    assert cfg.sub_seeds() == _short().sub_seeds()
    assert len(cfg.sub_seeds()) == 3
    assert len(set(cfg.sub_seeds())) == 3


def test_elastic_follows_the_load():
    res = run(three_phase_config("elastic", "medium", 0))
    level0 = [e.layout[0] for e in res.epochs]
    assert max(level0[4:7]) > level0[3]
    assert level0[-1] < max(level0[4:8])


# ---------------------------------------------------------------- validation

def test_config_errors():
    with pytest.raises(ConfigError):
        run(_short(horizon=1000))
    with pytest.raises(ConfigError):
        run(_short(concurrent_ops_per_container=0))
    with pytest.raises(ConfigError):
        run(_short(phases=[Phase(600, "q1", 0)]))
    with pytest.raises(ConfigError):
        run(_short(phases=[Phase(600, "nope", 10)]))
    with pytest.raises(ConfigError):
        run(_short(mode="sometimes"))


def test_unsatisfiable_bounds():
    with pytest.raises(UnsatisfiableBounds):
        run(SimConfig(classes={"q1": PHASE_CLASS}, phases=[], initial_layout=STATIC_LAYOUTS["large"],
                      bounds=LayoutBounds((1, 1, 1), (40, 12, 3)), horizon=300))
    with pytest.raises(UnsatisfiableBounds):
        run(SimConfig(classes={"q1": PHASE_CLASS}, phases=[], initial_layout=STATIC_LAYOUTS["small"],
                      horizon=300))


def test_plan_taller_than_layout():
    with pytest.raises(ConfigError):
        run(SimConfig(classes={"q": PHASE_CLASS}, phases=[], initial_layout=ContainerLayout((4, 1)),
                      mode="static", horizon=300))

