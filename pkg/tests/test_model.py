import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from elastree.model import (
    SLA_PRESETS,
    STATIC_LAYOUTS,
    CloudPricing,
    ContainerLayout,
    LayoutBounds,
    SlaSpec,
    TreePlanProfile,
    UnsatisfiableBounds,
    operational_cost,
    profit,
    sla_price,
)

from conftest import DOLLAR_PER_WINDOW, EXAMPLE_SLA


@pytest.mark.parametrize(
    "t, expected",
    [(13, 7.83), (14, 7.45), (9, 9.57), (10, 9.10)],
)
def test_price_of_worked_example(t, expected):
    assert sla_price(EXAMPLE_SLA, t) == pytest.approx(expected, abs=0.01)


def test_price_at_zero_is_alpha():
    assert sla_price(SLA_PRESETS["critical"], 0) == 100.0


def test_price_after_one_gamma():
    assert sla_price(SlaSpec(100, 40), 40) == pytest.approx(100 / math.e)


def test_negative_time_rejected():
    with pytest.raises(ValueError):
        sla_price(EXAMPLE_SLA, -1e-9)


@pytest.mark.parametrize("alpha, gamma", [(0, 1), (-1, 1), (1, 0), (1, -5)])
def test_bad_sla_parameters(alpha, gamma):
    with pytest.raises(ValueError):
        SlaSpec(alpha, gamma)


@given(
    st.floats(0.01, 1e3), st.floats(0.01, 1e3),
    st.floats(0, 1e4), st.floats(0, 1e4),
)
def test_price_monotone_and_bounded(alpha, gamma, t1, t2):
    sla = SlaSpec(alpha, gamma)
    lo, hi = sorted((t1, t2))
    assert 0 <= sla_price(sla, hi) <= sla_price(sla, lo) <= alpha


def test_cost_examples():
    assert operational_cost(ContainerLayout((4, 2, 2, 1)), 300, DOLLAR_PER_WINDOW) == pytest.approx(9.0)
    assert operational_cost(STATIC_LAYOUTS["small"], 300, CloudPricing()) == pytest.approx(6.15)
    assert operational_cost(STATIC_LAYOUTS["small"], 0, CloudPricing()) == 0


def test_cost_rejects_negative_period():
    with pytest.raises(ValueError):
        operational_cost(STATIC_LAYOUTS["small"], -1, CloudPricing())


@given(st.lists(st.integers(1, 50), min_size=1, max_size=5), st.floats(0, 3600))
def test_cost_linear_in_containers_and_time(levels, period):
    layout = ContainerLayout(tuple(levels))
    c = operational_cost(layout, period, CloudPricing())
    assert c == pytest.approx(0.41 * period / 300 * sum(levels))


def test_profit_examples():
    assert profit(18.66, 9.00) == pytest.approx(9.66)
    assert profit(15.27, 7.00) == pytest.approx(8.27)


def test_presets():
    assert SLA_PRESETS["normal"] == SlaSpec(10, 80)
    assert SLA_PRESETS["best-effort"] == SlaSpec(20, 500)
    assert STATIC_LAYOUTS["medium"].levels == (26, 8, 2)
    assert STATIC_LAYOUTS["large"].total == 57


def test_layout_needs_one_container_per_level():
    with pytest.raises(ValueError):
        ContainerLayout((3, 0, 1))
    with pytest.raises(ValueError):
        ContainerLayout(())
    assert str(ContainerLayout.of(4, 3, 2, 1)) == "(4,3,2,1)"


def test_plan_validation():
    with pytest.raises(ValueError):
        TreePlanProfile((8, 8, 1), (1, 1, 1))
    with pytest.raises(ValueError):
        TreePlanProfile((8, 2, 2), (1, 1, 1))
    with pytest.raises(ValueError):
        TreePlanProfile((8, 1), (1, -1))
    plan = TreePlanProfile((8, 4, 2, 1), (1, 1, 1, 1))
    assert plan.height == 4
    assert plan.level_cpu(1) == 4.0
    assert plan.level_out_bytes(0) == 0.0


def test_bounds():
    b = LayoutBounds((1, 1), (5, 3))
    assert b.contains(ContainerLayout((5, 1)))
    assert not b.contains(ContainerLayout((6, 1)))
    assert b.clamp([9.7, 0.2]).levels == (5, 1)
    with pytest.raises(UnsatisfiableBounds):
        LayoutBounds((3, 1), (2, 4))
    with pytest.raises(UnsatisfiableBounds):
        LayoutBounds((0, 1), (2, 4))
    with pytest.raises(UnsatisfiableBounds):
        LayoutBounds((1,), (2, 4))
    assert LayoutBounds.fixed(STATIC_LAYOUTS["small"]).maximum == (10, 4, 1)
