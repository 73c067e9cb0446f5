from pathlib import Path

import pytest

from elastree.model import (
    STATIC_LAYOUTS,
    CloudPricing,
    ContainerLayout,
    LayoutBounds,
    QueryClass,
    SLA_PRESETS,
    SlaSpec,
    TreePlanProfile,
)
from elastree.simulator import Phase, SimConfig

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"

EXAMPLE_SLA = SlaSpec(15.0, 20.0)
DOLLAR_PER_WINDOW = CloudPricing(quantum=300.0, quantum_cost=1.0)

# The two-query worked example: Q1 is a three-level tree, Q2 a four-level one.
Q1 = QueryClass("Q1", EXAMPLE_SLA, TreePlanProfile((8, 2, 1), (1.0, 1.0, 1.0)))
Q2 = QueryClass("Q2", EXAMPLE_SLA, TreePlanProfile((8, 4, 2, 1), (1.0, 1.0, 1.0, 1.0)))
LAYOUT_A = ContainerLayout((2, 2, 2, 1))
LAYOUT_B = ContainerLayout((4, 2, 2, 1))
LAYOUT_C = ContainerLayout((8, 4, 2, 1))

PHASE_PLAN = TreePlanProfile((128, 16, 1), (1.5, 0.5, 0.5), (1e5, 1e4, 1e3))
PHASE_CLASS = QueryClass("q1", SLA_PRESETS["normal"], PHASE_PLAN)
PHASE_BOUNDS = LayoutBounds((1, 1, 1), (64, 16, 4))


def two_query_config(layout: ContainerLayout) -> SimConfig:
    return SimConfig(
        classes={"Q1": Q1, "Q2": Q2},
        phases=[],
        initial_layout=layout,
        pricing=DOLLAR_PER_WINDOW,
        mode="static",
        horizon=300.0,
        rank_mode="height",
        fixed_arrivals=((0.0, "Q1"), (0.0, "Q2")),
    )


def three_phase_config(mode: str, layout: str, seed: int) -> SimConfig:
    return SimConfig(
        classes={"q1": PHASE_CLASS},
        phases=[Phase(1200, "q1", 60), Phase(1200, "q1", 30), Phase(1200, "q1", 60)],
        initial_layout=STATIC_LAYOUTS[layout],
        bounds=PHASE_BOUNDS,
        mode=mode,
        seed=seed,
        data_size=8e9,
    )


@pytest.fixture
def scenarios_dir() -> Path:
    return SCENARIOS
