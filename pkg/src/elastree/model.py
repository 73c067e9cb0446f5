"""Shared domain types and the SLA / cost / profit arithmetic."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

DEFAULT_HEIGHT = 3


@dataclass(frozen=True)
class SlaSpec:
    """Exponentially decaying price curve: ``alpha * exp(-t / gamma)``."""

    alpha: float
    gamma: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"SLA alpha must be > 0, got {self.alpha}")
        if not self.gamma > 0:
            raise ValueError(f"SLA gamma must be > 0, got {self.gamma}")

    def price(self, t: float) -> float:
        return sla_price(self, t)


SLA_PRESETS = {
    "normal": SlaSpec(10.0, 80.0),
    "high": SlaSpec(20.0, 40.0),
    "critical": SlaSpec(100.0, 40.0),
    "best-effort": SlaSpec(20.0, 500.0),
}


@dataclass(frozen=True)
class TreePlanProfile:
    """Level aggregates of a tree execution plan, index 0 = leaves.

    ``op_cpu[i]`` is CPU seconds per operator and ``op_out_bytes[i]`` the
    bytes each operator at level ``i`` sends to its parent.
    """

    op_count: Tuple[int, ...]
    op_cpu: Tuple[float, ...]
    op_out_bytes: Tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "op_count", tuple(int(c) for c in self.op_count))
        object.__setattr__(self, "op_cpu", tuple(float(c) for c in self.op_cpu))
        out = self.op_out_bytes or (0.0,) * len(self.op_count)
        object.__setattr__(self, "op_out_bytes", tuple(float(b) for b in out))
        n = len(self.op_count)
        if n < 1:
            raise ValueError("plan needs at least one level")
        if len(self.op_cpu) != n or len(self.op_out_bytes) != n:
            raise ValueError("op_count, op_cpu and op_out_bytes must have equal length")
        if self.op_count[-1] != 1:
            raise ValueError("top level of a plan must hold exactly one operator")
        if any(a <= b for a, b in zip(self.op_count, self.op_count[1:])):
            raise ValueError(f"op_count must strictly decrease towards the root: {self.op_count}")
        if min(self.op_cpu) < 0 or min(self.op_out_bytes) < 0:
            raise ValueError("operator costs must be non-negative")

    @property
    def height(self) -> int:
        return len(self.op_count)

    def level_cpu(self, level: int) -> float:
        return self.op_count[level] * self.op_cpu[level]

    def level_out_bytes(self, level: int) -> float:
        return self.op_count[level] * self.op_out_bytes[level]


@dataclass(frozen=True)
class QueryClass:
    id: str
    sla: SlaSpec
    plan: TreePlanProfile


@dataclass(frozen=True)
class ContainerLayout:
    """Container count per layout level; index 0 is the data level."""

    levels: Tuple[int, ...]

    def __post_init__(self):
        levels = tuple(int(v) for v in self.levels)
        if not levels:
            raise ValueError("layout needs at least one level")
        if min(levels) < 1:
            raise ValueError(f"every layout level needs >= 1 container: {levels}")
        object.__setattr__(self, "levels", levels)

    @classmethod
    def of(cls, *levels: int) -> "ContainerLayout":
        return cls(tuple(levels))

    @property
    def height(self) -> int:
        return len(self.levels)

    @property
    def total(self) -> int:
        return sum(self.levels)

    def __getitem__(self, i: int) -> int:
        return self.levels[i]

    def __iter__(self):
        return iter(self.levels)

    def __len__(self) -> int:
        return len(self.levels)

    def __str__(self) -> str:
        return "(" + ",".join(str(v) for v in self.levels) + ")"


STATIC_LAYOUTS = {
    "small": ContainerLayout((10, 4, 1)),
    "medium": ContainerLayout((26, 8, 2)),
    "large": ContainerLayout((42, 12, 3)),
}


class UnsatisfiableBounds(ValueError):
    pass


@dataclass(frozen=True)
class LayoutBounds:
    minimum: Tuple[int, ...]
    maximum: Tuple[int, ...]

    def __post_init__(self):
        lo = tuple(int(v) for v in self.minimum)
        hi = tuple(int(v) for v in self.maximum)
        object.__setattr__(self, "minimum", lo)
        object.__setattr__(self, "maximum", hi)
        if len(lo) != len(hi):
            raise UnsatisfiableBounds("bounds minimum and maximum differ in height")
        if min(lo) < 1:
            raise UnsatisfiableBounds("bounds minimum must be >= 1 at every level")
        if any(a > b for a, b in zip(lo, hi)):
            raise UnsatisfiableBounds(f"unsatisfiable bounds: min {lo} > max {hi}")

    @classmethod
    def uniform(cls, height: int, lo: int = 1, hi: int = 100) -> "LayoutBounds":
        return cls((lo,) * height, (hi,) * height)

    @classmethod
    def fixed(cls, layout: ContainerLayout) -> "LayoutBounds":
        return cls(layout.levels, layout.levels)

    @property
    def height(self) -> int:
        return len(self.minimum)

    def contains(self, layout: ContainerLayout) -> bool:
        return len(layout) == self.height and all(
            lo <= v <= hi for v, lo, hi in zip(layout, self.minimum, self.maximum)
        )

    def clamp(self, values: Sequence[float]) -> ContainerLayout:
        return ContainerLayout(
            tuple(min(hi, max(lo, int(v))) for v, lo, hi in zip(values, self.minimum, self.maximum))
        )


@dataclass(frozen=True)
class CloudPricing:
    """Quantum billing: ``quantum_cost`` dollars per container per ``quantum`` seconds."""

    quantum: float = 300.0
    quantum_cost: float = 0.41
    net_speed: float = 150e6 / 8  # bytes/s (150 Mbps)

    def __post_init__(self):
        for name in ("quantum", "quantum_cost", "net_speed"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")


def sla_price(sla: SlaSpec, t: float) -> float:
    """Price paid for a query answered after ``t`` seconds."""
    if t < 0:
        raise ValueError(f"execution time must be non-negative, got {t}")
    return sla.alpha * math.exp(-t / sla.gamma)


def operational_cost(layout: ContainerLayout, period: float, pricing: CloudPricing) -> float:
    """Cost of holding ``layout`` for ``period`` seconds, pro rata in quanta."""
    if period < 0:
        raise ValueError(f"period must be non-negative, got {period}")
    return pricing.quantum_cost * (period / pricing.quantum) * layout.total


def profit(revenue: float, cost: float) -> float:
    return revenue - cost
