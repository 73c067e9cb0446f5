"""Rank-based level selection and load-ordered round-robin placement of operators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

from .model import TreePlanProfile

RANK_MODES = ("compress", "height")


class SchedulingError(ValueError):
    pass


@dataclass
class ContainerState:
    id: int
    level: int
    load: int = 0
    lease_end: float = 0.0
    pending_delete: bool = False


@dataclass
class OperatorAssignment:
    query_id: int
    # one (level, container id) pair per operator, plan levels in order
    operators: List[Tuple[int, int]] = field(default_factory=list)

    def per_container(self) -> Dict[int, int]:
        counts: Dict[int, int] = {}
        for _, cid in self.operators:
            counts[cid] = counts.get(cid, 0) + 1
        return counts


def rank(op_level: int, plan_height: int, layout_height: int, mode: str = "compress") -> int:
    """Layout level that runs operators sitting ``op_level`` above the leaves.

    ``height`` keeps the tree height as is, so a short plan never reaches the
    top of a taller layout. ``compress`` pins the root to the top level and
    spreads interior levels proportionally.
    """
    if plan_height > layout_height:
        raise SchedulingError(f"plan of height {plan_height} does not fit a layout of height {layout_height}")
    if not 0 <= op_level < plan_height:
        raise SchedulingError(f"operator level {op_level} outside plan of height {plan_height}")
    if mode == "height" or plan_height == layout_height:
        return op_level
    if mode != "compress":
        raise ValueError(f"unknown rank mode {mode!r}")
    if plan_height == 1:
        return 0
    # half-up rounding; the scaled step is >= 1 so distinct plan levels stay distinct
    return int(math.floor(op_level * (layout_height - 1) / (plan_height - 1) + 0.5))


def order_by_load(containers: Sequence) -> List:
    """Containers able to take work, least loaded first (ties by id)."""
    return sorted((c for c in containers if not c.pending_delete), key=lambda c: (c.load, c.id))


def round_robin(n_ops: int, containers: Sequence) -> List[int]:
    """Container ids for ``n_ops`` operators of one level."""
    ordered = order_by_load(containers)
    if not ordered:
        raise SchedulingError("no container available at this level")
    return [ordered[k % len(ordered)].id for k in range(n_ops)]


def schedule(
    plan: TreePlanProfile,
    containers: Sequence,
    query_id: int = 0,
    layout_height: int = 0,
    mode: str = "compress",
) -> OperatorAssignment:
    """Assign every operator of ``plan`` using the loads the containers have now."""
    height = layout_height or (max(c.level for c in containers) + 1 if containers else 0)
    by_level: Dict[int, list] = {}
    for c in containers:
        by_level.setdefault(c.level, []).append(c)
    out = OperatorAssignment(query_id)
    for j in range(plan.height):
        level = rank(j, plan.height, height, mode)
        ids = round_robin(plan.op_count[j], by_level.get(level, []))
        out.operators.extend((level, cid) for cid in ids)
    return out
