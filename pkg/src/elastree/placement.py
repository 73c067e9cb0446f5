"""Consistent-hash placement of table partitions on data-level containers.

The inner circle holds ``num_partitions * replication`` slots; the replicas of
one partition sit at adjacent slots and the partition order around the circle
is a seeded hash permutation. Containers sit on the outer circle and each owns
a set of slots. A container stores a partition once no matter how many of its
replicas it owns.

Growing inserts a container clockwise of the container holding the most
partitions and levels the slot counts inside a window of ``arc + 1``
containers around it. Shrinking removes the container holding the fewest
partitions and spreads its slots over the ``arc`` containers around it,
least-loaded first. Nothing outside the window changes hands.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

SCHEMA_VERSION = 1


def _hash64(seed: int, key: str) -> int:
    digest = hashlib.blake2b(f"{seed}:{key}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


@dataclass(frozen=True)
class MoveReport:
    moved_partitions: int
    moved_fraction: float
    bytes_to_fetch: float


@dataclass(frozen=True)
class PartitionRing:
    num_partitions: int
    replication: int
    arc: int
    seed: int
    inner: Tuple[int, ...]  # slot position -> partition id
    order: Tuple[int, ...]  # container ids, clockwise
    slots: Mapping[int, Tuple[int, ...]]  # container id -> sorted slot positions
    next_id: int

    @property
    def containers(self) -> int:
        return len(self.order)

    @property
    def num_slots(self) -> int:
        return len(self.inner)

    def owned(self, container: int) -> FrozenSet[int]:
        return frozenset(self.inner[s] for s in self.slots[container])

    def to_dict(self) -> dict:
        return {
            "version": SCHEMA_VERSION,
            "num_partitions": self.num_partitions,
            "replication": self.replication,
            "arc": self.arc,
            "seed": self.seed,
            "next_id": self.next_id,
            "inner": list(self.inner),
            "order": list(self.order),
            "slots": {str(c): list(self.slots[c]) for c in self.order},
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "PartitionRing":
        if data.get("version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported ring schema version: {data.get('version')!r}")
        ring = cls(
            num_partitions=int(data["num_partitions"]),
            replication=int(data["replication"]),
            arc=int(data["arc"]),
            seed=int(data["seed"]),
            inner=tuple(int(p) for p in data["inner"]),
            order=tuple(int(c) for c in data["order"]),
            slots={int(c): tuple(sorted(int(s) for s in v)) for c, v in data["slots"].items()},
            next_id=int(data["next_id"]),
        )
        _check_ring(ring)
        return ring

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "PartitionRing":
        return cls.from_dict(json.loads(text))


def _check_ring(ring: PartitionRing) -> None:
    seen = sorted(s for c in ring.order for s in ring.slots[c])
    if seen != list(range(ring.num_slots)):
        raise ValueError("ring slots are not an exact cover of the inner circle")
    if set(ring.slots) != set(ring.order):
        raise ValueError("ring order and slot table disagree")


def build_ring(
    num_partitions: int,
    replication: int,
    containers: int,
    arc: int = 4,
    seed: int = 0,
    permutation: Optional[Sequence[int]] = None,
) -> PartitionRing:
    """Spread the inner circle evenly over ``containers`` contiguous arcs.

    ``permutation`` replaces the hashed partition order (test hook); it also
    pins the arc boundaries to start at slot 0.
    """
    if num_partitions < 1 or replication < 1:
        raise ValueError("need at least one partition and one replica")
    if containers < 1:
        raise ValueError("need at least one container")
    if arc < 1:
        raise ValueError("arc must be >= 1")
    if permutation is None:
        perm = sorted(range(num_partitions), key=lambda p: (_hash64(seed, f"p{p}"), p))
        offset = _hash64(seed, "offset") % (num_partitions * replication)
    else:
        perm = [int(p) for p in permutation]
        if sorted(perm) != list(range(num_partitions)):
            raise ValueError("permutation must be a permutation of the partition ids")
        offset = 0
    inner = tuple(p for p in perm for _ in range(replication))
    n_slots = len(inner)
    slots = {}
    for c in range(containers):
        lo, hi = c * n_slots // containers, (c + 1) * n_slots // containers
        slots[c] = tuple(sorted((offset + s) % n_slots for s in range(lo, hi)))
    return PartitionRing(num_partitions, replication, arc, seed, inner, tuple(range(containers)), slots, containers)


def ownership(ring: PartitionRing) -> Dict[int, FrozenSet[int]]:
    return {c: ring.owned(c) for c in ring.order}


def _window(order: Sequence[int], center: int, size: int) -> List[int]:
    """``size`` consecutive positions of the circle centred on index ``center``."""
    n = len(order)
    if size >= n:
        return list(range(n))
    start = center - (size - 1) // 2
    return [(start + k) % n for k in range(size)]


def _take(slots: Tuple[int, ...], k: int, from_high: bool) -> Tuple[Tuple[int, ...], Tuple[int, ...]]:
    """Split off ``k`` slots from one end; returns (kept, given)."""
    if k == 0:
        return slots, ()
    if from_high:
        return slots[:-k], slots[-k:]
    return slots[k:], slots[:k]


def _grow_one(ring: PartitionRing) -> PartitionRing:
    order = list(ring.order)
    counts = {c: len(ring.owned(c)) for c in order}
    largest = min(order, key=lambda c: (-counts[c], c))
    new_id = ring.next_id
    pos = order.index(largest) + 1
    order.insert(pos, new_id)
    slots = dict(ring.slots)
    slots[new_id] = ()

    window = _window(order, pos, ring.arc + 1)
    donors = [order[i] for i in window if order[i] != new_id]
    load = {c: len(slots[c]) for c in donors}
    quota = sum(load.values()) // len(window)
    give = {c: 0 for c in donors}
    for _ in range(quota):
        c = min(donors, key=lambda d: (-(load[d]), d))
        load[c] -= 1
        give[c] += 1
    received: List[int] = []
    for i in window:
        c = order[i]
        if c == new_id or not give[c]:
            continue
        # donors before the insertion point give their clockwise end
        before = (pos - i) % len(order) <= len(order) // 2
        kept, given = _take(slots[c], give[c], from_high=before)
        slots[c] = kept
        received.extend(given)
    slots[new_id] = tuple(sorted(received))
    return PartitionRing(ring.num_partitions, ring.replication, ring.arc, ring.seed, ring.inner,
                         tuple(order), slots, new_id + 1)


def _shrink_one(ring: PartitionRing) -> PartitionRing:
    order = list(ring.order)
    counts = {c: len(ring.owned(c)) for c in order}
    victim = min(order, key=lambda c: (counts[c], -c))
    pos = order.index(victim)
    window = [order[i] for i in _window(order, pos, ring.arc + 1) if order[i] != victim]
    slots = dict(ring.slots)
    freed = slots.pop(victim)
    load = {c: len(slots[c]) for c in window}
    take = {c: 0 for c in window}
    for _ in range(len(freed)):
        c = min(window, key=lambda d: (load[d], d))
        load[c] += 1
        take[c] += 1
    # hand out contiguous chunks in circle order so adjacent replicas travel together
    rest = freed
    for c in window:
        chunk, rest = rest[: take[c]], rest[take[c]:]
        slots[c] = tuple(sorted(slots[c] + chunk))
    order.pop(pos)
    return PartitionRing(ring.num_partitions, ring.replication, ring.arc, ring.seed, ring.inner,
                         tuple(order), slots, ring.next_id)


def moved_between(before: Mapping[int, FrozenSet[int]], after: Mapping[int, FrozenSet[int]]) -> Tuple[int, int]:
    """(partition copies a container must fetch, total copies after the change)."""
    moved = sum(len(parts - before.get(c, frozenset())) for c, parts in after.items())
    total = sum(len(parts) for parts in after.values())
    return moved, total


def _report(ring: PartitionRing, moved: int, total: int, data_size: float) -> MoveReport:
    fraction = moved / total if total else 0.0
    per_copy = data_size / (ring.num_partitions * ring.replication)
    return MoveReport(moved, fraction, moved * per_copy)


def resize_steps(ring: PartitionRing, new_count: int) -> Iterable[PartitionRing]:
    """Yield the ring after every single-container step towards ``new_count``."""
    if new_count < 1:
        raise ValueError("a ring needs at least one container")
    while ring.containers != new_count:
        ring = _grow_one(ring) if ring.containers < new_count else _shrink_one(ring)
        yield ring


def resize(ring: PartitionRing, new_count: int, data_size: float = 0.0) -> Tuple[PartitionRing, MoveReport]:
    before = ownership(ring)
    for ring in resize_steps(ring, new_count):
        pass
    moved, total = moved_between(before, ownership(ring))
    return ring, _report(ring, moved, total, data_size)


def predicted_move_size(x: float, y: float, data_size: float) -> float:
    """Bytes expected to move when the data level goes from ``x`` to ``y`` containers."""
    if x <= 0 or y <= 0:
        raise ValueError("container counts must be positive")
    if data_size < 0:
        raise ValueError("data size must be non-negative")
    return (1.0 - min(x / y, y / x)) * data_size


def movement_grid(
    num_partitions: int,
    replication: int,
    arc: int,
    xs: Sequence[int],
    ys: Sequence[int],
    seeds: Sequence[int],
) -> List[dict]:
    """Seed-averaged moved fraction for every (x, y) pair next to the model."""
    ys_sorted = sorted(set(ys))
    acc: Dict[Tuple[int, int], List[float]] = {}
    for x in xs:
        for seed in seeds:
            base = build_ring(num_partitions, replication, x, arc, seed)
            base_own = ownership(base)
            for direction in (1, -1):
                targets = [y for y in ys_sorted if (y - x) * direction > 0]
                if not targets:
                    continue
                goal = max(targets) if direction > 0 else min(targets)
                wanted = set(targets)
                for step in resize_steps(base, goal):
                    if step.containers in wanted:
                        moved, total = moved_between(base_own, ownership(step))
                        acc.setdefault((x, step.containers), []).append(moved / total)
            if x in ys_sorted:
                acc.setdefault((x, x), []).append(0.0)
    rows = []
    for x in xs:
        for y in ys_sorted:
            simulated = float(np.mean(acc[(x, y)]))
            model = predicted_move_size(x, y, 1.0)
            rows.append({"x": x, "y": y, "simulated": simulated, "model": model,
                         "abs_error": abs(simulated - model)})
    return rows
