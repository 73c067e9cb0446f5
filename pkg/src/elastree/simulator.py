"""Discrete-event simulation of the elastic tree engine.

Queries arrive as a Poisson stream per workload phase. Each plan level runs on
the matching layout level; a level's operators are placed when the previous
level of the same query has finished and its output has crossed the network.
A container has one CPU shared equally by the operators it is running (at most
``concurrent_ops_per_container``; extra operators wait in FIFO order).

At every epoch boundary the elastic mode re-optimises the layout from the
queries completed in the trailing history window. Containers are billed per
started quantum; shrinking only marks containers for deletion at the end of
their paid quantum and growing re-uses marked containers before leasing new
ones.
"""

from __future__ import annotations

import heapq
import itertools
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import forecast, placement
from .model import (
    CloudPricing,
    ContainerLayout,
    LayoutBounds,
    QueryClass,
    UnsatisfiableBounds,
    sla_price,
)
from .scheduler import rank, round_robin

log = logging.getLogger(__name__)

_EPS = 1e-9

# same-instant event order
_DONE, _EPOCH, _LEASE, _READY, _ARRIVAL = range(5)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Phase:
    duration: float
    query_class: str
    lam: float


@dataclass
class SimConfig:
    classes: Dict[str, QueryClass]
    phases: Sequence[Phase]
    initial_layout: ContainerLayout
    bounds: Optional[LayoutBounds] = None
    pricing: CloudPricing = field(default_factory=CloudPricing)
    mode: str = "elastic"
    epoch: float = 300.0
    horizon: Optional[float] = None
    history_window: float = 600.0
    concurrent_ops_per_container: int = 10
    arc: int = 4
    partitions: int = 128
    replication: int = 3
    data_size: float = 0.0
    rank_mode: str = "compress"
    seed: int = 0
    # (time, class id) pairs injected on top of the Poisson phases
    fixed_arrivals: Sequence[Tuple[float, str]] = ()

    def __post_init__(self):
        if self.horizon is None:
            self.horizon = float(sum(p.duration for p in self.phases)) or self.epoch

    def validate(self) -> None:
        if self.mode not in ("elastic", "static"):
            raise ConfigError(f"mode must be 'elastic' or 'static', got {self.mode!r}")
        if not self.epoch > 0 or not self.horizon > 0:
            raise ConfigError("epoch and horizon must be positive")
        n = self.horizon / self.epoch
        if abs(n - round(n)) > 1e-9:
            raise ConfigError(f"horizon {self.horizon} is not a multiple of the epoch {self.epoch}")
        if self.concurrent_ops_per_container < 1:
            raise ConfigError("concurrent_ops_per_container must be >= 1")
        if not self.history_window > 0:
            raise ConfigError("history_window must be positive")
        for ph in self.phases:
            if not ph.lam > 0:
                raise ConfigError(f"phase rate must be > 0, got {ph.lam}")
            if ph.duration < 0:
                raise ConfigError("phase duration must be >= 0")
            if ph.query_class not in self.classes:
                raise ConfigError(f"phase refers to unknown query class {ph.query_class!r}")
        for _, cid in self.fixed_arrivals:
            if cid not in self.classes:
                raise ConfigError(f"arrival refers to unknown query class {cid!r}")
        height = len(self.initial_layout)
        for qc in self.classes.values():
            if qc.plan.height > height:
                raise ConfigError(f"plan of class {qc.id!r} is taller than the layout")
        if self.mode == "elastic":
            if self.bounds is None:
                raise UnsatisfiableBounds("elastic mode needs layout bounds")
            if self.bounds.height != height:
                raise UnsatisfiableBounds("bounds height differs from the initial layout")
            if not self.bounds.contains(self.initial_layout):
                raise UnsatisfiableBounds(
                    f"initial layout {self.initial_layout} lies outside bounds "
                    f"{self.bounds.minimum}..{self.bounds.maximum}")

    @property
    def num_epochs(self) -> int:
        return int(round(self.horizon / self.epoch))

    def sub_seeds(self) -> List[int]:
        """Seed 0 drives the partition ring, seed ``1 + i`` the arrivals of phase ``i``."""
        children = np.random.SeedSequence(self.seed).spawn(1 + len(self.phases))
        return [int(c.generate_state(1)[0]) for c in children]


@dataclass
class QueryRecord:
    id: int
    class_id: str
    class_index: int
    arrival: float
    finish: Optional[float] = None
    price: Optional[float] = None
    level: int = 0
    outstanding: int = 0


@dataclass
class EpochReport:
    epoch: int
    start: float
    layout: ContainerLayout
    containers: Tuple[int, ...]
    revenue: float = 0.0
    cost: float = 0.0
    completed: int = 0
    exec_time_sum: float = 0.0
    reorg_seconds: float = 0.0
    predicted_profit: Optional[float] = None

    @property
    def profit(self) -> float:
        return self.revenue - self.cost

    @property
    def avg_exec_time(self) -> float:
        return self.exec_time_sum / self.completed if self.completed else 0.0


@dataclass
class SimResult:
    epochs: List[EpochReport]
    queries: List[QueryRecord]
    moves: List[placement.MoveReport]
    quanta: int

    @property
    def revenue(self) -> float:
        return sum(e.revenue for e in self.epochs)

    @property
    def cost(self) -> float:
        return sum(e.cost for e in self.epochs)

    @property
    def profit(self) -> float:
        return self.revenue - self.cost


class _Container:
    __slots__ = ("id", "level", "lease_end", "pending_delete", "running", "queue", "last", "version")

    def __init__(self, cid: int, level: int, lease_end: float):
        self.id = cid
        self.level = level
        self.lease_end = lease_end
        self.pending_delete = False
        self.running: Dict[Tuple[int, int], float] = {}
        self.queue: deque = deque()
        self.last = 0.0
        self.version = 0

    @property
    def load(self) -> int:
        return len(self.running) + len(self.queue)


def generate_arrivals(lam: float, duration: float, seed, start: float = 0.0) -> List[float]:
    """Arrival instants in ``[start, start + duration)``.

    Gaps are Poisson distributed with mean ``lam`` seconds.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    rng = np.random.default_rng(seed)
    out: List[float] = []
    t = 0.0
    batch = max(16, int(duration / lam * 1.2) + 16)
    while True:
        for gap in rng.poisson(lam, size=batch):
            t += float(gap)
            if t >= duration:
                return out
            out.append(start + t)


def apply_layout(containers: Dict[int, List[_Container]], target: ContainerLayout, now: float,
                 lease: float, new_id) -> List[_Container]:
    """Bring every level to ``target`` active containers; returns freshly leased ones."""
    fresh: List[_Container] = []
    for level, want in enumerate(target):
        pool = containers.setdefault(level, [])
        active = [c for c in pool if not c.pending_delete]
        if len(active) > want:
            victims = sorted(active, key=lambda c: (c.lease_end, -c.id))[: len(active) - want]
            for c in victims:
                c.pending_delete = True
        elif len(active) < want:
            need = want - len(active)
            marked = sorted((c for c in pool if c.pending_delete), key=lambda c: (-c.lease_end, c.id))
            for c in marked[:need]:
                c.pending_delete = False
            for _ in range(need - min(need, len(marked))):
                c = _Container(new_id(), level, now + lease)
                c.last = now
                pool.append(c)
                fresh.append(c)
    return fresh


class Simulation:
    def __init__(self, config: SimConfig):
        config.validate()
        self.cfg = config
        self.class_ids = list(config.classes)
        self.height = len(config.initial_layout)
        self.events: list = []
        self.seq = itertools.count()
        self.ids = itertools.count()
        self.containers: Dict[int, List[_Container]] = {}
        self.by_id: Dict[int, _Container] = {}
        self.queries: List[QueryRecord] = []
        self.completed: List[QueryRecord] = []
        self.layout = config.initial_layout
        self.quanta = 0
        self.moves: List[placement.MoveReport] = []
        seeds = config.sub_seeds()
        self.phase_seeds = seeds[1:]
        self.ring = placement.build_ring(config.partitions, config.replication, self.layout[0],
                                         config.arc, seeds[0])
        self.epochs = [EpochReport(k, k * config.epoch, self.layout, ()) for k in range(config.num_epochs)]

    # -- bookkeeping -------------------------------------------------------
    def _epoch_of(self, t: float) -> EpochReport:
        k = min(int(t // self.cfg.epoch), len(self.epochs) - 1)
        return self.epochs[k]

    def _push(self, t: float, kind: int, payload) -> None:
        heapq.heappush(self.events, (t, kind, next(self.seq), payload))

    def _charge(self, c: _Container, start: float) -> None:
        self.quanta += 1
        self._epoch_of(start).cost += self.cfg.pricing.quantum_cost
        self._push(c.lease_end, _LEASE, c.id)

    def _active(self, level: int) -> int:
        return sum(1 for c in self.containers.get(level, ()) if not c.pending_delete)

    def _allocated(self) -> Tuple[int, ...]:
        return tuple(len(self.containers.get(k, ())) for k in range(self.height))

    # -- processor sharing -------------------------------------------------
    def _advance(self, c: _Container, now: float) -> None:
        n = len(c.running)
        if n and now > c.last:
            dec = (now - c.last) / n
            for k in c.running:
                c.running[k] -= dec
        c.last = now

    def _reschedule(self, c: _Container, now: float) -> None:
        c.version += 1
        if c.running:
            t = now + min(c.running.values()) * len(c.running)
            self._push(max(t, now), _DONE, (c.id, c.version))

    def _add_op(self, c: _Container, op: Tuple[int, int], work: float, now: float) -> None:
        self._advance(c, now)
        if len(c.running) < self.cfg.concurrent_ops_per_container:
            c.running[op] = work
        else:
            c.queue.append((op, work))
        self._reschedule(c, now)

    def _on_done(self, now: float, cid: int, version: int) -> None:
        c = self.by_id.get(cid)
        if c is None or c.version != version:
            return
        self._advance(c, now)
        finished = sorted(k for k, r in c.running.items() if r <= _EPS)
        for k in finished:
            del c.running[k]
        while c.queue and len(c.running) < self.cfg.concurrent_ops_per_container:
            op, work = c.queue.popleft()
            c.running[op] = work
        self._reschedule(c, now)
        for qid, _ in finished:
            self._op_finished(self.queries[qid], now)

    # -- query flow --------------------------------------------------------
    def _start_level(self, q: QueryRecord, j: int, now: float) -> None:
        plan = self.cfg.classes[q.class_id].plan
        level = rank(j, plan.height, self.height, self.cfg.rank_mode)
        ids = round_robin(plan.op_count[j], self.containers.get(level, []))
        q.level = j
        q.outstanding = len(ids)
        for n, cid in enumerate(ids):
            self._add_op(self.by_id[cid], (q.id, n), plan.op_cpu[j], now)

    def _op_finished(self, q: QueryRecord, now: float) -> None:
        q.outstanding -= 1
        if q.outstanding:
            return
        qc = self.cfg.classes[q.class_id]
        plan = qc.plan
        j = q.level
        if j == plan.height - 1:
            q.finish = now
            q.price = sla_price(qc.sla, now - q.arrival)
            rep = self._epoch_of(now)
            rep.revenue += q.price
            rep.completed += 1
            rep.exec_time_sum += now - q.arrival
            self.completed.append(q)
            return
        lo = rank(j, plan.height, self.height, self.cfg.rank_mode)
        hi = rank(j + 1, plan.height, self.height, self.cfg.rank_mode)
        volume = plan.level_out_bytes(j)
        delay = 0.0
        if volume > 0:
            link = min(max(1, self._active(lo)), max(1, self._active(hi)))
            delay = volume / (self.cfg.pricing.net_speed * link)
        self._push(now + delay, _READY, (q.id, j + 1))

    # -- layout management -------------------------------------------------
    def _set_layout(self, target: ContainerLayout, now: float) -> float:
        before = self._active(0) if self.containers else target[0]
        fresh = apply_layout(self.containers, target, now, self.cfg.pricing.quantum, lambda: next(self.ids))
        for c in fresh:
            self.by_id[c.id] = c
            self._charge(c, now)
        self.layout = target
        after = self._active(0)
        if after == before:
            return 0.0
        self.ring, report = placement.resize(self.ring, after, self.cfg.data_size)
        self.moves.append(report)
        if report.bytes_to_fetch <= 0:
            return 0.0
        seconds = report.bytes_to_fetch / (abs(after - before) * self.cfg.arc * self.cfg.pricing.net_speed)
        return min(seconds, self.cfg.epoch)

    def _on_lease_end(self, now: float, cid: int) -> None:
        c = self.by_id.get(cid)
        if c is None or abs(c.lease_end - now) > _EPS:
            return
        idle = c.load == 0
        drained = now >= self.cfg.horizon - _EPS and len(self.completed) == len(self.queries)
        if idle and (c.pending_delete or drained):
            self.containers[c.level].remove(c)
            del self.by_id[cid]
            c.version += 1
            return
        start = c.lease_end
        c.lease_end += self.cfg.pricing.quantum
        self._charge(c, start)

    def _on_epoch(self, now: float, k: int) -> None:
        rep = self.epochs[k]
        if self.cfg.mode == "elastic":
            # early on the history is shorter than the configured window
            w_h = min(self.cfg.history_window, now)
            window = [q for q in self.completed if now - w_h < q.finish <= now]
            stats = forecast.collect_stats(
                (forecast.CompletedQuery(self.cfg.classes[q.class_id], q.class_index, q.arrival, q.finish)
                 for q in window),
                self.layout, w_h, len(self.class_ids), self.cfg.rank_mode)
            fcfg = forecast.ForecastConfig(
                slas=tuple(self.cfg.classes[c].sla for c in self.class_ids), bounds=self.cfg.bounds,
                pricing=self.cfg.pricing, w_p=self.cfg.epoch, arc=self.cfg.arc, data_size=self.cfg.data_size)
            decision = forecast.optimize_layout(stats, fcfg)
            rep.predicted_profit = decision.predicted_profit
            rep.reorg_seconds = self._set_layout(decision.layout, now)
        rep.layout = self.layout
        rep.containers = self._allocated()

    # -- driver ------------------------------------------------------------
    def _arrivals(self) -> List[Tuple[float, str]]:
        out = [(float(t), cid) for t, cid in self.cfg.fixed_arrivals]
        start = 0.0
        for ph, seed in zip(self.cfg.phases, self.phase_seeds):
            out.extend((t, ph.query_class) for t in generate_arrivals(ph.lam, ph.duration, seed, start))
            start += ph.duration
        return sorted((a for a in out if a[0] < self.cfg.horizon), key=lambda a: a[0])

    def run(self) -> SimResult:
        cfg = self.cfg
        self._set_layout(self.layout, 0.0)
        self.epochs[0].containers = self._allocated()
        for k in range(1, cfg.num_epochs):
            self._push(k * cfg.epoch, _EPOCH, k)
        index = {cid: i for i, cid in enumerate(self.class_ids)}
        for t, cid in self._arrivals():
            q = QueryRecord(len(self.queries), cid, index[cid], t)
            self.queries.append(q)
            self._push(t, _ARRIVAL, q.id)
        while self.events:
            now, kind, _, payload = heapq.heappop(self.events)
            if kind == _DONE:
                self._on_done(now, *payload)
            elif kind == _ARRIVAL:
                self._start_level(self.queries[payload], 0, now)
            elif kind == _READY:
                qid, j = payload
                self._start_level(self.queries[qid], j, now)
            elif kind == _LEASE:
                self._on_lease_end(now, payload)
            elif kind == _EPOCH:
                self._on_epoch(now, payload)
        return SimResult(self.epochs, self.queries, self.moves, self.quanta)


def run(config: SimConfig) -> SimResult:
    return Simulation(config).run()
