"""Workload forecast and profit-maximising layout search.

Statistics from the trailing historical window predict the average query
time for a candidate layout, the length of the data re-organisation period,
and from those the revenue, cost and profit of the next prediction window.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize

from .model import CloudPricing, ContainerLayout, LayoutBounds, QueryClass, SlaSpec
from .scheduler import rank

log = logging.getLogger(__name__)

ENUMERATION_CAP = 10**6


class EnumerationCapExceeded(ValueError):
    pass


@dataclass(frozen=True)
class WindowStats:
    q_h: Tuple[float, ...]
    cpu_h: Tuple[float, ...]
    net_h: Tuple[float, ...]
    conc: float
    l_h: ContainerLayout
    w_h: float

    def __post_init__(self):
        for name in ("q_h", "cpu_h", "net_h"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if len(self.cpu_h) != len(self.l_h) or len(self.net_h) != len(self.l_h):
            raise ValueError("cpu_h / net_h length must equal the layout height")
        if min(self.q_h + self.cpu_h + self.net_h, default=0.0) < 0 or self.conc < 0:
            raise ValueError("window statistics must be non-negative")
        if not self.w_h > 0:
            raise ValueError("historical window must be > 0")

    @property
    def num_q(self) -> float:
        return sum(self.q_h)

    @classmethod
    def idle(cls, l_h: ContainerLayout, classes: int, w_h: float) -> "WindowStats":
        h = len(l_h)
        return cls((0.0,) * classes, (0.0,) * h, (0.0,) * h, 0.0, l_h, w_h)

    def to_dict(self) -> dict:
        return {"q_h": list(self.q_h), "cpu_h": list(self.cpu_h), "net_h": list(self.net_h),
                "conc": self.conc, "l_h": list(self.l_h), "w_h": self.w_h}

    @classmethod
    def from_dict(cls, d) -> "WindowStats":
        return cls(tuple(d["q_h"]), tuple(d["cpu_h"]), tuple(d["net_h"]), float(d["conc"]),
                   ContainerLayout(tuple(d["l_h"])), float(d["w_h"]))


@dataclass(frozen=True)
class ForecastConfig:
    slas: Tuple[SlaSpec, ...]
    bounds: LayoutBounds
    pricing: CloudPricing = field(default_factory=CloudPricing)
    w_p: float = 300.0
    arc: int = 4
    data_size: float = 0.0
    enumeration_cap: int = ENUMERATION_CAP
    # floor on the concurrency multiplier of the query-time model; 0 keeps it raw
    min_concurrency: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "slas", tuple(self.slas))
        if not self.w_p > 0:
            raise ValueError("prediction window must be > 0")
        if self.arc < 1:
            raise ValueError("arc must be >= 1")


@dataclass(frozen=True)
class LayoutDecision:
    layout: ContainerLayout
    predicted_profit: float
    predicted_t_p: float
    reorg_time: float
    revenue: float = 0.0
    cost: float = 0.0


@dataclass
class CompletedQuery:
    """What the forecaster needs to know about a finished query."""

    query_class: QueryClass
    class_index: int
    arrival: float
    finish: float

    @property
    def exec_time(self) -> float:
        return self.finish - self.arrival


def collect_stats(
    completed: Iterable[CompletedQuery],
    layout: ContainerLayout,
    w_h: float,
    num_classes: int,
    rank_mode: str = "compress",
) -> WindowStats:
    if not w_h > 0:
        raise ValueError("historical window must be > 0")
    h = len(layout)
    q_h = [0.0] * num_classes
    cpu_h = [0.0] * h
    net_h = [0.0] * h
    busy = 0.0
    for q in completed:
        plan = q.query_class.plan
        q_h[q.class_index] += 1
        busy += q.exec_time
        for j in range(plan.height):
            level = rank(j, plan.height, h, rank_mode)
            cpu_h[level] += plan.level_cpu(j)
            net_h[level] += plan.level_out_bytes(j)
    return WindowStats(tuple(q_h), tuple(cpu_h), tuple(net_h), busy / w_h, layout, w_h)


def _as_matrix(layouts) -> np.ndarray:
    arr = np.asarray(layouts, dtype=float)
    return arr.reshape(1, -1) if arr.ndim == 1 else arr


def _query_time(stats: WindowStats, lp: np.ndarray, net_speed: float, min_conc: float = 1.0) -> np.ndarray:
    if stats.num_q == 0:
        return np.zeros(len(lp))
    cpu = np.asarray(stats.cpu_h)
    net = np.asarray(stats.net_h)
    total = (cpu / lp).sum(axis=1)
    if lp.shape[1] > 1:
        link = net_speed * np.minimum(lp[:, :-1], lp[:, 1:])
        total = total + (net[1:] / link).sum(axis=1)
    # a query running alone still waits for its own work
    return max(stats.conc, min_conc) / stats.num_q * total


def _reorg_time(l_h0: float, lp0: np.ndarray, cfg: ForecastConfig, smooth: bool = False) -> np.ndarray:
    """Re-organisation time for data-level counts ``lp0``.

    With ``smooth`` the value at ``lp0 == l_h0`` is replaced by its limit
    ``data_size / (l_h0 * arc * net_speed)``: for any actual change the moved
    size divided by the count difference reduces to ``data_size / max(x, y)``,
    so the exact function jumps at the current layout.
    """
    lp0 = np.asarray(lp0, dtype=float)
    if cfg.data_size <= 0:
        return np.zeros_like(lp0)
    rate = cfg.arc * cfg.pricing.net_speed
    if smooth:
        out = cfg.data_size / (np.maximum(lp0, l_h0) * rate)
    else:
        delta = np.abs(lp0 - l_h0)
        out = np.zeros_like(lp0)
        moving = delta > 0
        x, y = l_h0, lp0[moving]
        size = (1.0 - np.minimum(x / y, y / x)) * cfg.data_size
        out[moving] = size / (delta[moving] * rate)
    return np.clip(out, 0.0, cfg.w_p)


def _evaluate(stats: WindowStats, layouts, cfg: ForecastConfig, smooth: bool = False):
    """Vectorised (profit, t_p, t_d, revenue, cost) over rows of ``layouts``."""
    lp = _as_matrix(layouts)
    t_p = _query_time(stats, lp, cfg.pricing.net_speed, cfg.min_concurrency)
    t_d = _reorg_time(float(stats.l_h[0]), lp[:, 0], cfg, smooth)
    cost = cfg.pricing.quantum_cost * (cfg.w_p / cfg.pricing.quantum) * lp.sum(axis=1)
    revenue = np.zeros(len(lp))
    for q, sla in zip(stats.q_h, cfg.slas):
        if q == 0:
            continue
        q_reorg = q * t_d / stats.w_h
        q_steady = q * (cfg.w_p - t_d) / stats.w_h
        revenue += q_reorg * sla.alpha * np.exp(-(t_d + t_p) / sla.gamma)
        revenue += q_steady * sla.alpha * np.exp(-t_p / sla.gamma)
    return revenue - cost, t_p, t_d, revenue, cost


def predict_query_time(stats: WindowStats, candidate, pricing: CloudPricing, min_concurrency: float = 1.0) -> float:
    """Average query time expected under ``candidate`` (0 for an idle window)."""
    return float(_query_time(stats, _as_matrix(list(candidate)), pricing.net_speed, min_concurrency)[0])


def reorg_time(l_h, l_p, cfg: ForecastConfig) -> float:
    if l_h[0] < 1 or l_p[0] < 1:
        raise ValueError("data level needs at least one container")
    return float(_reorg_time(float(l_h[0]), np.array([float(l_p[0])]), cfg)[0])


def predict_profit(stats: WindowStats, candidate, cfg: ForecastConfig) -> float:
    return float(_evaluate(stats, list(candidate), cfg)[0][0])


def _decision(stats: WindowStats, layout: ContainerLayout, cfg: ForecastConfig) -> LayoutDecision:
    p, t_p, t_d, rev, cost = (float(v[0]) for v in _evaluate(stats, list(layout), cfg))
    return LayoutDecision(layout, p, t_p, t_d, rev, cost)


def _ceil_layout(x: Sequence[float], bounds: LayoutBounds) -> ContainerLayout:
    # absorb optimiser noise such as 3.0000001 before rounding up
    return bounds.clamp([int(np.ceil(v - 1e-6)) for v in x])


def optimize_layout(stats: WindowStats, cfg: ForecastConfig, step: float = 1e-3) -> LayoutDecision:
    """Bounded quasi-Newton ascent from the current layout, rounded up."""
    bounds = cfg.bounds
    if len(stats.l_h) != bounds.height:
        raise ValueError("statistics and bounds disagree on layout height")
    seed = bounds.clamp(stats.l_h.levels)
    h = bounds.height
    box = list(zip(map(float, bounds.minimum), map(float, bounds.maximum)))

    def objective(x):
        return -_evaluate(stats, x, cfg, smooth=True)[0][0]

    def gradient(x):
        # central differences, evaluated in one batch; the probe is kept inside the box
        probes = np.repeat(x[None, :], 2 * h, axis=0)
        for i in range(h):
            lo, hi = box[i]
            probes[2 * i, i] = min(hi, x[i] + step)
            probes[2 * i + 1, i] = max(lo, x[i] - step)
        vals = -_evaluate(stats, probes, cfg, smooth=True)[0]
        widths = probes[0::2, :].diagonal() - probes[1::2, :].diagonal()
        widths = np.where(widths > 0, widths, 1.0)
        return (vals[0::2] - vals[1::2]) / widths

    if bounds.minimum == bounds.maximum:
        return _decision(stats, seed, cfg)
    res = minimize(objective, np.array(seed.levels, dtype=float), jac=gradient, method="L-BFGS-B",
                   bounds=box, options={"gtol": 1e-6, "maxiter": 500})
    if not np.all(np.isfinite(res.x)) or res.get("status") == 1:
        log.warning("layout optimiser did not converge (%s); keeping %s", res.message, seed)
        return _decision(stats, seed, cfg)
    chosen = _decision(stats, _ceil_layout(res.x, bounds), cfg)
    stay = _decision(stats, seed, cfg)
    return chosen if chosen.predicted_profit >= stay.predicted_profit else stay


def enumerate_optimal(stats: WindowStats, cfg: ForecastConfig, batch: int = 65536) -> LayoutDecision:
    """Exhaustive argmax over the integer bounds box (ties: lexicographically smallest)."""
    ranges = [range(lo, hi + 1) for lo, hi in zip(cfg.bounds.minimum, cfg.bounds.maximum)]
    size = int(np.prod([len(r) for r in ranges], dtype=np.int64))
    if size > cfg.enumeration_cap:
        raise EnumerationCapExceeded(f"{size} layouts exceed the enumeration cap of {cfg.enumeration_cap}")
    best_val, best_row = -np.inf, None
    it = itertools.product(*ranges)
    while True:
        chunk = list(itertools.islice(it, batch))
        if not chunk:
            break
        arr = np.array(chunk, dtype=float)
        vals = _evaluate(stats, arr, cfg)[0]
        i = int(np.argmax(vals))
        if vals[i] > best_val:
            best_val, best_row = vals[i], chunk[i]
    return _decision(stats, ContainerLayout(tuple(best_row)), cfg)


def profit_gap(optimum: float, heuristic: float) -> float:
    """Relative shortfall of ``heuristic`` against ``optimum``."""
    if optimum == heuristic:
        return 0.0
    return (optimum - heuristic) / abs(optimum) if optimum else float("inf")

