"""Command-line entry point: ``elastree run|sweep|optimize|validate-placement``.

Exit codes
  0  success
  2  scenario or stats file failed schema validation (message names the line)
  3  layout bounds cannot be satisfied
  4  ``optimize --oracle`` would enumerate more layouts than the cap allows

Output files (every CSV row starts with ``schema_version``; bump it when
columns change)

epochs.csv
  schema_version, epoch, start, end, layout_l<i> (containers the layout asks
  for at level i), alloc_l<i> (containers held, including pending-delete
  ones still inside their paid quantum), revenue, cost, profit, completed,
  avg_exec_time, reorg_seconds, predicted_profit (empty in static mode)
queries.csv
  schema_version, query, class, arrival, finish, exec_time, price
summary.json
  scenario totals: revenue, cost, profit, quanta, queries, mean layout
sweep.csv
  schema_version, mode, seed, <grid keys...>, revenue, cost, profit,
  quanta, completed, mean_exec_time
placement.csv
  schema_version, x, y, simulated, model, abs_error

When ``--out`` is omitted the output directory is taken from ``$ELASTREE_OUT``
and then defaults to ``./out``.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import jsonschema
import numpy as np
import yaml

from . import __version__, placement
from .forecast import (
    EnumerationCapExceeded,
    ForecastConfig,
    WindowStats,
    enumerate_optimal,
    optimize_layout,
    profit_gap,
)
from .model import SLA_PRESETS, CloudPricing, LayoutBounds, SlaSpec, UnsatisfiableBounds
from .scenario import ScenarioError, _node_at, _schema_error, load, parse_mode
from .simulator import ConfigError, SimConfig, SimResult, run

SCHEMA_VERSION = 1
OUT_ENV = "ELASTREE_OUT"

EXIT_OK, EXIT_SCHEMA, EXIT_BOUNDS, EXIT_CAP = 0, 2, 3, 4


def _fmt(v: Optional[float]) -> str:
    return "" if v is None else f"{v:.6f}"


def _out_dir(arg: Optional[str]) -> Path:
    path = Path(arg or os.environ.get(OUT_ENV) or "out")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _writer(fh):
    return csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")


def write_epochs(path: Path, result: SimResult, epoch_len: float) -> None:
    h = len(result.epochs[0].layout) if result.epochs else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(["schema_version", "epoch", "start", "end"]
                   + [f"layout_l{i}" for i in range(h)] + [f"alloc_l{i}" for i in range(h)]
                   + ["revenue", "cost", "profit", "completed", "avg_exec_time", "reorg_seconds",
                      "predicted_profit"])
        for e in result.epochs:
            w.writerow([SCHEMA_VERSION, e.epoch, _fmt(e.start), _fmt(e.start + epoch_len)]
                       + list(e.layout) + list(e.containers)
                       + [_fmt(e.revenue), _fmt(e.cost), _fmt(e.profit), e.completed,
                          _fmt(e.avg_exec_time), _fmt(e.reorg_seconds), _fmt(e.predicted_profit)])


def write_queries(path: Path, result: SimResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(["schema_version", "query", "class", "arrival", "finish", "exec_time", "price"])
        for q in result.queries:
            exec_time = None if q.finish is None else q.finish - q.arrival
            w.writerow([SCHEMA_VERSION, q.id, q.class_id, _fmt(q.arrival), _fmt(q.finish),
                        _fmt(exec_time), _fmt(q.price)])


def summarize(cfg: SimConfig, result: SimResult, name: str) -> dict:
    done = [q for q in result.queries if q.finish is not None]
    layouts = np.array([list(e.layout) for e in result.epochs], dtype=float)
    return {
        "schema_version": SCHEMA_VERSION,
        "scenario": name,
        "mode": cfg.mode,
        "seed": cfg.seed,
        "epochs": len(result.epochs),
        "queries": len(result.queries),
        "completed": len(done),
        "mean_exec_time": round(float(np.mean([q.finish - q.arrival for q in done])), 6) if done else None,
        "revenue": round(result.revenue, 6),
        "cost": round(result.cost, 6),
        "profit": round(result.profit, 6),
        "quanta": result.quanta,
        "mean_layout": [round(v, 6) for v in layouts.mean(axis=0)] if len(layouts) else [],
    }


def _load(path: str, mode: Optional[str], seed: Optional[int]) -> SimConfig:
    cfg = load(path, mode, seed)
    cfg.validate()
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args.scenario, args.mode, args.seed)
    result = run(cfg)
    out = _out_dir(args.out)
    write_epochs(out / "epochs.csv", result, cfg.epoch)
    write_queries(out / "queries.csv", result)
    summary = summarize(cfg, result, Path(args.scenario).stem)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"revenue {result.revenue:.2f}  cost {result.cost:.2f}  profit {result.profit:.2f}  "
          f"queries {summary['completed']}/{summary['queries']}  -> {out}")
    return EXIT_OK


def _parse_seeds(spec: str) -> List[int]:
    seeds: List[int] = []
    for part in spec.split(","):
        if "-" in part:
            a, b = part.split("-", 1)
            seeds.extend(range(int(a), int(b) + 1))
        elif part:
            seeds.append(int(part))
    return seeds


_GRID_KEYS = {"concurrent_ops_per_container": int, "history_window": float, "data_size": float,
              "arc": int, "partitions": int, "epoch": float}


def _parse_grid(items: Sequence[str]) -> Dict[str, list]:
    grid: Dict[str, list] = {}
    for item in items:
        key, _, values = item.partition("=")
        if key not in _GRID_KEYS or not values:
            raise ScenarioError(f"--grid expects KEY=v1,v2 with KEY in {sorted(_GRID_KEYS)}, got {item!r}")
        grid[key] = [_GRID_KEYS[key](v) for v in values.split(",")]
    return grid


def cmd_sweep(args) -> int:
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    seeds = _parse_seeds(args.seeds)
    grid = _parse_grid(args.grid or [])
    keys = sorted(grid)
    jobs = []
    for mode in modes:
        parse_mode(mode)
        for combo in itertools.product(*(grid[k] for k in keys)):
            for seed in seeds:
                cfg = replace(_load(args.scenario, mode, seed), **dict(zip(keys, combo)))
                cfg.validate()
                jobs.append((mode, seed, combo, cfg))

    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        results = list(pool.map(lambda job: run(job[3]), jobs))

    out = _out_dir(args.out)
    means: Dict[tuple, List[float]] = {}
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(["schema_version", "mode", "seed"] + keys
                   + ["revenue", "cost", "profit", "quanta", "completed", "mean_exec_time"])
        for (mode, seed, combo, _), res in zip(jobs, results):
            done = [q.finish - q.arrival for q in res.queries if q.finish is not None]
            w.writerow([SCHEMA_VERSION, mode, seed] + list(combo)
                       + [_fmt(res.revenue), _fmt(res.cost), _fmt(res.profit), res.quanta, len(done),
                          _fmt(float(np.mean(done)) if done else None)])
            means.setdefault((mode,) + combo, []).append(res.profit)
    for key, profits in means.items():
        label = " ".join([key[0]] + [f"{k}={v}" for k, v in zip(keys, key[1:])])
        print(f"{label:40s} mean profit {np.mean(profits):10.2f} over {len(profits)} seeds")
    return EXIT_OK


_layout_list = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1}
_nonneg_list = {"type": "array", "items": {"type": "number", "minimum": 0}}
STATS_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["stats", "slas", "bounds"],
    "properties": {
        "stats": {
            "type": "object",
            "additionalProperties": False,
            "required": ["q_h", "cpu_h", "net_h", "conc", "l_h", "w_h"],
            "properties": {"q_h": _nonneg_list, "cpu_h": _nonneg_list, "net_h": _nonneg_list,
                           "conc": {"type": "number", "minimum": 0}, "l_h": _layout_list,
                           "w_h": {"type": "number", "exclusiveMinimum": 0}},
        },
        "slas": {"type": "array", "items": {"oneOf": [
            {"type": "string"},
            {"type": "object", "additionalProperties": False, "required": ["alpha", "gamma"],
             "properties": {"alpha": {"type": "number"}, "gamma": {"type": "number"}}}]}},
        "bounds": {"type": "object", "additionalProperties": False, "required": ["min", "max"],
                   "properties": {"min": _layout_list, "max": _layout_list}},
        "pricing": {"type": "object", "additionalProperties": False,
                    "properties": {k: {"type": "number", "exclusiveMinimum": 0}
                                   for k in ("quantum", "quantum_cost", "net_speed")}},
        "w_p": {"type": "number", "exclusiveMinimum": 0},
        "arc": {"type": "integer", "minimum": 1},
        "data_size": {"type": "number", "minimum": 0},
        "enumeration_cap": {"type": "integer", "minimum": 1},
        "min_concurrency": {"type": "number", "minimum": 0},
    },
}


def load_stats(path: str):
    text = Path(path).read_text(encoding="utf-8")
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError(f"malformed YAML: {exc}", mark.line + 1 if mark else None) from None
    if root is None:
        raise ScenarioError("empty stats file", 1)
    errors = sorted(jsonschema.Draft202012Validator(STATS_SCHEMA).iter_errors(data),
                    key=lambda e: len(list(e.absolute_path)))
    if errors:
        raise _schema_error(errors[0], root)
    slas = []
    for i, s in enumerate(data["slas"]):
        if isinstance(s, str):
            if s not in SLA_PRESETS:
                raise ScenarioError(f"unknown SLA {s!r}", _node_at(root, ["slas", i]).start_mark.line + 1)
            slas.append(SLA_PRESETS[s])
        else:
            slas.append(SlaSpec(s["alpha"], s["gamma"]))
    try:
        stats = WindowStats.from_dict(data["stats"])
    except ValueError as exc:
        raise ScenarioError(str(exc), _node_at(root, ["stats"]).start_mark.line + 1) from None
    if len(stats.q_h) != len(slas):
        raise ScenarioError("stats.q_h needs one entry per SLA", _node_at(root, ["stats", "q_h"]).start_mark.line + 1)
    bounds = LayoutBounds(tuple(data["bounds"]["min"]), tuple(data["bounds"]["max"]))
    if bounds.height != len(stats.l_h):
        raise UnsatisfiableBounds("bounds height differs from stats.l_h")
    extra = {k: data[k] for k in ("w_p", "arc", "data_size", "enumeration_cap", "min_concurrency") if k in data}
    cfg = ForecastConfig(tuple(slas), bounds, CloudPricing(**data.get("pricing", {})), **extra)
    return stats, cfg


def cmd_optimize(args) -> int:
    stats, cfg = load_stats(args.stats)
    d = optimize_layout(stats, cfg)
    print(f"layout {d.layout}")
    print(f"t_P {d.predicted_t_p:.4f}  t_P^d {d.reorg_time:.4f}  R {d.revenue:.4f}  O {d.cost:.4f}  "
          f"profit {d.predicted_profit:.4f}")
    if args.oracle:
        try:
            best = enumerate_optimal(stats, cfg)
        except EnumerationCapExceeded as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CAP
        gap = profit_gap(best.predicted_profit, d.predicted_profit)
        print(f"oracle {best.layout}  profit {best.predicted_profit:.4f}  gap {gap:.4%}")
    return EXIT_OK


def _r2(xs: Sequence[float], ys: Sequence[float]) -> float:
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if len(x) < 3 or np.ptp(y) == 0:
        return 1.0
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    return float(1.0 - resid.var() / y.var())


def cmd_validate_placement(args) -> int:
    if args.grid_max > 256:
        raise ScenarioError("--grid-max must be <= 256")
    values = list(range(args.grid_min, args.grid_max + 1, args.grid_step))
    seeds = list(range(args.seeds))
    out = _out_dir(args.out)
    rows = placement.movement_grid(args.partitions, args.replication, args.arc, values, values, seeds)
    with open(out / "placement.csv", "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(["schema_version", "x", "y", "simulated", "model", "abs_error"])
        for r in rows:
            w.writerow([SCHEMA_VERSION, r["x"], r["y"], _fmt(r["simulated"]), _fmt(r["model"]),
                        _fmt(r["abs_error"])])
    mae = float(np.mean([r["abs_error"] for r in rows]))
    print(f"mean abs error {mae:.4f} over {len(rows)} cells -> {out / 'placement.csv'}")
    if args.cut is not None:
        ys = list(range(args.grid_min, args.grid_max + 1))
        cut = placement.movement_grid(args.partitions, args.replication, args.arc, [args.cut], ys, seeds)
        below = [(r["y"], r["simulated"]) for r in cut if r["y"] <= args.cut]
        above = [(r["y"], r["simulated"]) for r in cut if r["y"] >= args.cut]
        for side, pts in (("below", below), ("above", above)):
            if len(pts) >= 3:
                print(f"cut x={args.cut} {side}: R^2 {_r2(*zip(*pts)):.4f} over {len(pts)} points")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="elastree", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one scenario and write epochs.csv, queries.csv, summary.json")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int)
    r.add_argument("--mode", help="elastic | static | static:<layout name>")
    r.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a scenario over modes, seeds and a parameter grid in parallel")
    s.add_argument("scenario")
    s.add_argument("--modes", default="elastic,static:small,static:medium,static:large")
    s.add_argument("--seeds", default="0-4", help="e.g. 0-4 or 1,3,7")
    s.add_argument("--seed", type=int, help="shorthand for a single seed")
    s.add_argument("--grid", action="append", metavar="KEY=v1,v2",
                   help=f"sweep a numeric setting; KEY in {', '.join(sorted(_GRID_KEYS))}")
    s.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    o = sub.add_parser("optimize", help="one-shot layout forecast from a stats file")
    o.add_argument("stats")
    o.add_argument("--oracle", action="store_true", help="cross-check against exhaustive enumeration")
    o.set_defaults(func=cmd_optimize)

    v = sub.add_parser("validate-placement", help="compare simulated data movement with the model")
    v.add_argument("--partitions", type=int, default=128)
    v.add_argument("--replication", type=int, default=3)
    v.add_argument("--arc", type=int, default=4)
    v.add_argument("--grid-min", type=int, default=16)
    v.add_argument("--grid-max", type=int, default=128)
    v.add_argument("--grid-step", type=int, default=8)
    v.add_argument("--seeds", type=int, default=5, help="number of ring seeds to average")
    v.add_argument("--cut", type=int, help="also fit lines to a 1-D cut at this x")
    v.add_argument("--out")
    v.set_defaults(func=cmd_validate_placement)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "seed", None) is not None and args.command == "sweep":
        args.seeds = str(args.seed)
    source = getattr(args, "scenario", None) or getattr(args, "stats", None) or "elastree"
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc.render(source)}", file=sys.stderr)
        return EXIT_SCHEMA
    except UnsatisfiableBounds as exc:
        print(f"error: {source}: {exc}", file=sys.stderr)
        return EXIT_BOUNDS
    except ConfigError as exc:
        print(f"error: {source}: {exc}", file=sys.stderr)
        return EXIT_SCHEMA


if __name__ == "__main__":
    sys.exit(main())
