"""Sweep drivers and multi-seed aggregation."""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import enum
import math
import os
import time
from typing import Any, Sequence

import numpy as np

from .featuremap import RbfKind
from .train import TrainConfig, train


class SweepAxis(str, enum.Enum):
    DIMENSION = "dimension"
    XI = "xi"
    GAMMA = "gamma"
    FEATURE_COUNT = "feature_count"
    POLY_COUNT = "poly_count"
    RBF_KIND = "rbf_kind"


class SweepError(ValueError):
    pass


DEFAULT_SEEDS = (0, 1, 2)


@dataclasses.dataclass(frozen=True)
class SweepSpec:
    base: TrainConfig
    axis: SweepAxis
    values: tuple
    seeds: tuple[int, ...] = DEFAULT_SEEDS

    def __post_init__(self):
        object.__setattr__(self, "axis", SweepAxis(self.axis))
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.values:
            raise SweepError("sweep values must be non-empty")
        if not self.seeds:
            raise SweepError("sweep seeds must be non-empty")


@dataclasses.dataclass
class Cell:
    axis_value: Any
    seed: int
    l2re: float | None
    loss_r: float
    loss_ic: float
    loss_bc: float
    wall_s: float
    error: str | None = None


@dataclasses.dataclass
class AggregateRow:
    axis_value: Any
    mean_l2re: float
    std_l2re: float
    n: int

    @property
    def single(self) -> bool:
        return self.n == 1


@dataclasses.dataclass
class SweepResult:
    spec: SweepSpec
    cells: list[Cell]
    aggregates: list[AggregateRow]


def configure_cell(base: TrainConfig, axis: SweepAxis, value, seed: int) -> TrainConfig:
    """Training config for one (value, seed) cell of a sweep."""
    axis = SweepAxis(axis)
    fm = base.feature_map.replace(seed=seed)
    changes: dict[str, Any] = {"seed": seed}
    if axis is SweepAxis.DIMENSION:
        changes["problem_options"] = {**base.problem_options, "dim": int(value)}
    elif axis is SweepAxis.XI:
        fm = fm.replace(xi=float(value))
    elif axis is SweepAxis.GAMMA:
        fm = fm.replace(gamma=float(value))
    elif axis is SweepAxis.FEATURE_COUNT:
        fm = fm.replace(m=int(value))
    elif axis is SweepAxis.POLY_COUNT:
        fm = fm.replace(p_terms=int(value))
    else:
        fm = fm.replace(rbf_kind=RbfKind(value))
    return base.replace(feature_map=fm, **changes)


def run_cell(base: TrainConfig, axis: SweepAxis, value, seed: int) -> Cell:
    t0 = time.perf_counter()
    try:
        report = train(configure_cell(base, axis, value, seed))
    except Exception as exc:  # a failed cell must not stop the sweep
        return Cell(value, seed, None, math.nan, math.nan, math.nan,
                    time.perf_counter() - t0, f"{type(exc).__name__}: {exc}")
    fl = report.final_losses
    return Cell(value, seed, report.l2re, fl["loss_r"], fl["loss_ic"], fl["loss_bc"],
                report.wall_s)


def worker_count(requested: int | None = None) -> int:
    cap = os.environ.get("FEATPINN_THREADS")
    n = requested if requested is not None else (os.cpu_count() or 1)
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return max(1, n)


def run_sweep(spec: SweepSpec, workers: int | None = None) -> SweepResult:
    """Train one model per (value, seed); cells are independent."""
    jobs = [(v, s) for v in spec.values for s in spec.seeds]
    n = min(worker_count(workers), len(jobs))
    if n <= 1:
        cells = [run_cell(spec.base, spec.axis, v, s) for v, s in jobs]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=n) as pool:
            futures = [pool.submit(run_cell, spec.base, spec.axis, v, s) for v, s in jobs]
            cells = [f.result() for f in futures]
    return SweepResult(spec, cells, aggregate(cells))


def aggregate(cells: Sequence[Cell]) -> list[AggregateRow]:
    """Per-value mean and sample standard deviation of L2RE.

    Values keep their first-seen order; failed cells are left out of the
    statistics (a value with no successful cell gets NaN).
    """
    if not cells:
        raise SweepError("cannot aggregate an empty cell set")
    groups: dict[Any, list[float]] = {}
    for c in cells:
        key = c.axis_value
        groups.setdefault(key, [])
        if c.l2re is not None and c.error is None:
            groups[key].append(float(c.l2re))
    rows = []
    for key, vals in groups.items():
        vals = sorted(vals)  # fixed summation order
        if not vals:
            rows.append(AggregateRow(key, math.nan, math.nan, 0))
        elif len(vals) == 1:
            rows.append(AggregateRow(key, vals[0], 0.0, 1))
        else:
            rows.append(AggregateRow(key, float(np.mean(vals)), float(np.std(vals, ddof=1)),
                                     len(vals)))
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v.value if isinstance(v, enum.Enum) else v)


def write_sweep_csv(path, cells: Sequence[Cell]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["axis_value", "seed", "l2re", "loss_r", "loss_ic", "loss_bc", "wall_s"])
        for c in cells:
            w.writerow([_fmt(c.axis_value), c.seed, _fmt(c.l2re), _fmt(c.loss_r),
                        _fmt(c.loss_ic), _fmt(c.loss_bc), _fmt(c.wall_s)])


def write_aggregate_csv(path, rows: Sequence[AggregateRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["axis_value", "mean_l2re", "std_l2re"])
        for r in rows:
            w.writerow([_fmt(r.axis_value), _fmt(r.mean_l2re), _fmt(r.std_l2re)])
