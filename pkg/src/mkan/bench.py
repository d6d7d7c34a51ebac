"""Timing harness: seconds-per-step of both backends across config sweeps.

Three sweep axes — grid size, spline degree, dataset size — each run with the
recursive and matrix backends on identical seeded data and identical
optimizer work, so the only difference being measured is the spline
evaluation path.  The interesting outputs are trends, not absolute seconds:
the recursive path's cost grows with degree while the matrix path's stays
nearly flat, and the speedup between them widens with dataset size.

Timing protocol: each sweep point trains ``steps + warmup`` full-batch steps;
the first ``warmup`` are discarded (allocator/cache warm-up dominates tiny
runs), the rest are averaged into seconds-per-step, and the whole measurement
repeats ``repeats`` times with the median kept.  BLAS worker threads can be
pinned via the MKAN_NUM_THREADS environment variable; the value is recorded
in the output CSV.
"""

from __future__ import annotations

import csv
import os
import time
from contextlib import nullcontext
from dataclasses import dataclass, replace

import numpy as np
from threadpoolctl import threadpool_limits

from .datasets import gen_hellokan
from .kan import NetworkSpec, init_network
from .training import TrainConfig, train

__all__ = [
    "AXES",
    "BenchRecord",
    "run_sweep",
    "speedup",
    "speedup_table",
    "write_records_csv",
    "write_speedup_csv",
]

AXES = ("grid", "degree", "dataset_size")
THREADS_ENV = "MKAN_NUM_THREADS"


@dataclass(frozen=True)
class BenchRecord:
    """One timing measurement (already the median over repeats)."""

    backend: str
    shape: tuple[int, ...]
    degree: int
    grid: int
    dataset_size: int
    steps: int  # timed steps behind seconds_per_step, warmup excluded
    seconds_per_step: float
    timestamp: float
    repeats: int

    def __post_init__(self) -> None:
        if not self.seconds_per_step > 0:
            raise ValueError("seconds_per_step must be positive")
        if self.steps < 5:
            raise ValueError(f"need at least 5 timed steps, got {self.steps}")


def _thread_limit():
    env = os.environ.get(THREADS_ENV)
    if env:
        return threadpool_limits(limits=int(env))
    return nullcontext()


def run_sweep(
    axis: str,
    values,
    spec: NetworkSpec,
    config: TrainConfig,
    *,
    n_train: int = 1000,
    n_test: int = 1000,
    dataset_seed: int = 0,
    repeats: int = 3,
    warmup: int = 2,
) -> list[BenchRecord]:
    """Time both backends at every value of one sweep axis.

    ``axis`` picks which field of ``spec`` (or the training-set size) the
    values override; everything else is held fixed.  Returns two records per
    value, recursive first, in the order given.

    Runs are grouped by backend, and within a backend each repeat round
    covers every sweep value back to back, so one backend's points are
    measured as close together in time as possible.  Slow drift in machine
    load then lands on all of that backend's points roughly equally instead
    of skewing the within-backend trend, and the median over rounds drops
    the odd disturbed one.
    """
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}, got {axis!r}")
    values = [int(v) for v in values]
    if not values:
        raise ValueError("values must be non-empty")
    if values != sorted(values):
        raise ValueError("values must be sorted ascending")
    if config.steps < 5:
        raise ValueError("bench runs need config.steps >= 5")

    points = []
    for value in values:
        point_spec = spec
        size = n_train
        if axis == "grid":
            point_spec = replace(spec, grid_size=value)
        elif axis == "degree":
            point_spec = replace(spec, degree=value)
        else:
            size = value
        points.append((value, point_spec, gen_hellokan(size, n_test, dataset_seed), size))

    times: dict[tuple[str, int], list[float]] = {}
    with _thread_limit():
        for backend in ("recursive", "matrix"):
            cfg = replace(config, backend=backend, steps=config.steps + warmup)
            for _ in range(repeats):
                for value, point_spec, dataset, _size in points:
                    model = init_network(point_spec)
                    try:
                        _, logs = train(model, dataset, cfg)
                    except Exception as exc:
                        raise RuntimeError(
                            f"sweep point {axis}={value} backend={backend} failed: {exc}"
                        ) from exc
                    times.setdefault((backend, value), []).append(
                        float(np.mean([log.seconds for log in logs[warmup:]]))
                    )

    records: list[BenchRecord] = []
    for value, point_spec, _dataset, size in points:
        for backend in ("recursive", "matrix"):
            records.append(
                BenchRecord(
                    backend=backend,
                    shape=point_spec.shape,
                    degree=point_spec.degree,
                    grid=point_spec.grid_size,
                    dataset_size=size,
                    steps=config.steps,
                    seconds_per_step=float(np.median(times[(backend, value)])),
                    timestamp=time.time(),
                    repeats=repeats,
                )
            )
    return records


def speedup(kan_spt: float, matrix_spt: float) -> float:
    """Recursive-backend seconds-per-step over matrix-backend seconds-per-step."""
    if not (kan_spt > 0 and matrix_spt > 0):
        raise ValueError("seconds-per-step values must be positive")
    return kan_spt / matrix_spt


def _axis_value(record: BenchRecord, axis: str) -> int:
    if axis == "grid":
        return record.grid
    if axis == "degree":
        return record.degree
    return record.dataset_size


def speedup_table(records: list[BenchRecord], axis: str) -> list[tuple[int, float, float, float]]:
    """Pair each value's recursive/matrix records into (value, rec, mat, speedup)."""
    by_value: dict[int, dict[str, float]] = {}
    for rec in records:
        by_value.setdefault(_axis_value(rec, axis), {})[rec.backend] = rec.seconds_per_step
    table = []
    for value, pair in by_value.items():
        if set(pair) != {"recursive", "matrix"}:
            raise ValueError(f"value {value} is missing one backend's record")
        table.append((value, pair["recursive"], pair["matrix"], speedup(pair["recursive"], pair["matrix"])))
    return table


def _shape_str(shape: tuple[int, ...]) -> str:
    return "x".join(str(w) for w in shape)


def write_records_csv(records: list[BenchRecord], path) -> None:
    with open(path, "w", newline="") as f:
        f.write(f"# {THREADS_ENV}={os.environ.get(THREADS_ENV, 'unset')}\n")
        writer = csv.writer(f)
        writer.writerow(
            ["backend", "shape", "degree", "grid", "dataset_size", "steps",
             "seconds_per_step", "repeat"]
        )
        for rec in records:
            writer.writerow(
                [rec.backend, _shape_str(rec.shape), rec.degree, rec.grid,
                 rec.dataset_size, rec.steps, rec.seconds_per_step, rec.repeats]
            )


def write_speedup_csv(table: list[tuple[int, float, float, float]], path) -> None:
    with open(path, "w", newline="") as f:
        f.write(f"# {THREADS_ENV}={os.environ.get(THREADS_ENV, 'unset')}\n")
        writer = csv.writer(f)
        writer.writerow(["axis_value", "kan_spt", "matrix_spt", "speedup"])
        for row in table:
            writer.writerow(list(row))
