"""Seeded synthetic regression datasets and CSV import/export.

Four target functions: the two-variable "hellokan" benchmark
``exp(sin(pi*x1) + x2^2)`` on [-1, 1]^2, and three closed-form physics
equations sampled on ranges where they stay finite and smooth:

    I.6.20b   exp(-t^2 / (2 s^2)) / sqrt(2 pi s^2)   t in [-1, 1], s in [0.5, 2]
    I.12.11   1 + a*sin(t)                            a in [0, 1], t in [0, pi]
    I.26.2    arcsin(n * sin(t))                      n in [0, 0.99], t in [-pi/2, pi/2]

Sampling is uniform and independent per variable from a seeded generator, so
a (name, sizes, seed) triple is bitwise reproducible.  The train split is the
first ``n_train`` rows, the test split the rest — disjoint by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

__all__ = [
    "Dataset",
    "FEYNMAN_EQUATIONS",
    "gen_hellokan",
    "gen_feynman",
    "normalize_inputs",
    "write_csv",
    "read_csv",
]


@dataclass(frozen=True)
class Dataset:
    name: str
    X: np.ndarray
    Y: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    ranges: tuple[tuple[float, float], ...]
    seed: int
    source_ranges: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self) -> None:
        if self.X.ndim != 2 or self.Y.shape != (self.X.shape[0],):
            raise ValueError("X must be [n, d] with matching 1-D targets")
        if len(self.ranges) != self.X.shape[1]:
            raise ValueError("need one sampling range per input variable")
        if np.intersect1d(self.train_idx, self.test_idx).size:
            raise ValueError("train and test indices overlap")
        if not np.all(np.isfinite(self.Y)):
            raise ValueError("targets must be finite")
        for j, (lo, hi) in enumerate(self.ranges):
            col = self.X[:, j]
            if col.min() < lo or col.max() > hi:
                raise ValueError(f"column {j} leaves its declared range [{lo}, {hi}]")
        for arr in (self.X, self.Y, self.train_idx, self.test_idx):
            arr.flags.writeable = False

    @property
    def n_train(self) -> int:
        return self.train_idx.size

    @property
    def n_test(self) -> int:
        return self.test_idx.size

    def inverse_inputs(self, Xn: np.ndarray) -> np.ndarray:
        """Map normalized inputs back to the original sampling ranges."""
        if self.source_ranges is None:
            raise ValueError("dataset was not normalized; nothing to invert")
        lo = np.array([r[0] for r in self.source_ranges])
        hi = np.array([r[1] for r in self.source_ranges])
        return lo + (np.asarray(Xn) + 1.0) * (hi - lo) / 2.0


def _hellokan(X: np.ndarray) -> np.ndarray:
    return np.exp(np.sin(np.pi * X[:, 0]) + X[:, 1] ** 2)


def _i_6_20b(X: np.ndarray) -> np.ndarray:
    theta, sigma = X[:, 0], X[:, 1]
    return np.exp(-(theta**2) / (2.0 * sigma**2)) / np.sqrt(2.0 * np.pi * sigma**2)


def _i_12_11(X: np.ndarray) -> np.ndarray:
    return 1.0 + X[:, 0] * np.sin(X[:, 1])


def _i_26_2(X: np.ndarray) -> np.ndarray:
    return np.arcsin(X[:, 0] * np.sin(X[:, 1]))


FEYNMAN_EQUATIONS: dict[str, tuple[tuple[tuple[float, float], ...], Callable]] = {
    "I.6.20b": (((-1.0, 1.0), (0.5, 2.0)), _i_6_20b),
    "I.12.11": (((0.0, 1.0), (0.0, np.pi)), _i_12_11),
    "I.26.2": (((0.0, 0.99), (-np.pi / 2, np.pi / 2)), _i_26_2),
}


def _generate(name, ranges, fn, n_train, n_test, seed) -> Dataset:
    if n_train < 1 or n_test < 1:
        raise ValueError("n_train and n_test must be >= 1")
    rng = np.random.default_rng(seed)
    n = n_train + n_test
    d = len(ranges)
    lo = np.array([r[0] for r in ranges])
    hi = np.array([r[1] for r in ranges])
    X = lo + rng.random((n, d)) * (hi - lo)
    return Dataset(
        name=name,
        X=X,
        Y=fn(X),
        train_idx=np.arange(n_train),
        test_idx=np.arange(n_train, n),
        ranges=tuple(ranges),
        seed=int(seed),
    )


def gen_hellokan(n_train: int = 1000, n_test: int = 1000, seed: int = 0) -> Dataset:
    """f(x1, x2) = exp(sin(pi*x1) + x2^2), both variables uniform on [-1, 1]."""
    return _generate("hellokan", ((-1.0, 1.0), (-1.0, 1.0)), _hellokan, n_train, n_test, seed)


def gen_feynman(which: str, n_train: int = 1000, n_test: int = 1000, seed: int = 0) -> Dataset:
    try:
        ranges, fn = FEYNMAN_EQUATIONS[which]
    except KeyError:
        raise ValueError(
            f"unknown equation {which!r}; choose from {sorted(FEYNMAN_EQUATIONS)}"
        ) from None
    return _generate(which, ranges, fn, n_train, n_test, seed)


def normalize_inputs(ds: Dataset) -> Dataset:
    """Affine-map every input variable onto [-1, 1], keeping the inverse.

    Endpoints map exactly; :meth:`Dataset.inverse_inputs` undoes the map to
    within rounding (<= 1e-12 relative).
    """
    if ds.source_ranges is not None:
        raise ValueError("dataset inputs are already normalized")
    lo = np.array([r[0] for r in ds.ranges])
    hi = np.array([r[1] for r in ds.ranges])
    if np.any(hi <= lo):
        raise ValueError("cannot normalize a degenerate range")
    Xn = 2.0 * (ds.X - lo) / (hi - lo) - 1.0
    return replace(
        ds,
        X=Xn,
        ranges=tuple((-1.0, 1.0) for _ in ds.ranges),
        source_ranges=ds.ranges,
    )


def write_csv(ds: Dataset, path) -> None:
    """Header ``x1..xd,y`` preceded by one comment line of generation metadata."""
    d = ds.X.shape[1]
    meta = {
        "name": ds.name,
        "seed": ds.seed,
        "n_train": int(ds.n_train),
        "n_test": int(ds.n_test),
        "ranges": [list(r) for r in ds.ranges],
        "source_ranges": [list(r) for r in ds.source_ranges] if ds.source_ranges else None,
    }
    with open(path, "w", newline="") as f:
        f.write(f"# mkan-dataset {json.dumps(meta)}\n")
        f.write(",".join([f"x{j + 1}" for j in range(d)] + ["y"]) + "\n")
        for row, y in zip(ds.X, ds.Y):
            f.write(",".join(repr(float(v)) for v in row) + f",{float(y)!r}\n")


def read_csv(path) -> Dataset:
    """Reload a dataset CSV.  Files written by :func:`write_csv` round-trip
    bitwise; foreign CSVs (plain ``x1..xd,y`` header) get a half/half split."""
    lines = Path(path).read_text().splitlines()
    meta = None
    if lines and lines[0].startswith("# mkan-dataset "):
        meta = json.loads(lines[0][len("# mkan-dataset ") :])
        lines = lines[1:]
    if not lines:
        raise ValueError(f"{path}: no header row")
    header = lines[0].split(",")
    if header[-1] != "y" or len(header) < 2:
        raise ValueError(f"{path}: expected header x1..xd,y, got {lines[0]!r}")
    d = len(header) - 1
    data = np.array(
        [[float(v) for v in line.split(",")] for line in lines[1:] if line.strip()]
    )
    if data.shape[1] != d + 1:
        raise ValueError(f"{path}: rows disagree with header width")
    X, Y = data[:, :d], data[:, d]
    n = X.shape[0]
    if meta is not None:
        n_train = meta["n_train"]
        ranges = tuple(tuple(r) for r in meta["ranges"])
        source = meta.get("source_ranges")
        return Dataset(
            name=meta["name"],
            X=X,
            Y=Y,
            train_idx=np.arange(n_train),
            test_idx=np.arange(n_train, n),
            ranges=ranges,
            seed=meta["seed"],
            source_ranges=tuple(tuple(r) for r in source) if source else None,
        )
    n_train = n // 2
    ranges = tuple((float(X[:, j].min()), float(X[:, j].max())) for j in range(d))
    return Dataset(
        name=Path(path).stem,
        X=X,
        Y=Y,
        train_idx=np.arange(n_train),
        test_idx=np.arange(n_train, n),
        ranges=ranges,
        seed=0,
    )
