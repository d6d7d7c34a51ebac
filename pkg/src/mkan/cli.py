"""Command-line interface: verify / train / bench / basis / gen-data.

Exit codes: 0 success, 1 validation failure (failed suite, divergence,
violated trend), 2 usage error.  Every run echoes its resolved configuration
as one JSON line on stderr so results can be reproduced from logs alone.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from fractions import Fraction

import numpy as np

from . import bench, datasets, kan, training, verify
from .basis_matrix import cached_basis_matrix


def _echo_config(command: str, args: argparse.Namespace) -> None:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    print(json.dumps({"command": command, **cfg}, default=str), file=sys.stderr)


def _parse_ints(text: str, flag: str, parser: argparse.ArgumentParser) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v != ""]
    except ValueError:
        parser.error(f"{flag} expects comma-separated integers, got {text!r}")


def _cmd_verify(args, parser) -> int:
    if args.samples < 1:
        parser.error("--samples must be >= 1")
    if not 0 <= args.max_degree <= 32:
        parser.error("--max-degree must be in [0, 32]")
    if args.max_grid < 1:
        parser.error("--max-grid must be >= 1")
    _echo_config("verify", args)
    results = verify.run_all(args.max_degree, args.max_grid, args.samples, args.seed)
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"{status} {res.name}: {res.detail}")
    return 0 if all(r.passed for r in results) else 1


def _load_dataset(name: str, seed: int, parser):
    if name == "hellokan":
        return datasets.gen_hellokan(seed=seed)
    if name in datasets.FEYNMAN_EQUATIONS:
        return datasets.normalize_inputs(datasets.gen_feynman(name, seed=seed))
    try:
        ds = datasets.read_csv(name)
    except FileNotFoundError:
        parser.error(
            f"--dataset must be hellokan, one of {sorted(datasets.FEYNMAN_EQUATIONS)}, "
            f"or a CSV path; {name!r} is none of these"
        )
    if any(r != (-1.0, 1.0) for r in ds.ranges):
        ds = datasets.normalize_inputs(ds)
    return ds


def _cmd_train(args, parser) -> int:
    shape = tuple(_parse_ints(args.shape, "--shape", parser))
    if len(shape) < 2:
        parser.error("--shape needs at least input and output widths, e.g. 2,5,1")
    schedule = tuple(_parse_ints(args.grid_update_steps, "--grid-update-steps", parser)) or None
    _echo_config("train", args)
    ds = _load_dataset(args.dataset, args.seed, parser)
    if shape[0] != ds.X.shape[1]:
        parser.error(f"--shape starts with {shape[0]} inputs but the dataset has {ds.X.shape[1]}")
    try:
        spec = kan.NetworkSpec(
            shape=shape,
            degree=args.degree,
            grid_size=args.grid,
            seed=args.seed,
            backend=args.backend,
            base_function=args.base_function,
        )
        config = training.TrainConfig(
            steps=args.steps,
            learning_rate=args.lr,
            seed=args.seed,
            backend=args.backend,
            grid_update_schedule=schedule,
        )
    except ValueError as exc:
        parser.error(str(exc))
    model = kan.init_network(spec)
    try:
        model, logs = training.train(model, ds, config)
    except training.TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        training.write_step_log(exc.logs, f"{args.out}.csv")
        return 1
    training.write_step_log(logs, f"{args.out}.csv")
    kan.save_model(model, f"{args.out}.mkan")
    last = logs[-1]
    print(f"final train_rmse={last.train_rmse:.6g} test_rmse={last.test_rmse:.6g}")
    print(f"wrote {args.out}.csv and {args.out}.mkan")
    return 0


def _cmd_bench(args, parser) -> int:
    values = _parse_ints(args.values, "--values", parser)
    if not values:
        parser.error("--values must list at least one integer")
    shape = tuple(_parse_ints(args.shape, "--shape", parser))
    if len(shape) < 2:
        parser.error("--shape needs at least input and output widths")
    if args.check_trend and args.axis == "grid":
        parser.error("--check-trend is defined for the degree and dataset_size axes only")
    _echo_config("bench", args)
    try:
        spec = kan.NetworkSpec(
            shape=shape, degree=args.degree, grid_size=args.grid, seed=args.seed
        )
        config = training.TrainConfig(steps=args.steps, seed=args.seed)
        records = bench.run_sweep(
            args.axis,
            values,
            spec,
            config,
            n_train=args.dataset_size,
            dataset_seed=args.seed,
            repeats=args.repeats,
        )
    except ValueError as exc:
        parser.error(str(exc))
    bench.write_records_csv(records, f"{args.out}.csv")
    table = bench.speedup_table(records, args.axis)
    bench.write_speedup_csv(table, f"{args.out}-speedup.csv")
    for value, rec, mat, ratio in table:
        print(
            f"{args.axis}={value}: recursive {rec * 1e3:.3f} ms/step, "
            f"matrix {mat * 1e3:.3f} ms/step, speedup {ratio:.2f}x"
        )
    print(f"wrote {args.out}.csv and {args.out}-speedup.csv")
    if args.check_trend:
        if args.axis == "dataset_size":
            ratios = [row[3] for row in table]
            if any(b < a for a, b in zip(ratios, ratios[1:])):
                print(f"trend violated: speedups not non-decreasing: {ratios}")
                return 1
            print("trend ok: speedup non-decreasing with dataset size")
        else:  # degree
            rec_ratio = table[-1][1] / table[0][1]
            mat_ratio = table[-1][2] / table[0][2]
            ok = rec_ratio >= 3.0 and mat_ratio <= 2.5
            print(
                f"degree scaling: recursive x{rec_ratio:.2f} (want >= 3), "
                f"matrix x{mat_ratio:.2f} (want <= 2.5)"
            )
            if not ok:
                print("trend violated")
                return 1
    return 0


def _cmd_basis(args, parser) -> int:
    if args.order < 1:
        parser.error("--order must be >= 1")
    _echo_config("basis", args)
    psi = cached_basis_matrix(args.order)
    print(f"basis matrix, order {args.order} (degree {args.order - 1}):")
    print(np.array2string(psi.values, precision=12, suppress_small=True))
    print(f"exact form, entries over {psi.order - 1}! = {psi.denominator}:")
    for row in psi.numerators:
        print("  [" + ", ".join(str(Fraction(int(v), 1)) for v in row) + "]")
    return 0


def _cmd_gen_data(args, parser) -> int:
    if args.n_train < 1 or args.n_test < 1:
        parser.error("--n-train and --n-test must be >= 1")
    _echo_config("gen-data", args)
    if args.dataset == "hellokan":
        ds = datasets.gen_hellokan(args.n_train, args.n_test, args.seed)
    elif args.dataset in datasets.FEYNMAN_EQUATIONS:
        ds = datasets.gen_feynman(args.dataset, args.n_train, args.n_test, args.seed)
    else:
        parser.error(
            f"--dataset must be hellokan or one of {sorted(datasets.FEYNMAN_EQUATIONS)}"
        )
    if args.normalize:
        ds = datasets.normalize_inputs(ds)
    datasets.write_csv(ds, args.out)
    print(f"wrote {args.out} ({ds.n_train} train + {ds.n_test} test rows)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mkan",
        description="KAN engine with recursive and basis-matrix spline backends",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run the built-in verification suites")
    p.add_argument("--max-degree", type=int, default=12)
    p.add_argument("--max-grid", type=int, default=64)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("train", help="train a model and write step log + model file")
    p.add_argument("--dataset", required=True,
                   help="hellokan, a Feynman equation name, or a dataset CSV path")
    p.add_argument("--shape", default="2,5,1", help="layer widths, e.g. 2,5,1")
    p.add_argument("--degree", type=int, default=3)
    p.add_argument("--grid", type=int, default=5)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--backend", choices=kan.BACKENDS, default="matrix")
    p.add_argument("--base-function", choices=kan.BASE_FUNCTIONS, default="silu")
    p.add_argument("--grid-update-steps", default="",
                   help="comma-separated step indices for grid updates")
    p.add_argument("--out", default="mkan-run", help="output prefix for .csv and .mkan")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("bench", help="time both backends across a sweep")
    p.add_argument("--axis", required=True, choices=bench.AXES)
    p.add_argument("--values", required=True, help="comma-separated sweep values")
    p.add_argument("--shape", default="2,5,1")
    p.add_argument("--degree", type=int, default=3)
    p.add_argument("--grid", type=int, default=3)
    p.add_argument("--steps", type=int, default=10, help="timed steps per point")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--dataset-size", type=int, default=1000)
    p.add_argument("--check-trend", action="store_true",
                   help="exit 1 if the expected scaling trend does not hold")
    p.add_argument("--out", default="mkan-bench", help="output prefix for the CSVs")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("basis", help="print a basis matrix as decimals and exact fractions")
    p.add_argument("--order", type=int, required=True)
    p.set_defaults(func=_cmd_basis)

    p = sub.add_parser("gen-data", help="generate a dataset CSV")
    p.add_argument("--dataset", required=True)
    p.add_argument("--n-train", type=int, default=1000)
    p.add_argument("--n-test", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--normalize", action="store_true",
                   help="map inputs onto [-1, 1] before writing")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args, parser)


if __name__ == "__main__":
    raise SystemExit(main())
