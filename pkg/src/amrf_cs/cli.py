"""Command-line entry point ``amrf-cs``.

Exit codes: 0 on success, 2 on configuration or input errors, 3 on
numeric failures.
"""
from __future__ import annotations

import argparse
import csv
import math
import sys

import numpy as np

from .adaptive import OuterOptions, adaptive_mrf_recover, fixed_mrf_recover
from .baselines import omp
from .bench import ExperimentConfig, psnr, run_experiment
from .errors import AmrfError, ConfigError, NumericError
from .fileio import read_csv, read_pgm, write_csv
from .mrf import BoltzmannMachine, Neighborhood
from .recovery import InnerOptions, estimate_sparse_signal
from .sensing import SensingMatrix
from .synthetic import gen_synthetic_structured

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _load_signal(path: str) -> np.ndarray:
    if path.lower().endswith(".pgm"):
        return read_pgm(path)[0]
    return read_csv(path)


def _neighborhood(spec: str | None, n: int) -> Neighborhood:
    if spec is None or spec == "chain2":
        return Neighborhood.chain2(n)
    kind, _, dims = spec.partition(":")
    if kind != "grid8" or not dims:
        raise ConfigError(f"neighbourhood must be chain2 or grid8:HxW, got {spec!r}")
    try:
        h, w = (int(v) for v in dims.lower().split("x"))
    except ValueError:
        raise ConfigError(f"bad grid dimensions {dims!r}") from None
    if h * w != n:
        raise ConfigError(f"grid {h}x{w} does not cover N = {n}")
    return Neighborhood.grid8(h, w)


def cmd_run(args) -> int:
    cfg = ExperimentConfig.from_json(args.config)
    results = run_experiment(cfg, workers=args.workers)
    print(f"wrote {len(results)} rows to {cfg.output_dir}")
    return EXIT_OK


def cmd_recover(args) -> int:
    try:
        entries = read_csv(args.matrix)
        y = np.atleast_1d(read_csv(args.y)).reshape(-1)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read inputs: {exc}") from None
    if entries.ndim != 2:
        raise ConfigError("matrix file must hold a 2-D array")
    A = SensingMatrix.from_array(entries, normalize=not args.no_normalize)
    nb = _neighborhood(args.neighborhood, A.cols)
    inner = InnerOptions(map_mode=args.map_mode)
    rows = None
    if args.solver == "adaptive":
        traces = []
        x, trace = adaptive_mrf_recover(A, y, OuterOptions(nb, inner=inner), inner_traces=traces)
        rows = [dict(outer_iter=i, **r) for i, t in enumerate(traces) for r in t]
    elif args.solver == "inner":
        traces = []
        x, _ = estimate_sparse_signal(A, y, None, inner, trace=traces)
        rows = [dict(outer_iter=0, **r) for r in traces]
    elif args.solver == "fixed":
        if not args.prior:
            raise ConfigError("--solver fixed needs --prior <bm.json>")
        try:
            with open(args.prior) as fh:
                bm = BoltzmannMachine.from_json(fh.read())
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot read prior: {exc}") from None
        x = fixed_mrf_recover(A, y, bm, inner)
    else:
        x = omp(A, y, args.k_max or max(1, A.rows // 2))
    if not np.all(np.isfinite(x)):
        raise NumericError("recovery produced non-finite values")
    write_csv(args.out, x)
    if args.trace:
        if rows is None:
            raise ConfigError(f"--trace is not available for solver {args.solver!r}")
        with open(args.trace, "w", newline="") as fh:
            w = csv.DictWriter(fh, ["outer_iter", "iter", "L", "k", "sigma_n", "rel_change"])
            w.writeheader()
            w.writerows(rows)
    return EXIT_OK


def cmd_psnr(args) -> int:
    try:
        ref, rec = _load_signal(args.ref), _load_signal(args.rec)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read inputs: {exc}") from None
    value = psnr(ref, rec, args.peak)
    print("inf" if math.isinf(value) else f"{value:.4f}")
    return EXIT_OK


def cmd_gen(args) -> int:
    try:
        n, k, c, amp = args.synthetic.split(",")
        n, k, c, amp = int(n), int(k), int(c), float(amp)
    except ValueError:
        raise ConfigError(f"--synthetic expects N,k,c,amp, got {args.synthetic!r}") from None
    shape = None
    if args.shape:
        try:
            shape = tuple(int(v) for v in args.shape.lower().split("x"))
        except ValueError:
            raise ConfigError(f"bad shape {args.shape!r}") from None
    x = gen_synthetic_structured(n, k, c, amp, args.seed, shape=shape)
    write_csv(args.out if args.out else sys.stdout, x)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="amrf-cs", description="Adaptive-MRF compressive sensing recovery")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment sweep from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--workers", type=int, default=None, help="pool size (default: AMRF_THREADS or CPU count)")
    r.set_defaults(func=cmd_run)

    r = sub.add_parser("recover", help="recover x from a matrix and measurements")
    r.add_argument("--matrix", required=True)
    r.add_argument("--y", required=True)
    r.add_argument("--solver", choices=("adaptive", "inner", "fixed", "omp"), default="adaptive")
    r.add_argument("--out", required=True)
    r.add_argument("--trace", default=None)
    r.add_argument("--neighborhood", default=None, help="chain2 (default) or grid8:HxW")
    r.add_argument("--map-mode", choices=("exact", "loopy"), default="loopy")
    r.add_argument("--prior", default=None, help="trained prior JSON for --solver fixed")
    r.add_argument("--k-max", type=int, default=None, help="OMP sparsity cap (default M/2)")
    r.add_argument("--no-normalize", action="store_true", help="use the matrix columns as given")
    r.set_defaults(func=cmd_recover)

    r = sub.add_parser("psnr", help="PSNR between two signals (CSV or PGM)")
    r.add_argument("--ref", required=True)
    r.add_argument("--rec", required=True)
    r.add_argument("--peak", type=float, required=True)
    r.set_defaults(func=cmd_psnr)

    r = sub.add_parser("gen", help="write a synthetic clustered-support signal as CSV")
    r.add_argument("--synthetic", required=True, metavar="N,k,c,amp")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--shape", default=None, metavar="HxW", help="place 2-D blobs instead of 1-D runs")
    r.add_argument("--out", default=None)
    r.set_defaults(func=cmd_gen)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (NumericError, FloatingPointError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"amrf-cs: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (AmrfError, ValueError, OSError) as exc:
        print(f"amrf-cs: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
