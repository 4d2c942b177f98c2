"""Experiment runner: sweeps over sampling rates, SNR levels and solvers.

A run writes ``results.csv`` (one row per trial), ``summary.json`` (mean and
standard deviation per (solver, rate, snr) cell) and, for the adaptive
solver, per-trial outer and inner trace CSVs under ``traces/``.
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .adaptive import (OuterOptions, adaptive_mrf_recover, fixed_mrf_recover, oracle_estimate,
                       train_fixed_prior)
from .baselines import omp
from .errors import ConfigError, InvalidDimensionError
from .fileio import read_csv, read_pgm
from .mrf import Neighborhood
from .recovery import InnerOptions
from .sensing import NOISELESS, add_noise_snr, gen_bernoulli_matrix, measure
from .synthetic import gen_synthetic_structured
from .transforms import Transform, parse_transform

SOLVERS = ("adaptive", "fixed", "oracle", "omp")
RESULTS_HEADER = ["solver", "rate", "snr_db", "trial", "psnr_db", "runtime_s", "inner_iters", "outer_iters"]
DEFAULT_RATES = (0.2, 0.25, 0.3, 0.35, 0.4)
DEFAULT_SNRS = (5.0, 10.0, 20.0, 30.0)


def psnr(ref, rec, peak: float) -> float:
    """10 log10(peak^2 / MSE) in dB; +inf when the inputs are identical."""
    ref = np.asarray(getattr(ref, "pixels", ref), dtype=float)
    rec = np.asarray(getattr(rec, "pixels", rec), dtype=float)
    if ref.shape != rec.shape:
        raise InvalidDimensionError(f"shape mismatch: {ref.shape} vs {rec.shape}")
    if not peak > 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((ref - rec) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak ** 2 / mse)


def _parse_snr(value) -> float:
    if value is None or (isinstance(value, str) and value.lower() in ("noiseless", "inf")):
        return NOISELESS
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad SNR level {value!r}") from None


@dataclass
class SyntheticSpec:
    n: int
    k: int
    cluster_count: int
    amplitude: float = 1.0
    shape: tuple[int, int] | None = None


@dataclass
class ExperimentConfig:
    dataset: str | SyntheticSpec
    output_dir: str
    transform: str = "none"
    sampling_rates: list[float] = field(default_factory=lambda: list(DEFAULT_RATES))
    snr_levels_db: list[float] = field(default_factory=lambda: list(DEFAULT_SNRS))
    solvers: list[str] = field(default_factory=lambda: ["adaptive", "omp"])
    trials: int = 3
    base_seed: int = 0
    neighborhood: str = "auto"
    max_outer: int = 5
    map_mode: str = "loopy"
    fixed_training: int = 10
    omp_sparsity: float = 0.5
    write_traces: bool = True

    def __post_init__(self):
        if isinstance(self.dataset, dict):
            d = dict(self.dataset)
            if "shape" in d and d["shape"] is not None:
                d["shape"] = tuple(d["shape"])
            try:
                self.dataset = SyntheticSpec(**{key.lower(): v for key, v in d.items()})
            except TypeError as exc:
                raise ConfigError(f"bad synthetic dataset spec: {exc}") from None
        self.sampling_rates = [float(r) for r in self.sampling_rates]
        self.snr_levels_db = [_parse_snr(s) for s in self.snr_levels_db]
        if not self.sampling_rates or any(not 0.0 < r <= 1.0 for r in self.sampling_rates):
            raise ConfigError(f"sampling rates must lie in (0, 1], got {self.sampling_rates}")
        if not self.snr_levels_db:
            raise ConfigError("need at least one SNR level")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        bad = [s for s in self.solvers if s not in SOLVERS]
        if bad or not self.solvers:
            raise ConfigError(f"unknown solvers {bad}; choose from {SOLVERS}")
        if self.neighborhood not in ("auto", "grid8", "chain2"):
            raise ConfigError(f"unknown neighbourhood {self.neighborhood!r}")
        if self.map_mode not in ("exact", "loopy"):
            raise ConfigError(f"unknown MAP mode {self.map_mode!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad experiment config: {exc}") from None

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["snr_levels_db"] = ["noiseless" if math.isinf(s) else s for s in self.snr_levels_db]
        return d


@dataclass
class TrialResult:
    solver: str
    sampling_rate: float
    snr_db: float
    trial_index: int
    psnr_db: float
    runtime_seconds: float
    inner_iters_total: int
    outer_iters: int
    converged: bool | None = None   # adaptive only: outer tolerance fired before the cap

    def row(self) -> list[str]:
        return [self.solver, repr(self.sampling_rate), _fmt(self.snr_db), str(self.trial_index),
                _fmt(self.psnr_db), f"{self.runtime_seconds:.6f}", str(self.inner_iters_total),
                str(self.outer_iters)]


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else repr(float(v))


@dataclass
class _Dataset:
    """Signals in the coefficient domain plus what PSNR needs."""

    coeffs: list[np.ndarray]
    transform: Transform | None
    references: list[np.ndarray]
    peaks: list[float]
    shape: tuple[int, int] | None

    @property
    def n(self) -> int:
        return self.coeffs[0].shape[0]

    def to_signal(self, c: np.ndarray) -> np.ndarray:
        if self.transform is None:
            return c
        return self.transform.inverse(c).reshape(-1)


def _load_dataset(cfg: ExperimentConfig) -> _Dataset:
    ds = cfg.dataset
    if isinstance(ds, SyntheticSpec):
        if cfg.transform != "none":
            raise ConfigError("synthetic datasets are generated in the coefficient domain; use transform 'none'")
        xs = [gen_synthetic_structured(ds.n, ds.k, ds.cluster_count, ds.amplitude,
                                       seed=_seed(cfg.base_seed, 1, t), shape=ds.shape)
              for t in range(cfg.trials)]
        peaks = [float(np.max(np.abs(x))) or 1.0 for x in xs]
        return _Dataset(xs, None, xs, peaks, ds.shape)

    root = Path(ds)
    if not root.is_dir():
        raise ConfigError(f"dataset directory {root} does not exist")
    images = sorted(root.glob("*.pgm"))
    vectors = sorted(root.glob("*.csv"))
    try:
        if images:
            pix = [read_pgm(p)[0] for p in images]
            shape = pix[0].shape
            if any(p.shape != shape for p in pix):
                raise ConfigError("all images in a dataset must share one shape")
            tf = parse_transform(cfg.transform, shape)
            coeffs = [tf.forward(p) for p in pix]
            refs = [p.reshape(-1) for p in pix]
            return _Dataset(coeffs, tf, refs, [255.0] * len(pix), shape)
        if vectors:
            vs = [np.atleast_1d(read_csv(p)).reshape(-1) for p in vectors]
            n = vs[0].shape[0]
            if any(v.shape[0] != n for v in vs):
                raise ConfigError("all vectors in a dataset must share one length")
            if cfg.transform == "none":
                return _Dataset(vs, None, vs, [float(np.max(np.abs(v))) or 1.0 for v in vs], None)
            tf = parse_transform(cfg.transform, (n, 1))
            if tf.kind != "pca":
                raise ConfigError("vector datasets support only the 'none' and 'pca' transforms")
            coeffs = [tf.forward(v.reshape(n, 1)) for v in vs]
            return _Dataset(coeffs, tf, vs, [float(np.max(np.abs(v))) or 1.0 for v in vs], None)
    except (OSError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"cannot load dataset {root}: {exc}") from None
    raise ConfigError(f"dataset directory {root} holds no .pgm or .csv files")


def _seed(base_seed: int, *key: int) -> int:
    """Independent 63-bit seed for a (base seed, key) pair."""
    ss = np.random.SeedSequence(entropy=base_seed, spawn_key=key)
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def _neighborhood(cfg: ExperimentConfig, data: _Dataset) -> Neighborhood:
    kind = cfg.neighborhood
    if kind == "auto":
        kind = "grid8" if data.shape is not None else "chain2"
    if kind == "grid8":
        if data.shape is None:
            raise ConfigError("grid8 needs 2-D signals; set a synthetic shape or use chain2")
        return Neighborhood.grid8(*data.shape)
    return Neighborhood.chain2(data.n)


def _fixed_prior(cfg: ExperimentConfig, data: _Dataset, nb: Neighborhood, trial: int):
    """Training signals: fresh synthetic draws, or every other dataset signal."""
    ds = cfg.dataset
    if isinstance(ds, SyntheticSpec):
        train = [gen_synthetic_structured(ds.n, ds.k, ds.cluster_count, ds.amplitude,
                                          seed=_seed(cfg.base_seed, 2, i), shape=ds.shape)
                 for i in range(cfg.fixed_training)]
    else:
        idx = trial % len(data.coeffs)
        train = [c for i, c in enumerate(data.coeffs) if i != idx] or [data.coeffs[idx]]
    return train_fixed_prior(train, nb)


@dataclass
class _Cell:
    index: int
    rate_index: int
    snr_index: int
    trial: int
    rate: float
    snr_db: float


def _run_cell(cfg: ExperimentConfig, data: _Dataset, nb: Neighborhood, priors: dict, cell: _Cell,
              trace_dir: Path | None) -> list[TrialResult]:
    n = data.n
    m = int(round(cell.rate * n))
    if m < 1:
        raise ConfigError(f"cell (rate={cell.rate}, snr={cell.snr_db}, trial={cell.trial}): M = {m} < 1")
    sig_idx = cell.trial % len(data.coeffs)
    x_true = data.coeffs[sig_idx]
    key = (cell.rate_index, cell.snr_index, cell.trial)
    A = gen_bernoulli_matrix(m, n, _seed(cfg.base_seed, 0, *key, 0))
    meas = add_noise_snr(measure(A, x_true), cell.snr_db, _seed(cfg.base_seed, 0, *key, 1))
    inner = InnerOptions(map_mode=cfg.map_mode)
    opts = OuterOptions(nb, max_outer=cfg.max_outer, inner=inner)
    ref = data.references[sig_idx]
    peak = data.peaks[sig_idx]

    out = []
    for solver in cfg.solvers:
        inner_iters, outer_iters, converged = 0, 0, None
        t0 = time.perf_counter()
        if solver == "adaptive":
            inner_traces = [] if trace_dir is not None else None
            x, trace = adaptive_mrf_recover(A, meas.y, opts, inner_traces=inner_traces)
            inner_iters, outer_iters, converged = trace.inner_iters_total, len(trace), trace.converged
        elif solver == "fixed":
            x = fixed_mrf_recover(A, meas.y, priors[cell.trial], opts)
        elif solver == "oracle":
            sigma = meas.true_noise_variance
            x = oracle_estimate(A, meas.y, np.where(x_true != 0, 1.0, -1.0), sigma)
        else:
            resid_tol = math.sqrt(m * meas.true_noise_variance) if meas.true_noise_variance > 0 else 1e-10
            x = omp(A, meas.y, max(1, int(cfg.omp_sparsity * m)), resid_tol)
        runtime = time.perf_counter() - t0
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"{solver} produced non-finite output in cell {cell.index}")
        rec = data.to_signal(x)
        value = psnr(ref, rec, peak)
        out.append(TrialResult(solver, cell.rate, cell.snr_db, cell.trial, value, runtime,
                               inner_iters, outer_iters, converged))
        if solver == "adaptive" and trace_dir is not None:
            _write_traces(trace_dir, cell, trace, inner_traces)
    return out


def _write_traces(trace_dir: Path, cell: _Cell, trace, inner_traces) -> None:
    stem = f"cell{cell.index:05d}_r{cell.rate_index}_s{cell.snr_index}_t{cell.trial}"
    with open(trace_dir / f"{stem}_outer.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ["outer_iter", "mask_density", "n_edges", "inner_iters", "L_final", "psnr"])
        w.writeheader()
        w.writerows(trace.rows())
    with open(trace_dir / f"{stem}_inner.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["outer_iter", "iter", "L", "k", "sigma_n", "rel_change"])
        for outer, rows in enumerate(inner_traces):
            for r in rows:
                w.writerow([outer, r["iter"], repr(r["L"]), r["k"], repr(r["sigma_n"]), repr(r["rel_change"])])


def worker_count() -> int:
    """Pool size: AMRF_THREADS if set, else the CPU count."""
    cap = os.environ.get("AMRF_THREADS")
    if cap:
        try:
            n = int(cap)
        except ValueError:
            raise ConfigError(f"AMRF_THREADS must be an integer, got {cap!r}") from None
        if n < 1:
            raise ConfigError(f"AMRF_THREADS must be >= 1, got {n}")
        return n
    return os.cpu_count() or 1


def summarize(results: list[TrialResult]) -> list[dict]:
    groups: dict[tuple, list[TrialResult]] = {}
    for r in results:
        groups.setdefault((r.solver, r.sampling_rate, r.snr_db), []).append(r)
    cells = []
    for (solver, rate, snr), rs in groups.items():
        p = np.array([r.psnr_db for r in rs])
        t = np.array([r.runtime_seconds for r in rs])
        cells.append({
            "solver": solver, "rate": rate, "snr_db": "noiseless" if math.isinf(snr) else snr,
            "trials": len(rs),
            "psnr_mean": float(p.mean()), "psnr_std": float(p.std()),
            "runtime_mean": float(t.mean()), "runtime_std": float(t.std()),
        })
    return cells


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> list[TrialResult]:
    """Run every (rate, snr, trial) cell for every solver and write the reports.

    All solvers in a cell share the same matrix and noise draw; seeds come
    from ``base_seed`` and the cell coordinates only, so the output does not
    depend on the pool size or scheduling.
    """
    data = _load_dataset(cfg)
    nb = _neighborhood(cfg, data)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace_dir = None
    if cfg.write_traces and "adaptive" in cfg.solvers:
        trace_dir = out_dir / "traces"
        trace_dir.mkdir(exist_ok=True)

    cells = []
    for ri, rate in enumerate(cfg.sampling_rates):
        if int(round(rate * data.n)) < 1:
            raise ConfigError(f"rate {rate} gives M < 1 for N = {data.n}")
        for si, snr in enumerate(cfg.snr_levels_db):
            for t in range(cfg.trials):
                cells.append(_Cell(len(cells), ri, si, t, rate, snr))

    priors = {}
    if "fixed" in cfg.solvers:
        if isinstance(cfg.dataset, SyntheticSpec):
            shared = _fixed_prior(cfg, data, nb, 0)
            priors = {t: shared for t in range(cfg.trials)}
        else:
            priors = {t: _fixed_prior(cfg, data, nb, t) for t in range(cfg.trials)}

    workers = workers or worker_count()
    if workers == 1:
        per_cell = [_run_cell(cfg, data, nb, priors, c, trace_dir) for c in cells]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_cell = list(pool.map(lambda c: _run_cell(cfg, data, nb, priors, c, trace_dir), cells))
    results = [r for rs in per_cell for r in rs]

    with open(out_dir / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        w.writerows(r.row() for r in results)
    # results.csv has a fixed header, so the per-signal PSNR peaks live here
    summary = {"config": cfg.to_dict(), "psnr_peaks": data.peaks, "cells": summarize(results)}
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return results


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


__all__ = ["ExperimentConfig", "SyntheticSpec", "TrialResult", "psnr", "run_experiment",
           "read_results", "summarize", "worker_count", "RESULTS_HEADER"]
