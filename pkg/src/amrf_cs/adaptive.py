"""Adaptive-MRF outer loop and the fixed-prior / oracle reference modes.

Each outer iteration thresholds the current estimate into a mask, rebuilds
the graph from the mask, refits the Boltzmann prior by pseudo-likelihood
and reruns the inner recovery with that prior.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidDimensionError
from .mrf import (BoltzmannMachine, Graph, Neighborhood, learn_pseudolikelihood,
                  update_graph)
from .recovery import (SIGMA_FLOOR, InnerOptions, RecoveryState, estimate_sparse_signal,
                       latent_cost, relative_change, update_sparse_signal)
from .sensing import SensingMatrix


@dataclass
class OuterOptions:
    neighborhood: Neighborhood
    max_outer: int = 5
    outer_rel_tol: float = 1e-3
    inner: InnerOptions = field(default_factory=InnerOptions)
    pl_iters: int = 20
    pl_step: float = 0.1
    pl_reg: float = 0.01
    warm_start: bool = False

    def __post_init__(self):
        if self.max_outer < 1:
            raise ValueError("max_outer must be >= 1")


@dataclass
class OuterRecord:
    outer_iter: int
    mask: np.ndarray
    n_edges: int
    inner_iters: int
    L_final: float
    rel_change: float
    psnr: float | None = None
    bm: BoltzmannMachine | None = field(default=None, repr=False)
    x: np.ndarray | None = field(default=None, repr=False)

    @property
    def mask_density(self) -> float:
        return float(np.mean(self.mask > 0))


@dataclass
class OuterTrace:
    records: list[OuterRecord] = field(default_factory=list)
    init_x: np.ndarray | None = None
    init_inner_iters: int = 0
    converged: bool = False

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i) -> OuterRecord:
        return self.records[i]

    @property
    def inner_iters_total(self) -> int:
        return self.init_inner_iters + sum(r.inner_iters for r in self.records)

    def rows(self) -> list[dict]:
        """Rows for the outer trace CSV."""
        return [{
            "outer_iter": r.outer_iter,
            "mask_density": r.mask_density,
            "n_edges": r.n_edges,
            "inner_iters": r.inner_iters,
            "L_final": r.L_final,
            "psnr": "" if r.psnr is None else r.psnr,
        } for r in self.records]


def threshold_support(x) -> np.ndarray:
    """+1 where |x_i| > mean(|x|), -1 elsewhere."""
    a = np.abs(np.asarray(x, dtype=float))
    return np.where(a > a.mean(), 1.0, -1.0)


def _psnr(ref, rec, peak) -> float:
    mse = float(np.mean((np.asarray(ref) - np.asarray(rec)) ** 2))
    return math.inf if mse == 0.0 else 10.0 * math.log10(peak ** 2 / mse)


def adaptive_mrf_recover(A: SensingMatrix, y, opts: OuterOptions, reference=None, peak: float | None = None,
                         inner_traces: list | None = None):
    """Recover x with a prior re-estimated from the measurements.

    ``reference`` (with ``peak``, default max|reference|) adds a per-iteration
    PSNR to the trace. ``inner_traces`` collects the per-sweep inner traces,
    initialization first. Returns ``(x, OuterTrace)``.
    """
    y = np.asarray(y, dtype=float)
    if opts.neighborhood.n_nodes != A.cols:
        raise InvalidDimensionError(
            f"neighbourhood covers {opts.neighborhood.n_nodes} nodes, signal has {A.cols}")
    if reference is not None and peak is None:
        peak = float(np.max(np.abs(reference))) or 1.0

    def new_inner_trace():
        if inner_traces is None:
            return None
        inner_traces.append([])
        return inner_traces[-1]

    trace = OuterTrace()
    x, state = estimate_sparse_signal(A, y, None, replace(opts.inner, fixed_support=True),
                                      trace=new_inner_trace())
    trace.init_x = x.copy()
    trace.init_inner_iters = state.iter
    bm = BoltzmannMachine.flat(Graph.empty(A.cols, opts.neighborhood))

    for t in range(1, opts.max_outer + 1):
        b = threshold_support(x)
        if np.any(b > 0):
            graph = update_graph(b, opts.neighborhood)
            bm = learn_pseudolikelihood(b, graph, opts.pl_iters, opts.pl_step, opts.pl_reg)
        init = state if opts.warm_start else None
        x_new, state = estimate_sparse_signal(A, y, bm, opts.inner, init=init, trace=new_inner_trace())
        rel = relative_change(x, x_new)
        trace.records.append(OuterRecord(
            outer_iter=t, mask=b, n_edges=bm.graph.n_edges, inner_iters=state.iter,
            L_final=latent_cost(state, A, y, bm), rel_change=rel,
            psnr=None if reference is None else _psnr(reference, x_new, peak),
            bm=bm, x=x_new.copy(),
        ))
        x = x_new
        if rel < opts.outer_rel_tol:
            trace.converged = True
            break
    return x, trace


def fixed_mrf_recover(A: SensingMatrix, y, bm_trained: BoltzmannMachine, opts: OuterOptions | InnerOptions):
    """Single inner recovery with a prior that is never adapted."""
    inner = opts.inner if isinstance(opts, OuterOptions) else opts
    x, _ = estimate_sparse_signal(A, y, bm_trained, inner)
    return x


def train_fixed_prior(training_signals, neighborhood: Neighborhood, pl_iters: int = 20,
                      pl_step: float = 0.1, pl_reg: float = 0.01) -> BoltzmannMachine:
    """Average of per-signal pseudo-likelihood fits on the full neighbourhood graph.

    Each training signal is reduced to its thresholded mask first.
    """
    graph = Graph.full(neighborhood)
    unary = np.zeros(graph.n_nodes)
    pairwise = np.zeros(graph.n_edges)
    count = 0
    for x in training_signals:
        bm = learn_pseudolikelihood(threshold_support(x), graph, pl_iters, pl_step, pl_reg)
        unary += bm.unary
        pairwise += bm.pairwise
        count += 1
    if count == 0:
        raise ValueError("need at least one training signal")
    return BoltzmannMachine(graph, unary / count, pairwise / count)


def oracle_estimate(A: SensingMatrix, y, s_true, sigma_n: float = SIGMA_FLOOR, nu=None) -> np.ndarray:
    """Closed-form signal estimate on the true support with given variances."""
    y = np.asarray(y, dtype=float)
    s_true = np.asarray(s_true, dtype=float)
    nu = np.ones(A.cols) if nu is None else np.broadcast_to(np.asarray(nu, dtype=float), (A.cols,)).copy()
    state = RecoveryState.initial(A, y)
    state.s = np.where(s_true > 0, 1.0, -1.0)
    state.nu = nu
    state.sigma_n = max(float(sigma_n), SIGMA_FLOOR)
    return update_sparse_signal(state, A, y)
