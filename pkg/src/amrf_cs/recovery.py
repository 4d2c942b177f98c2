"""Alternating minimization of the latent-Bayes recovery cost.

For a support s (mask v), diagonal signal variances nu and noise variance
sigma_n the cost is::

    L = |y - A_s x_s|^2 / (2 sigma_n) + x_s^T diag(nu_s)^-1 x_s / 2
        + log|sigma_n I + A_s diag(nu_s) A_s^T| / 2 - score(s)

Each sweep updates, in order: the support (MAP over a unary surrogate plus
the Boltzmann prior), nu, sigma_n and x. Solves go through whichever of
``sigma_n diag(nu_s)^-1 + A_s^T A_s`` (k x k) and
``sigma_n I + A_s diag(nu_s) A_s^T`` (M x M) is smaller; the explicit
M x M route is kept in ``woodbury_inverse``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg

from .errors import InvalidDimensionError, NumericError
from .mrf import BoltzmannMachine, Graph, bm_log_score, map_inference
from .sensing import SensingMatrix

NU_FLOOR = 1e-10
SIGMA_FLOOR = 1e-12


@dataclass
class InnerOptions:
    max_iters: int = 200
    rel_tol: float = 1e-3
    map_mode: str = "loopy"
    nu_floor: float = NU_FLOOR
    sigma_floor: float = SIGMA_FLOOR
    # "mean_ratio": mean_i |d_i| / sqrt(eta_i); "homogeneous": |d| / sqrt(sum eta)
    noise_rule: str = "homogeneous"
    # support cost: linearized at x = 0 ("origin"), at the current x ("residual"),
    # or with each x_i minimized out of the residual form ("profiled")
    surrogate: str = "profiled"
    # also wait for sigma_n to settle before stopping; None checks x only
    sigma_rel_tol: float | None = 1e-3
    fixed_support: bool = False

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.sigma_rel_tol is not None and not self.sigma_rel_tol > 0:
            raise ValueError("sigma_rel_tol must be positive or None")
        if self.noise_rule not in ("mean_ratio", "homogeneous"):
            raise ValueError(f"unknown noise rule {self.noise_rule!r}")
        if self.surrogate not in ("origin", "residual", "profiled"):
            raise ValueError(f"unknown surrogate form {self.surrogate!r}")


@dataclass
class RecoveryState:
    x: np.ndarray
    s: np.ndarray
    nu: np.ndarray
    sigma_n: float
    alpha: np.ndarray
    eta: np.ndarray
    d: np.ndarray
    iter: int = 0
    last_rel_change: float = math.inf

    @classmethod
    def initial(cls, A: SensingMatrix, y) -> "RecoveryState":
        """Sigma_x = I, sigma_n = 1, x = 0, s = 1."""
        n, m = A.cols, A.rows
        return cls(
            x=np.zeros(n), s=np.ones(n), nu=np.ones(n), sigma_n=1.0,
            alpha=np.ones(n), eta=np.ones(m), d=np.array(y, dtype=float),
        )

    @property
    def v(self) -> np.ndarray:
        return (self.s > 0).astype(float)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.s > 0)

    def copy(self) -> "RecoveryState":
        return RecoveryState(self.x.copy(), self.s.copy(), self.nu.copy(), self.sigma_n,
                             self.alpha.copy(), self.eta.copy(), self.d.copy(),
                             self.iter, self.last_rel_change)


def _check_dims(A: SensingMatrix, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape != (A.rows,):
        raise InvalidDimensionError(f"measurement length {y.shape} does not match {A.rows} rows")
    if not np.all(np.isfinite(y)):
        raise NumericError("measurements contain non-finite values")
    return y


def _inner_factor(A: SensingMatrix, nu, idx, sigma_n: float):
    """Cholesky factor of sigma_n I + A_s diag(nu_s) A_s^T, plus A_s."""
    a_s = A.entries[:, idx]
    c = (a_s * nu[idx]) @ a_s.T
    c[np.diag_indices_from(c)] += sigma_n
    try:
        factor = linalg.cho_factor(c, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NumericError("inner M x M matrix is not positive definite") from exc
    return factor, a_s


def woodbury_inverse(nu, v_mask, A: SensingMatrix, sigma_n: float, diag_only: bool = False) -> np.ndarray:
    """(diag(nu)^-1 + V A^T A V / sigma_n)^-1 via an M x M solve only."""
    nu = np.asarray(nu, dtype=float)
    idx = np.flatnonzero(np.asarray(v_mask) > 0)
    if np.any(nu <= 0) or not sigma_n > 0:
        raise NumericError("woodbury_inverse needs positive variances")
    if idx.size == 0:
        return nu.copy() if diag_only else np.diag(nu)
    factor, a_s = _inner_factor(A, nu, idx, sigma_n)
    k = linalg.cho_solve(factor, a_s, check_finite=False)  # C^-1 A_s
    nu_s = nu[idx]
    if diag_only:
        out = nu.copy()
        out[idx] -= nu_s ** 2 * np.einsum("ij,ij->j", a_s, k)
        return out
    out = np.diag(nu)
    out[np.ix_(idx, idx)] -= (nu_s[:, None] * (a_s.T @ k)) * nu_s[None, :]
    return out


class _SupportSystem:
    """Factorization shared by the nu, sigma_n and x updates for fixed (s, nu, sigma_n).

    With k active columns and M rows, factors whichever is smaller of
    G = sigma_n diag(nu_s)^-1 + A_s^T A_s (k x k, used when k < M) and
    C = sigma_n I + A_s diag(nu_s) A_s^T (M x M). G stays well conditioned
    as sigma_n -> 0 when A_s has full column rank; C does when k >= M.
    """

    def __init__(self, A: SensingMatrix, nu, idx, sigma_n: float):
        self.m = A.rows
        self.idx = idx
        self.sigma = sigma_n
        self.nu_s = nu[idx]
        self.a_s = A.entries[:, idx]
        self.small = idx.size < self.m
        if idx.size == 0:
            self.factor = None
            return
        if self.small:
            mat = self.a_s.T @ self.a_s
            mat[np.diag_indices_from(mat)] += sigma_n / self.nu_s
        else:
            mat = (self.a_s * self.nu_s) @ self.a_s.T
            mat[np.diag_indices_from(mat)] += sigma_n
        try:
            self.factor = linalg.cho_factor(mat, lower=True, check_finite=False)
        except linalg.LinAlgError as exc:
            raise NumericError("support system is not positive definite") from exc

    def _solve(self, rhs):
        return linalg.cho_solve(self.factor, rhs, check_finite=False)

    def mean(self, y) -> np.ndarray:
        """x_s minimizing the cost for fixed s, nu, sigma_n."""
        if self.factor is None:
            return np.zeros(0)
        if self.small:
            return self._solve(self.a_s.T @ y)
        return self.nu_s * (self.a_s.T @ self._solve(y))

    def cov_diag(self) -> np.ndarray:
        """diag((diag(nu_s)^-1 + A_s^T A_s / sigma_n)^-1)."""
        if self.factor is None:
            return np.zeros(0)
        if self.small:
            return self.sigma * np.diag(self._solve(np.eye(self.idx.size)))
        k = self._solve(self.a_s)
        return self.nu_s - self.nu_s ** 2 * np.einsum("ij,ij->j", self.a_s, k)

    def inner_inv_diag(self) -> np.ndarray:
        """diag((sigma_n I + A_s diag(nu_s) A_s^T)^-1)."""
        if self.factor is None:
            return np.full(self.m, 1.0 / self.sigma)
        if self.small:
            h = np.einsum("ij,ji->i", self.a_s, self._solve(self.a_s.T))
            return np.maximum(1.0 - h, 0.0) / self.sigma
        return np.diag(self._solve(np.eye(self.m))).copy()

    def logdet(self) -> float:
        """log|sigma_n I + A_s diag(nu_s) A_s^T|."""
        if self.factor is None:
            return self.m * math.log(self.sigma)
        ld = 2.0 * float(np.sum(np.log(np.diag(self.factor[0]))))
        if self.small:
            ld += (self.m - self.idx.size) * math.log(self.sigma) + float(np.sum(np.log(self.nu_s)))
        return ld


def support_surrogate_unary(state: RecoveryState, A: SensingMatrix, y, aty=None,
                            form: str = "origin") -> np.ndarray:
    """Linear cost on v_i: r_i/(2 sigma) - x_i c_i / sigma + p_i + q_i.

    p_i = log(nu_i)/2 and q_i = log(sigma/nu_i + (A^T A)_ii)/2 bound the
    log-determinant. With ``form="origin"``, r_i = x_i^2 (1 + sigma/nu_i) and
    c_i = (A^T y)_i, i.e. A^T A is replaced by I around x = 0. With
    ``form="residual"`` the same diagonal approximation is taken around the
    current iterate: c_i = a_i^T (y - A x) + (A^T A)_ii x_i and
    r_i = x_i^2 ((A^T A)_ii + sigma/nu_i). Both coincide when A^T A = I.

    ``form="profiled"`` minimizes the residual form over x_i for each node,
    so an inactive node (x_i = 0) still sees what it would explain:
    u_i = -c_i^2 / (2 sigma ((A^T A)_ii + sigma/nu_i)) + log(1 + nu_i (A^T A)_ii / sigma)/2.
    The log term is p_i + q_i - log(sigma)/2, i.e. it keeps the per-node
    share of the (M - k) log sigma factor of the exact log-determinant,
    which makes the cost invariant to rescaling y.
    """
    y = np.asarray(y, dtype=float)
    x, nu, sig = state.x, state.nu, state.sigma_n
    q_diag = A.gram_diag
    if form == "origin":
        if aty is None:
            aty = A.entries.T @ y
        r = x ** 2 * (1.0 + sig / nu)
        c = aty
    elif form == "residual":
        r = x ** 2 * (q_diag + sig / nu)
        c = A.entries.T @ (y - A.entries @ x) + q_diag * x
    elif form == "profiled":
        c = A.entries.T @ (y - A.entries @ x) + q_diag * x
        gain = c ** 2 / (2.0 * sig * (q_diag + sig / nu))
        return -gain + 0.5 * np.log1p(nu * q_diag / sig)
    else:
        raise ValueError(f"unknown surrogate form {form!r}")
    p = 0.5 * np.log(nu)
    q = 0.5 * np.log(sig / nu + q_diag)
    return r / (2.0 * sig) - x * c / sig + p + q


def update_support(state: RecoveryState, A: SensingMatrix, y, bm: BoltzmannMachine,
                   mode: str = "loopy", aty=None, form: str = "origin") -> np.ndarray:
    u = support_surrogate_unary(state, A, y, aty, form)
    s = map_inference(u, bm, mode)
    state.s = s
    state.x = np.where(s > 0, state.x, 0.0)
    return s


def update_signal_variance(state: RecoveryState, A: SensingMatrix, nu_floor: float = NU_FLOOR) -> np.ndarray:
    """nu_i <- x_i^2 + alpha_i with alpha = diag((Sigma'^-1 + V A^T A V / sigma_n)^-1).

    Off the support alpha_i equals the previous nu_i, so inactive variances
    carry over unchanged.
    """
    idx = state.support
    alpha = state.nu.copy()
    alpha[idx] = _SupportSystem(A, state.nu, idx, state.sigma_n).cov_diag()
    state.alpha = alpha
    state.nu = np.maximum(state.x ** 2 + alpha, nu_floor)
    return state.nu


def update_noise_variance(state: RecoveryState, A: SensingMatrix, y, sigma_floor: float = SIGMA_FLOOR,
                          rule: str = "mean_ratio") -> float:
    """Noise variance step with eta = diag((sigma_old I + A_s diag(nu_s) A_s^T)^-1).

    ``"mean_ratio"`` returns mean_i |d_i| / sqrt(eta_i). ``"homogeneous"``
    returns |d| / sqrt(sum eta), the exact minimizer of
    |d|^2 / (2 sigma) + sigma sum(eta) / 2, which majorizes the noise part
    of the cost, so that step never increases it.
    """
    y = np.asarray(y, dtype=float)
    idx = state.support
    system = _SupportSystem(A, state.nu, idx, state.sigma_n)
    state.eta = system.inner_inv_diag()
    state.d = y - system.a_s @ state.x[idx]
    if rule == "mean_ratio":
        new = np.mean(np.abs(state.d) / np.sqrt(state.eta))
    elif rule == "homogeneous":
        new = np.linalg.norm(state.d) / math.sqrt(state.eta.sum())
    else:
        raise ValueError(f"unknown noise rule {rule!r}")
    state.sigma_n = max(float(new), sigma_floor)
    return state.sigma_n


def update_sparse_signal(state: RecoveryState, A: SensingMatrix, y) -> np.ndarray:
    """x_s = (sigma_n diag(nu_s)^-1 + A_s^T A_s)^-1 A_s^T y, zero elsewhere."""
    y = np.asarray(y, dtype=float)
    idx = state.support
    system = _SupportSystem(A, state.nu, idx, state.sigma_n)
    x = np.zeros(A.cols)
    x[idx] = system.mean(y)
    state.x = x
    state.d = y - system.a_s @ x[idx]
    return x


def latent_cost(state: RecoveryState, A: SensingMatrix, y, bm: BoltzmannMachine | None = None) -> float:
    y = np.asarray(y, dtype=float)
    idx = state.support
    system = _SupportSystem(A, state.nu, idx, state.sigma_n)
    xs = state.x[idx]
    resid = y - system.a_s @ xs
    cost = resid @ resid / (2.0 * state.sigma_n) + 0.5 * np.sum(xs ** 2 / state.nu[idx]) + 0.5 * system.logdet()
    if bm is not None:
        cost -= bm_log_score(state.s, bm)
    return float(cost)


def relative_change(x_prev, x_new) -> float:
    """|x_prev - x_new| / |x_prev|; 0 when both are zero, inf when only x_prev is zero."""
    den = np.linalg.norm(x_prev)
    num = np.linalg.norm(np.asarray(x_prev) - np.asarray(x_new))
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return float(num / den)


StepCallback = Callable[[str, RecoveryState], None]


def estimate_sparse_signal(A: SensingMatrix, y, bm: BoltzmannMachine | None = None,
                           opts: InnerOptions | None = None, *, init: RecoveryState | None = None,
                           trace: list | None = None, callback: StepCallback | None = None):
    """Run the four updates (support, nu, sigma_n, x) until x settles.

    Stops when the relative change of x drops below ``opts.rel_tol`` (never
    on the first sweep) and, unless ``opts.sigma_rel_tol`` is None, sigma_n
    moved by less than that relative amount in the same sweep; or after
    ``opts.max_iters`` sweeps. ``trace``, if
    given, receives one dict per sweep; ``callback(step_name, state)`` fires
    after every individual update.

    Returns ``(x, state)``.
    """
    opts = opts or InnerOptions()
    y = _check_dims(A, y)
    if bm is None:
        bm = BoltzmannMachine.flat(Graph.empty(A.cols))
    if bm.n_nodes != A.cols:
        raise InvalidDimensionError(f"prior has {bm.n_nodes} nodes, signal has {A.cols}")
    state = init.copy() if init is not None else RecoveryState.initial(A, y)
    if opts.fixed_support:
        state.s = np.ones(A.cols)
    aty = A.entries.T @ y

    def notify(name):
        if callback is not None:
            callback(name, state)

    for it in range(1, opts.max_iters + 1):
        x_prev = state.x.copy()
        sig_prev = state.sigma_n
        if not opts.fixed_support:
            update_support(state, A, y, bm, opts.map_mode, aty, opts.surrogate)
            notify("support")
        update_signal_variance(state, A, opts.nu_floor)
        notify("signal_variance")
        update_noise_variance(state, A, y, opts.sigma_floor, opts.noise_rule)
        notify("noise_variance")
        update_sparse_signal(state, A, y)
        notify("sparse_signal")
        state.iter = it
        state.last_rel_change = relative_change(x_prev, state.x)
        if trace is not None:
            trace.append({
                "iter": it,
                "L": latent_cost(state, A, y, bm),
                "k": int(state.support.size),
                "sigma_n": state.sigma_n,
                "rel_change": state.last_rel_change,
            })
        if it > 1 and state.last_rel_change < opts.rel_tol:
            if opts.sigma_rel_tol is None or abs(state.sigma_n - sig_prev) <= opts.sigma_rel_tol * sig_prev:
                break
    return state.x.copy(), state
