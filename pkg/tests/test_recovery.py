import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from scipy.optimize import minimize_scalar

from amrf_cs.mrf import BoltzmannMachine, Graph, Neighborhood, bm_log_score, map_objective
from amrf_cs.recovery import (SIGMA_FLOOR, InnerOptions, RecoveryState, estimate_sparse_signal, latent_cost,
                              relative_change, support_surrogate_unary, update_noise_variance,
                              update_signal_variance, update_sparse_signal, update_support, woodbury_inverse)
from amrf_cs.sensing import SensingMatrix, add_noise_snr, gen_bernoulli_matrix, measure
from amrf_cs.synthetic import gen_synthetic_structured


def random_state(rng, A, density=0.5):
    st_ = RecoveryState.initial(A, np.zeros(A.rows))
    st_.s = np.where(rng.random(A.cols) < density, 1.0, -1.0)
    st_.nu = rng.uniform(0.1, 2.0, A.cols)
    st_.sigma_n = rng.uniform(0.05, 1.0)
    st_.x = np.where(st_.s > 0, rng.standard_normal(A.cols), 0.0)
    return st_


def orthonormal(n, seed):
    q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((n, n)))
    return SensingMatrix.from_array(q)


# --- Woodbury ------------------------------------------------------------------

def test_woodbury_empty_mask_is_prior():
    A = gen_bernoulli_matrix(3, 5, seed=0)
    nu = np.arange(1.0, 6.0)
    assert_array_equal(woodbury_inverse(nu, np.zeros(5), A, 0.3), np.diag(nu))


def test_woodbury_orthonormal_half():
    A = SensingMatrix.from_array(np.eye(4))
    assert_allclose(np.diag(woodbury_inverse(np.ones(4), np.ones(4), A, 1.0)), 0.5, atol=1e-15)


def test_woodbury_matches_dense_inverse(rng):
    A = gen_bernoulli_matrix(4, 6, seed=2)
    nu = rng.uniform(0.2, 2.0, 6)
    v = np.array([1, 0, 1, 1, 0, 1.0])
    sigma = 0.4
    direct = np.linalg.inv(np.diag(1 / nu) + np.diag(v) @ A.entries.T @ A.entries @ np.diag(v) / sigma)
    assert np.max(np.abs(woodbury_inverse(nu, v, A, sigma) - direct)) < 1e-8
    assert_allclose(woodbury_inverse(nu, v, A, sigma, diag_only=True), np.diag(direct), atol=1e-10)


# --- support surrogate ---------------------------------------------------------------

def test_surrogate_at_zero_is_log_terms(rng):
    A = gen_bernoulli_matrix(6, 10, seed=1)
    st_ = RecoveryState.initial(A, np.zeros(6))
    st_.nu = rng.uniform(0.5, 2, 10)
    st_.sigma_n = 0.3
    u = support_surrogate_unary(st_, A, rng.standard_normal(6), form="origin")
    assert_allclose(u, 0.5 * np.log(st_.nu) + 0.5 * np.log(0.3 / st_.nu + 1.0), rtol=1e-13)


def test_surrogate_constants():
    A = gen_bernoulli_matrix(4, 8, seed=0)
    u = support_surrogate_unary(RecoveryState.initial(A, np.ones(4)), A, np.ones(4), form="origin")
    assert_allclose(u, 0.5 * math.log(2.0), rtol=1e-14)


def test_surrogate_is_substituted_quadratic_cost(rng):
    """Sum of unaries equals the full support cost with A^T A replaced by I, up to a constant."""
    A = gen_bernoulli_matrix(7, 10, seed=4)
    y = rng.standard_normal(7)
    st_ = RecoveryState.initial(A, y)
    st_.x = rng.standard_normal(10)
    st_.nu = rng.uniform(0.2, 2, 10)
    st_.sigma_n = 0.7
    sig, x, nu = st_.sigma_n, st_.x, st_.nu
    aty = A.entries.T @ y

    def cost(v):
        quad = y @ y - 2 * (v * x) @ aty + (v * x) @ (v * x)       # A^T A -> I
        prior = np.sum(v * x ** 2 / nu)
        logs = np.sum(v * (0.5 * np.log(nu) + 0.5 * np.log(sig / nu + A.gram_diag)))
        return quad / (2 * sig) + prior / 2 + logs

    u = support_surrogate_unary(st_, A, y, form="origin")
    for _ in range(20):
        v = (rng.random(10) < 0.5).astype(float)
        assert cost(v) - cost(np.zeros(10)) == pytest.approx(u @ v, rel=1e-10, abs=1e-10)


def test_residual_and_profiled_forms_reduce_on_orthonormal_columns(rng):
    A = orthonormal(8, 3)
    y = rng.standard_normal(8)
    st_ = RecoveryState.initial(A, y)
    st_.x = rng.standard_normal(8)
    st_.nu = rng.uniform(0.2, 2, 8)
    st_.sigma_n = 0.4
    assert_allclose(support_surrogate_unary(st_, A, y, form="residual"),
                    support_surrogate_unary(st_, A, y, form="origin"), atol=1e-12)
    # profiled = origin form evaluated at the per-node minimizing x_i
    prof = support_surrogate_unary(st_, A, y, form="profiled")
    c = A.entries.T @ y
    x_best = c / (1 + st_.sigma_n / st_.nu)
    st_.x = x_best
    origin = support_surrogate_unary(st_, A, y, form="origin")
    assert_allclose(prof, origin - 0.5 * np.log(st_.sigma_n), atol=1e-12)


def test_update_support_flat_prior_at_zero():
    A = gen_bernoulli_matrix(5, 6, seed=0)
    st_ = RecoveryState.initial(A, np.zeros(5))
    st_.nu = np.array([0.1, 0.5, 0.9, 1.0, 2.0, 0.01])
    st_.sigma_n = 0.05
    pq = 0.5 * np.log(st_.nu) + 0.5 * np.log(st_.sigma_n / st_.nu + 1.0)
    s = update_support(st_, A, np.zeros(5), BoltzmannMachine.flat(Graph.empty(6)), "exact", form="origin")
    assert_array_equal(s, np.where(pq < 0, 1.0, -1.0))


def test_update_support_strong_bias_turns_everything_off(rng):
    A = gen_bernoulli_matrix(6, 8, seed=0)
    y = 0.3 * rng.standard_normal(6)
    st_ = RecoveryState.initial(A, y)
    st_.x = 0.3 * rng.standard_normal(8)
    bm = BoltzmannMachine(Graph.empty(8), -10 * np.ones(8), [])
    u = support_surrogate_unary(st_, A, y, form="origin")
    assert np.max(np.abs(u)) <= 1.0
    assert_array_equal(update_support(st_, A, y, bm, "exact", form="origin"), -np.ones(8))
    assert_array_equal(st_.x, 0.0)


@given(st.integers(0, 2**31))
def test_update_support_exact_minimizes_surrogate(seed):
    rng = np.random.default_rng(seed)
    A = gen_bernoulli_matrix(6, 9, seed)
    y = rng.standard_normal(6)
    st_ = random_state(rng, A)
    nb = Neighborhood.grid8(3, 3)
    g = Graph.full(nb)
    bm = BoltzmannMachine(g, rng.standard_normal(9), rng.standard_normal(g.n_edges))
    u = support_surrogate_unary(st_, A, y, form="residual")
    s = update_support(st_, A, y, bm, "exact", form="residual")
    best = min(map_objective(np.array([1.0 if (c >> i) & 1 else -1.0 for i in range(9)]), u, bm)
               for c in range(512))
    assert map_objective(s, u, bm) == pytest.approx(best, abs=1e-12)


# --- closed-form updates -------------------------------------------------------------

def test_signal_variance_empty_support_keeps_prior():
    A = gen_bernoulli_matrix(3, 4, seed=0)
    st_ = RecoveryState.initial(A, np.zeros(3))
    st_.s = -np.ones(4)
    assert_array_equal(update_signal_variance(st_, A), np.ones(4))
    assert_array_equal(st_.alpha, np.ones(4))


def test_signal_variance_hand_value():
    # A = I, nu = 1, sigma = 1/9 gives alpha = (1 + 9)^-1 = 0.1
    A = SensingMatrix.from_array(np.eye(3))
    st_ = RecoveryState.initial(A, np.zeros(3))
    st_.sigma_n = 1 / 9
    st_.x = np.array([0.5, 0.0, -1.0])
    nu = update_signal_variance(st_, A)
    assert_allclose(st_.alpha, 0.1, rtol=1e-12)
    assert nu[0] == pytest.approx(0.35)
    assert nu[2] == pytest.approx(1.1)


def test_signal_variance_uses_woodbury_alpha(rng):
    A = gen_bernoulli_matrix(5, 9, seed=6)
    st_ = random_state(rng, A, density=0.7)
    expected = woodbury_inverse(st_.nu, st_.v, A, st_.sigma_n, diag_only=True)
    x = st_.x.copy()
    update_signal_variance(st_, A)
    assert_allclose(st_.alpha, expected, rtol=1e-10)
    assert_allclose(st_.nu, x ** 2 + expected, rtol=1e-10)


def test_signal_variance_step_minimizes_its_majorizer(rng):
    """nu = x^2 + alpha is the minimizer of sum_i (x_i^2 + alpha_i)/nu_i + log nu_i."""
    A = gen_bernoulli_matrix(6, 8, seed=3)
    st_ = random_state(rng, A, density=0.6)
    update_signal_variance(st_, A)
    for i in st_.support:
        a = st_.x[i] ** 2 + st_.alpha[i]
        res = minimize_scalar(lambda t: a / math.exp(t) + t, bounds=(-30, 10), method="bounded",
                              options={"xatol": 1e-12})
        assert math.exp(res.x) == pytest.approx(st_.nu[i], rel=1e-6)


def test_noise_zero_residual_hits_floor():
    A = SensingMatrix.from_array(np.eye(3))
    y = np.array([1.0, -2.0, 0.5])
    st_ = RecoveryState.initial(A, y)
    st_.x = y.copy()
    assert update_noise_variance(st_, A, y, rule="mean_ratio") == SIGMA_FLOOR
    assert update_noise_variance(st_, A, y, rule="homogeneous") == SIGMA_FLOOR


def test_noise_empty_support_is_mean_abs():
    A = gen_bernoulli_matrix(4, 6, seed=0)
    y = np.array([1.0, -3.0, 0.5, 2.5])
    st_ = RecoveryState.initial(A, y)
    st_.s = -np.ones(6)
    assert update_noise_variance(st_, A, y, rule="mean_ratio") == pytest.approx(np.mean(np.abs(y)))
    assert_allclose(st_.eta, 1.0)


def test_homogeneous_noise_step_minimizes_its_majorizer(rng):
    A = gen_bernoulli_matrix(6, 8, seed=5)
    y = rng.standard_normal(6)
    st_ = random_state(rng, A)
    new = update_noise_variance(st_, A, y, rule="homogeneous")
    d2, eta_sum = st_.d @ st_.d, st_.eta.sum()
    res = minimize_scalar(lambda t: d2 / (2 * math.exp(t)) + math.exp(t) * eta_sum / 2, bounds=(-20, 5),
                          method="bounded", options={"xatol": 1e-12})
    assert new == pytest.approx(math.exp(res.x), rel=1e-6)


def test_sparse_signal_cases(rng):
    A = gen_bernoulli_matrix(4, 6, seed=0)
    st_ = RecoveryState.initial(A, np.ones(4))
    st_.s = -np.ones(6)
    assert_array_equal(update_sparse_signal(st_, A, np.ones(4)), np.zeros(6))

    eye = SensingMatrix.from_array(np.eye(5))
    y = rng.standard_normal(5)
    st_ = RecoveryState.initial(eye, y)
    st_.sigma_n = SIGMA_FLOOR
    assert_allclose(update_sparse_signal(st_, eye, y), y, atol=1e-6)

    Q = orthonormal(6, 1)
    st_ = RecoveryState.initial(Q, y)
    st_.s = np.array([1, -1, 1, 1, -1, -1.0])
    y6 = rng.standard_normal(6)
    x = update_sparse_signal(st_, Q, y6)
    assert_allclose(x[st_.support], 0.5 * Q.entries[:, st_.support].T @ y6, atol=1e-12)
    assert_array_equal(x[st_.s < 0], 0.0)


def test_sparse_signal_routes_agree(rng):
    """k < M and k >= M factorizations give the same estimate."""
    A = gen_bernoulli_matrix(5, 8, seed=9)
    y = rng.standard_normal(5)
    st_ = random_state(rng, A)
    st_.s = np.array([1, 1, 1, 1, 1, 1, -1, -1.0])   # k = 6 >= M
    direct = np.linalg.solve(st_.sigma_n * np.diag(1 / st_.nu[:6]) + A.entries[:, :6].T @ A.entries[:, :6],
                             A.entries[:, :6].T @ y)
    assert_allclose(update_sparse_signal(st_, A, y)[:6], direct, rtol=1e-9)
    st_.s = np.array([1, 1, 1, -1, -1, -1, -1, -1.0])   # k = 3 < M
    direct = np.linalg.solve(st_.sigma_n * np.diag(1 / st_.nu[:3]) + A.entries[:, :3].T @ A.entries[:, :3],
                             A.entries[:, :3].T @ y)
    assert_allclose(update_sparse_signal(st_, A, y)[:3], direct, rtol=1e-9)


# --- cost -----------------------------------------------------------------------------

def test_cost_empty_support_zero_data():
    A = gen_bernoulli_matrix(4, 5, seed=0)
    st_ = RecoveryState.initial(A, np.zeros(4))
    st_.s = -np.ones(5)
    st_.sigma_n = 0.3
    bm = BoltzmannMachine(Graph.full(Neighborhood.chain2(5)), np.full(5, 0.2), np.full(4, -0.1))
    expected = 0.5 * 4 * math.log(0.3) - bm_log_score(-np.ones(5), bm)
    assert latent_cost(st_, A, np.zeros(4), bm) == pytest.approx(expected, rel=1e-13)


def test_cost_scalar_by_hand():
    A = SensingMatrix.from_array([[1.0]])
    st_ = RecoveryState.initial(A, [2.0])
    st_.x = np.array([1.5])
    st_.nu = np.array([0.8])
    st_.sigma_n = 0.25
    expected = (2.0 - 1.5) ** 2 / (2 * 0.25) + 0.5 * 1.5 ** 2 / 0.8 + 0.5 * math.log(0.25 + 0.8)
    assert latent_cost(st_, A, [2.0]) == pytest.approx(expected, rel=1e-13)


@given(st.integers(0, 2**31))
def test_cost_logdet_matches_dense(seed):
    rng = np.random.default_rng(seed)
    A = gen_bernoulli_matrix(5, 9, seed)
    y = rng.standard_normal(5)
    st_ = random_state(rng, A, density=rng.uniform(0.1, 0.9))
    idx = st_.support
    a_s = A.entries[:, idx]
    c = st_.sigma_n * np.eye(5) + (a_s * st_.nu[idx]) @ a_s.T
    r = y - a_s @ st_.x[idx]
    expected = r @ r / (2 * st_.sigma_n) + 0.5 * np.sum(st_.x[idx] ** 2 / st_.nu[idx]) \
        + 0.5 * np.linalg.slogdet(c)[1]
    assert latent_cost(st_, A, y) == pytest.approx(expected, rel=1e-10, abs=1e-10)


def test_relative_change_conventions():
    assert relative_change(np.zeros(3), np.zeros(3)) == 0.0
    assert math.isinf(relative_change(np.zeros(3), np.ones(3)))
    assert relative_change(np.array([3.0, 4.0]), np.array([3.0, 3.0])) == pytest.approx(0.2)


# --- full inner loop ---------------------------------------------------------------

def test_zero_measurements_stop_quickly():
    A = gen_bernoulli_matrix(6, 10, seed=0)
    x, st_ = estimate_sparse_signal(A, np.zeros(6))
    assert_array_equal(x, 0.0)
    assert st_.iter <= 2


def test_noiseless_orthonormal_flat_prior():
    for seed in range(5):
        A = orthonormal(32, seed)
        x_true = gen_synthetic_structured(32, 5, 2, 1.0, seed)
        x, _ = estimate_sparse_signal(A, measure(A, x_true))
        assert np.linalg.norm(x - x_true) / np.linalg.norm(x_true) < 1e-3


def test_fixed_support_is_ridge_at_returned_parameters(rng):
    A = gen_bernoulli_matrix(10, 16, seed=2)
    y = rng.standard_normal(10)
    x, st_ = estimate_sparse_signal(A, y, opts=InnerOptions(fixed_support=True))
    a = A.entries
    # M x M form; the N x N one is singular to working precision once sigma_n reaches its floor
    c = st_.sigma_n * np.eye(10) + (a * st_.nu) @ a.T
    direct = st_.nu * (a.T @ np.linalg.solve(c, y))
    assert_allclose(x, direct, rtol=1e-8, atol=1e-12)
    assert_array_equal(st_.s, 1.0)


def test_inner_run_invariants_and_trace(rng):
    A = gen_bernoulli_matrix(20, 40, seed=1)
    x_true = gen_synthetic_structured(40, 5, 1, 1.0, seed=2)
    y = add_noise_snr(measure(A, x_true), 25, seed=3).y
    bm = BoltzmannMachine(Graph.full(Neighborhood.chain2(40)), -0.2 * np.ones(40), 0.3 * np.ones(39))
    trace, steps = [], []
    x, st_ = estimate_sparse_signal(A, y, bm, trace=trace, callback=lambda name, s: steps.append(name))
    assert_array_equal(x[st_.s < 0], 0.0)
    assert np.all(st_.nu >= 1e-10) and st_.sigma_n >= SIGMA_FLOOR
    assert_allclose(st_.d, y - A.entries @ x, atol=1e-12)
    assert len(trace) == st_.iter <= 200
    assert set(trace[0]) == {"iter", "L", "k", "sigma_n", "rel_change"}
    assert steps[:4] == ["support", "signal_variance", "noise_variance", "sparse_signal"]
    x2, _ = estimate_sparse_signal(A, y, bm)
    assert_array_equal(x, x2)


def test_options_validation():
    with pytest.raises(ValueError):
        InnerOptions(max_iters=0)
    with pytest.raises(ValueError):
        InnerOptions(rel_tol=0)
    with pytest.raises(ValueError):
        InnerOptions(noise_rule="median")
    with pytest.raises(ValueError):
        InnerOptions(surrogate="exact")
