import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize_scalar

from conftest import random_problem
from randkrylov import factor as fz
from randkrylov.hybrid import (LambdaSelector, RegRule, adaptive_weight, build_projected,
                               gcv_function, golden_section, hybrid_iterate, hybrid_solve,
                               rlsqr_damped_solve, search_bounds, select_lambda_dp,
                               select_lambda_gcv, select_lambda_optimal)
from randkrylov.linop import InverseProblem, make_dense_operator, make_tomo_problem
from randkrylov.oracle import dense_subspace_tikhonov, orthonormal_krylov_basis
from randkrylov.sketch import make_sketch
from randkrylov.solvers import SolverConfig, lsqr_solve, rgmres_solve, rlsqr_solve, solve

ROWS = ("rgmres", "rlsqr", "rcgls", "rlsmr")


def factorization(method, A, b, k, kind="gaussian", seed=0):
    m, n = A.shape
    op = make_dense_operator(A)
    if kind == "identity":
        tn, tm = make_sketch("identity", n), make_sketch("identity", m)
    else:
        tn = make_sketch(kind, n, min(n, 2 * k + 4), seed=seed, label="n")
        tm = make_sketch(kind, m, min(m, 2 * k + 4), seed=seed, label="m")
    if method == "rgmres":
        return fz.rarnoldi(op, b, tn, k), tn, tm
    return fz.rgk(op, b, tn, tm, k), tn, tm


def small(method, seed=0, k=5):
    rng = np.random.default_rng(seed)
    m, n = (20, 20) if method == "rgmres" else (24, 16)
    A, b = rng.standard_normal((m, n)), rng.standard_normal(m)
    st_, tn, tm = factorization(method, A, b, k, seed=seed)
    return A, b, st_, tn, tm


def direct_z(method, st_, lam):
    """The method-specific small problem, solved by stacked least squares or LU."""
    k = st_.k
    if method == "rgmres":
        F, g = st_.hessenberg, np.eye(k + 1)[0] * st_.beta
    elif method == "rlsqr":
        F, g = st_.Mk, np.eye(k + 1)[0] * st_.beta
    elif method == "rcgls":
        TM = st_.Tk1 @ st_.Mk
        return np.linalg.solve(TM[:k] + lam ** 2 * np.eye(k), np.eye(k)[0] * st_.beta * st_.t11)
    else:
        F, g = st_.Tk1 @ st_.Mk, np.eye(k + 1)[0] * st_.beta * st_.t11
    K = np.vstack([F, lam * np.eye(k)])
    return np.linalg.lstsq(K, np.concatenate([g, np.zeros(k)]), rcond=None)[0]


@pytest.mark.parametrize("method", ROWS)
def test_common_framework_matches_direct_formulation(method):
    for seed in range(3):
        A, b, st_, *_ = small(method, seed)
        pt = build_projected(st_, method)
        s = math.sqrt(pt.p_norm())
        for lam in (1e-3 * s, 1e-2 * s, 0.1 * s, s, 10 * s):
            z = pt.z(lam)[0]
            ref = direct_z(method, st_, lam)
            assert np.linalg.norm(z - ref) <= 1e-12 * np.linalg.norm(ref)
            # the framework formula itself, with P and c formed explicitly
            zf = np.linalg.solve(pt.P + lam ** 2 * np.eye(pt.k), pt.c)
            assert np.linalg.norm(z - zf) <= 1e-10 * np.linalg.norm(ref)


def dense_influence(method, A, st_, tn, tm, lam):
    """m x m map b -> A x_k(lam), assembled from dense sketches and bases."""
    k = st_.k
    pt = build_projected(st_, method)
    Sn = tn.to_dense()
    if method == "rgmres":
        Q = st_.Q[:, :k + 1]
        C = st_.hessenberg.T @ (Sn @ Q).T @ Sn
        V = Q[:, :k]
    else:
        Sm = tm.to_dense()
        U = st_.U[:, :k + 1]
        base = (Sm @ U).T @ Sm                       # b -> beta e1
        T = st_.Tk1
        if method == "rlsqr":
            C = st_.Mk.T @ base
        elif method == "rcgls":
            C = (T @ base)[:k]
        else:
            C = (T @ st_.Mk).T @ T @ base
        V = st_.V[:, :k]
    return A @ V @ np.linalg.solve(pt.P + lam ** 2 * np.eye(k), C)


@pytest.mark.parametrize("method", ROWS)
def test_cyclic_trace_matches_dense_trace(method):
    rng = np.random.default_rng(1)
    m, n = (12, 12) if method == "rgmres" else (12, 8)
    A, b = rng.standard_normal((m, n)), rng.standard_normal(m)
    st_, tn, tm = factorization(method, A, b, 5, seed=1)
    pt = build_projected(st_, method)
    for lam in (0.0, 0.05, 0.3, 1.0, 4.0):
        dense = np.trace(dense_influence(method, A, st_, tn, tm, lam))
        assert abs(pt.trace(lam) - dense) <= 1e-10 * max(1.0, abs(dense))


def test_lambda_zero_recovers_unregularized_rgmres():
    p = random_problem(20, 20, 2)
    cfg = SolverConfig(method="rgmres", max_iters=6, sketch_kind="gaussian", sketch_dims=(15, None))
    r = rgmres_solve(p, cfg)
    pt = build_projected(r.factorization, "rgmres")
    np.testing.assert_allclose(pt.x(0.0), r.x(6), rtol=1e-10)


@pytest.mark.parametrize("method", ROWS)
def test_large_lambda_shrinks_to_zero(method):
    *_, st_, _, _ = small(method, 3)
    pt = build_projected(st_, method)
    lam = 1e8 * pt.p_norm()
    assert np.linalg.norm(pt.x(lam)) <= 1e-6 * np.linalg.norm(pt.x(0.0))


def test_rlsqr_row_matches_dense_krylov_tikhonov():
    rng = np.random.default_rng(4)
    A, b = rng.standard_normal((12, 8)), rng.standard_normal(12)
    st_, *_ = factorization("rlsqr", A, b, 8, kind="identity")
    pt = build_projected(st_, "rlsqr")
    W = orthonormal_krylov_basis(A.T @ A, A.T @ b, 8)
    ref = dense_subspace_tikhonov(A, b, 0.1, W)
    np.testing.assert_allclose(pt.x(0.1), ref, rtol=1e-8)


def test_hybrid_iterate_matches_dense_sketched_tikhonov():
    rng = np.random.default_rng(5)
    A, b = rng.standard_normal((12, 8)), rng.standard_normal(12)
    op = make_dense_operator(A)
    tn = make_sketch("gaussian", 8, 8, seed=2, label="n")
    tm = make_sketch("gaussian", 12, 10, seed=2, label="m")
    st_ = fz.rgk(op, b, tn, tm, 5)
    prob = InverseProblem(op, b)
    lam, x, rec = hybrid_iterate(st_, RegRule("fixed", lam=0.2), prob, "rlsqr")
    ref = dense_subspace_tikhonov(A, b, 0.2, st_.basis, tm.to_dense(), tn.to_dense())
    np.testing.assert_allclose(x, ref, rtol=1e-8)
    assert rec.lam == 0.2 and rec.rule == "fixed"


def test_project_then_regularize_vs_regularize_then_project():
    rng = np.random.default_rng(6)
    n, k, lam = 20, 5, 0.5
    A, b = rng.standard_normal((n, n)), rng.standard_normal(n)

    def both(theta):
        st_ = fz.rarnoldi(make_dense_operator(A), b, theta, k)
        Q, H, g = st_.Q[:, :k + 1], st_.hessenberg, np.eye(k + 1)[0] * st_.beta
        fit = Q @ H
        rhs = Q @ g
        zp = np.linalg.lstsq(np.vstack([fit, lam * np.eye(k)]),
                             np.concatenate([rhs, np.zeros(k)]), rcond=None)[0]
        zr = np.linalg.lstsq(np.vstack([fit, lam * Q[:, :k]]),
                             np.concatenate([rhs, np.zeros(n)]), rcond=None)[0]
        return Q[:, :k] @ zp, Q[:, :k] @ zr

    xp, xr = both(make_sketch("gaussian", n, 12, seed=0))
    assert np.linalg.norm(xp - xr) > 1e-8
    xp, xr = both(make_sketch("identity", n))
    assert np.linalg.norm(xp - xr) <= 1e-10 * np.linalg.norm(xp)


def test_dp_noiseless_consistent_returns_zero():
    rng = np.random.default_rng(7)
    A = rng.standard_normal((12, 8))
    b = A @ rng.standard_normal(8)
    st_, *_ = factorization("rlsqr", A, b, 8, kind="identity")
    sel = select_lambda_dp(build_projected(st_, "rlsqr"), 0.0, tau=1.0 + 1e-9)
    assert sel.lam == 0.0


def test_dp_hits_target_and_matches_dense_zero_finder():
    p = random_problem(12, 8, 8, noise=0.05)
    A, b = p.operator.matrix, p.b
    st_, *_ = factorization("rlsqr", A, b, 6, kind="identity")
    pt = build_projected(st_, "rlsqr")
    tau = 1.01
    target = tau * p.noise_norm
    sel = select_lambda_dp(pt, p.noise_norm, tau)
    assert sel.flags == ""
    assert abs(pt.residual(sel.lam) - target) <= 1e-6 * target
    W = orthonormal_krylov_basis(A.T @ A, A.T @ b, 6)

    def phi(u):
        x = dense_subspace_tikhonov(A, b, 10.0 ** u, W)
        return (np.linalg.norm(A @ x - b) - target) ** 2

    lo, hi = search_bounds(pt)
    u = golden_section(phi, math.log10(lo), math.log10(hi), 1e-10)
    assert sel.lam == pytest.approx(10.0 ** u, rel=1e-4)


def test_dp_flags_undershoot_and_overshoot():
    p = random_problem(12, 8, 9, noise=0.05)
    st_, *_ = factorization("rlsqr", p.operator.matrix, p.b, 2, kind="identity")
    pt = build_projected(st_, "rlsqr")
    assert select_lambda_dp(pt, 1e-6 * p.noise_norm).flags == "undershoot"
    sel = select_lambda_dp(pt, 100 * np.linalg.norm(p.b), bounds=(1e-6, 1e-3))
    assert sel.flags == "overshoot" and sel.lam == 1e-3


@pytest.mark.parametrize("method", ROWS)
def test_dp_residual_monotone_in_lambda(method):
    *_, st_, _, _ = small(method, 10)
    pt = build_projected(st_, method)
    grid = np.logspace(-6, 4, 80)
    phi = np.array([pt.residual(l) for l in grid])
    if method in ("rgmres", "rlsqr"):
        assert np.all(np.diff(phi) >= -1e-12 * phi.max())


def test_gcv_large_lambda_limit():
    p = random_problem(24, 16, 11)
    st_, *_ = factorization("rlsqr", p.operator.matrix, p.b, 5, seed=11)
    pt = build_projected(st_, "rlsqr")
    m, n = 24, 16
    G = gcv_function(pt, 1.0, n, m)
    hi = search_bounds(pt)[1]
    assert G(hi) == pytest.approx(n * st_.beta ** 2 / m ** 2, rel=1e-2)


def plain_gcv(pt, n, m):
    def G(lam):
        return n * pt.residual(lam) ** 2 / (m - pt.trace(lam)) ** 2
    lo, hi = search_bounds(pt)
    us = np.linspace(math.log10(lo), math.log10(hi), 60)
    i = int(np.argmin([G(10.0 ** u) for u in us]))
    res = minimize_scalar(lambda u: G(10.0 ** u), bounds=(us[max(i - 1, 0)], us[min(i + 1, 59)]),
                          method="bounded", options=dict(xatol=1e-9))
    return 10.0 ** res.x


@pytest.mark.parametrize("method", ROWS)
def test_wgcv_with_unit_weight_is_plain_gcv(method):
    p = random_problem(24, 24, 12, noise=0.1)
    st_, *_ = factorization(method, p.operator.matrix, p.b, 8, seed=12)
    pt = build_projected(st_, method)
    sel = select_lambda_gcv(pt, 1.0, 24, 24)
    if "boundary" not in sel.flags and "flat" not in sel.flags:
        assert sel.lam == pytest.approx(plain_gcv(pt, 24, 24), rel=1e-4)


@pytest.mark.parametrize("method", ("rgmres", "rlsqr", "rlsmr"))
def test_gcv_denominator_increasing(method):
    *_, st_, _, _ = small(method, 13)
    pt = build_projected(st_, method)
    t = np.array([pt.trace(l) for l in np.logspace(-4, 4, 50)])
    assert np.all(np.diff(t) <= 1e-12)


def test_gcv_rejects_bad_weight():
    *_, st_, _, _ = small("rlsqr", 0)
    with pytest.raises(ValueError):
        select_lambda_gcv(build_projected(st_, "rlsqr"), 0.0, 10, 10)


def test_gcv_flat_flag():
    # b orthogonal to everything the projection can fit: G is constant
    *_, st_, _, _ = small("rlsqr", 0)
    pt = build_projected(st_, "rlsqr")
    pt.fit = np.zeros_like(pt.fit)
    pt.F = np.zeros_like(pt.F)
    pt.P = np.zeros_like(pt.P)
    pt.c = np.zeros_like(pt.c)
    pt._svd = None
    assert "flat" in select_lambda_gcv(pt, 1.0, 16, 24, bounds=(1e-3, 1.0)).flags


def test_optimal_returns_zero_when_unregularized_is_exact():
    *_, st_, _, _ = small("rlsqr", 14)
    pt = build_projected(st_, "rlsqr")
    assert select_lambda_optimal(pt, pt.x(0.0)).lam == 0.0


@pytest.mark.parametrize("method", ROWS)
def test_optimal_beats_grid(method):
    p = random_problem(24, 24, 15, noise=0.2)
    st_, *_ = factorization(method, p.operator.matrix, p.b, 8, seed=15)
    pt = build_projected(st_, method)
    sel = select_lambda_optimal(pt, p.x_true)
    err = lambda l: np.linalg.norm(pt.x(l) - p.x_true)
    lo, hi = search_bounds(pt)
    grid = min(err(l) for l in np.logspace(math.log10(lo), math.log10(hi), 200))
    assert err(sel.lam) <= grid + 1e-6 * np.linalg.norm(p.x_true)


def test_adaptive_weight_bounds_and_schedule():
    p = random_problem(30, 30, 16, noise=0.05)
    cfg = SolverConfig(method="rlsqr", max_iters=8, sketch_kind="srht", sketch_dims=(20, 20))
    r = hybrid_solve(p, cfg, RegRule("wgcv", weight="adaptive"))
    w = r.history.column("tau_or_w")
    assert np.all((w > 0) & (w <= 1))
    *_, st_, _, _ = small("rlsqr", 0)
    assert adaptive_weight(build_projected(st_, "rlsqr")) > 0


def test_rule_validation():
    with pytest.raises(ValueError):
        RegRule("dp", tau=1.0)
    with pytest.raises(ValueError):
        RegRule("lcurve")
    with pytest.raises(ValueError):
        RegRule("dp", bounds=(-1.0, 1.0))
    with pytest.raises(ValueError):
        RegRule("wgcv", weight=-1.0)


def test_rules_need_problem_information():
    p = random_problem(12, 8, 0, x_true=False)
    cfg = SolverConfig(method="rlsqr", max_iters=3, sketch_kind="identity")
    with pytest.raises(ValueError):
        hybrid_solve(InverseProblem(p.operator, p.b), cfg, RegRule("dp"))
    with pytest.raises(ValueError):
        hybrid_solve(InverseProblem(p.operator, p.b), cfg, RegRule("optimal"))


def test_lambda_search_does_not_touch_factorization():
    p = make_tomo_problem(8, 100, 0.04, 0)
    cfg = SolverConfig(method="rlsqr", max_iters=10, sketch_kind="gaussian", sketch_dims=(30, 30))
    r = solve(p, cfg)
    st_ = r.factorization
    V0 = st_.V.copy()
    calls = p.operator.matvec_count
    for rule in (RegRule("dp"), RegRule("gcv"), RegRule("optimal"), RegRule("wgcv", weight=0.7)):
        hybrid_iterate(st_, rule, p, "rlsqr")
    assert p.operator.matvec_count == calls
    assert np.array_equal(st_.V, V0)


@pytest.mark.parametrize("rule", [RegRule("dp"), RegRule("gcv"), RegRule("optimal"),
                                  RegRule("wgcv", weight="adaptive"), RegRule("fixed", lam=0.3)])
@pytest.mark.parametrize("method", ["rgmres", "gmres", "rlsqr", "lsqr", "rcgls", "rlsmr"])
def test_hybrid_solve_runs_every_rule(rule, method):
    p = random_problem(30, 30, 17, noise=0.05)
    cfg = SolverConfig(method=method, max_iters=6, sketch_kind="srht", sketch_dims=(20, 20))
    r = hybrid_solve(p, cfg, rule)
    assert r.iterations == 6 and r.history.hybrid
    lam = r.history.column("lambda")
    assert np.all(np.isfinite(lam)) and np.all(lam >= 0)
    np.testing.assert_allclose(r.x(6), build_projected(r.factorization, method).x(lam[-1]))
    header = r.history.to_csv(timing=False).splitlines()[0]
    assert header.endswith("rule,tau_or_w,flags")


def test_damped_zero_lambda_equals_rlsqr_with_identity():
    p = random_problem(12, 8, 18)
    cfg = SolverConfig(method="rlsqr", max_iters=6, sketch_kind="identity")
    d = rlsqr_damped_solve(p, 0.0, cfg)
    r = rlsqr_solve(p, cfg)
    for k in range(1, 7):
        np.testing.assert_allclose(d.x(k), r.x(k), rtol=1e-10)
    np.testing.assert_allclose(d.history.column("rel_error"), r.history.column("rel_error"),
                               rtol=1e-10)


def test_damped_identity_equals_lsqr_on_stacked_system():
    p = random_problem(12, 8, 19)
    lam = 0.4
    cfg = SolverConfig(method="rlsqr", max_iters=8, sketch_kind="identity")
    d = rlsqr_damped_solve(p, lam, cfg)
    A = p.operator.matrix
    stacked = InverseProblem(make_dense_operator(np.vstack([A, lam * np.eye(8)])),
                             np.concatenate([p.b, np.zeros(8)]))
    g = lsqr_solve(stacked, max_iters=8)
    for k in range(1, 9):
        np.testing.assert_allclose(d.x(k), g.x(k), rtol=1e-8)


def test_damped_differs_from_hybrid_fixed_lambda():
    p = make_tomo_problem(10, 100, 0.04, 0)
    cfg = SolverConfig(method="rlsqr", max_iters=10, seed=3)
    d = rlsqr_damped_solve(p, 0.5, cfg)
    h = hybrid_solve(p, cfg, RegRule("fixed", lam=0.5))
    diff = np.abs(d.history.column("rel_error") - h.history.column("rel_error")).max()
    assert diff > 1e-6


def test_damped_rejects_negative_lambda():
    with pytest.raises(ValueError):
        rlsqr_damped_solve(random_problem(12, 8, 0), -1.0, SolverConfig(max_iters=3))


@given(st.integers(0, 2000), st.sampled_from(ROWS), st.floats(1e-3, 1e2))
def test_framework_property(seed, method, lam):
    *_, st_, _, _ = small(method, seed, k=4)
    pt = build_projected(st_, method)
    z = pt.z(lam)[0]
    ref = direct_z(method, st_, lam)
    assert np.linalg.norm(z - ref) <= 1e-10 * max(np.linalg.norm(ref), 1e-300)
