import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, strategies as st

from conftest import random_problem
from randkrylov import factor as fz
from randkrylov.linop import InverseProblem, LinearOperator, make_dense_operator, make_tomo_problem
from randkrylov.oracle import orthonormal_krylov_basis
from randkrylov.sketch import make_sketch, measure_epsilon
from randkrylov.solvers import (IterationHistory, SolverConfig, make_sketches, projected_solve,
                                rcgls_solve, rgmres_solve, rlsmr_solve, rlsqr_solve, gmres_solve,
                                lsqr_solve, solve, svd_approx_report)


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def identity_cfg(method, K):
    return SolverConfig(method=method, max_iters=K, sketch_kind="identity")


def test_rgmres_identity_operator():
    p = InverseProblem(make_dense_operator(np.eye(6)), np.arange(1.0, 7.0))
    r = rgmres_solve(p, max_iters=3, sketch_kind="gaussian", sketch_dims=(5, None))
    assert r.iterations == 1
    np.testing.assert_allclose(r.x(1), p.b, atol=1e-14)
    assert r.history[0].projected_objective <= 1e-14
    assert "breakdown" in r.history[0].flags


def test_rgmres_identity_sketch_matches_gmres():
    p = random_problem(30, 30, 1)
    r = rgmres_solve(p, identity_cfg("rgmres", 15))
    g = gmres_solve(p, max_iters=15)
    for k in range(1, 16):
        assert rel(r.x(k), g.x(k)) <= 1e-10


def test_rgmres_needs_square():
    with pytest.raises(ValueError):
        rgmres_solve(random_problem(8, 5, 0), max_iters=3, sketch_kind="identity")


def test_rgmres_quasi_optimality_spd():
    rng = np.random.default_rng(2)
    B = rng.standard_normal((40, 40))
    A = B @ B.T + 40 * np.eye(40)
    b = rng.standard_normal(40)
    p = InverseProblem(make_dense_operator(A), b)
    cfg = SolverConfig(method="rgmres", max_iters=10, sketch_kind="srht", sketch_dims=(48, None))
    r = solve(p, cfg)
    g = gmres_solve(p, max_iters=10)
    eps = measure_epsilon(r.sketches[0], orthonormal_krylov_basis(A, b, 11))
    assert eps < 1
    k = 10
    lhs = np.linalg.norm(b - A @ r.x(k)) ** 2
    rhs = (1 + eps) / (1 - eps) * np.linalg.norm(b - A @ g.x(k)) ** 2
    assert lhs <= rhs


def test_rlsqr_consistent_system_solved_in_n_steps():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((8, 4))
    p = InverseProblem(make_dense_operator(A), A @ rng.standard_normal(4))
    r = rlsqr_solve(p, identity_cfg("rlsqr", 4))
    assert np.linalg.norm(A @ r.x(4) - p.b) <= 1e-10 * np.linalg.norm(p.b)


def test_lsqr_baselines_agree_with_scipy():
    p = random_problem(60, 40, 4)
    A = p.operator.matrix
    g = lsqr_solve(p, max_iters=20)
    r = rlsqr_solve(p, identity_cfg("rlsqr", 20))
    for k in range(1, 21):
        ref = spla.lsqr(A, p.b, atol=0, btol=0, conlim=0, iter_lim=k)[0]
        assert rel(g.x(k), ref) <= 1e-8
        assert rel(r.x(k), ref) <= 1e-8


def test_rcgls_identity_equals_lsqr():
    p = random_problem(60, 40, 5)
    c = rcgls_solve(p, identity_cfg("rcgls", 20))
    r = rlsqr_solve(p, identity_cfg("rlsqr", 20))
    g = lsqr_solve(p, max_iters=20)
    for k in range(1, 21):
        assert rel(c.x(k), g.x(k)) <= 1e-8
        assert rel(r.x(k), g.x(k)) <= 1e-8


def _tomo100():
    return make_tomo_problem(8, 100, 0.02, 0)


def _gauss_cfg(method, K, ell=(40, 50), seed=0):
    return SolverConfig(method=method, max_iters=K, sketch_kind="gaussian", sketch_dims=ell,
                        seed=seed)


def test_rlsqr_objective_is_sketched_residual():
    p = _tomo100()
    r = rlsqr_solve(p, _gauss_cfg("rlsqr", 15))
    th_m = r.sketches[1]
    A = p.operator.to_dense()
    for k in range(1, r.iterations + 1):
        direct = np.linalg.norm(th_m.apply(A @ r.x(k) - p.b))
        assert abs(r.history[k - 1].projected_objective - direct) <= 1e-10 * np.linalg.norm(p.b)
        assert r.history[k - 1].sketched_residual == pytest.approx(
            r.history[k - 1].projected_objective, rel=1e-10)


def test_rcgls_petrov_galerkin_condition():
    p = _tomo100()
    r = rcgls_solve(p, _gauss_cfg("rcgls", 5))
    th_n = r.sketches[0]
    A = p.operator.to_dense()
    st_ = r.factorization
    Pk = st_.P[:, :5]
    gap = np.linalg.norm(Pk.T @ th_n.apply(A.T @ (p.b - A @ r.x(5))))
    assert gap <= 1e-8 * np.linalg.norm(th_n.apply(A.T @ p.b))


def test_rcgls_first_step_scalar():
    p = _tomo100()
    r = rcgls_solve(p, _gauss_cfg("rcgls", 1))
    st_ = r.factorization
    TM = st_.Tk1 @ st_.Mk
    assert r.Z[0][0] == pytest.approx(st_.beta * st_.t11 / TM[0, 0], rel=1e-13)


def test_rcgls_singular_is_flagged():
    st_ = fz.GKFactorization(np.zeros((3, 3)), np.zeros((4, 3)), None, None,
                             np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]]), np.zeros((3, 3)),
                             1.0, k=1)
    z, obj, res, flag = projected_solve(st_, "rcgls")
    assert z is None and flag == "singular"


def test_rlsmr_identity_matches_dense_lsmr():
    p = random_problem(60, 40, 6)
    A, b = p.operator.matrix, p.b
    r = rlsmr_solve(p, identity_cfg("rlsmr", 15))
    for k in range(1, 16):
        W = orthonormal_krylov_basis(A.T @ A, A.T @ b, k)
        y = np.linalg.lstsq(A.T @ A @ W, A.T @ b, rcond=None)[0]
        ref = np.linalg.norm(A.T @ (A @ (W @ y) - b))
        got = np.linalg.norm(A.T @ (A @ r.x(k) - b))
        assert abs(got - ref) <= 1e-8 * np.linalg.norm(A.T @ b)
        assert r.history[k - 1].projected_objective == pytest.approx(got, rel=1e-8)


def test_rlsmr_objective_is_sketched_normal_residual():
    p = _tomo100()
    r = rlsmr_solve(p, _gauss_cfg("rlsmr", 5))
    th_n = r.sketches[0]
    A = p.operator.to_dense()
    for k in range(1, 6):
        direct = np.linalg.norm(th_n.apply(A.T @ (A @ r.x(k) - p.b)))
        assert abs(r.history[k - 1].projected_objective - direct) <= 1e-10 * np.linalg.norm(A.T @ p.b)


@pytest.mark.parametrize("method", ["rlsqr", "rcgls", "rlsmr", "lsqr", "rgmres", "gmres"])
def test_zero_data_gives_zero_iterates(method):
    p = InverseProblem(make_dense_operator(np.random.default_rng(0).standard_normal((6, 6))),
                       np.zeros(6))
    cfg = SolverConfig(method=method, max_iters=4, sketch_kind="identity")
    r = solve(p, cfg)
    assert r.iterations == 4
    for k in range(1, 5):
        assert np.all(r.x(k) == 0)
    assert r.history[0].flags == "zero_start"


@given(st.integers(0, 5000), st.sampled_from(["rgmres", "rlsqr", "gmres", "lsqr"]))
def test_projected_objective_nonincreasing(seed, method):
    p = random_problem(25, 25, seed)
    cfg = SolverConfig(method=method, max_iters=12, sketch_kind="srht", sketch_dims=(16, 16),
                       seed=seed)
    obj = solve(p, cfg).history.column("projected_objective")
    assert np.all(np.diff(obj) <= 1e-12 * obj[0])


@given(st.integers(0, 5000), st.sampled_from(["rlsqr", "rcgls", "rlsmr"]))
def test_iterates_lie_in_basis_range(seed, method):
    p = random_problem(20, 12, seed)
    r = solve(p, SolverConfig(method=method, max_iters=6, sketch_kind="gaussian",
                              sketch_dims=(10, 12), seed=seed))
    V = r.factorization.basis
    for k in range(1, r.iterations + 1):
        x = r.x(k)
        if x is None:
            continue
        Q, _ = np.linalg.qr(V[:, :k])
        assert np.linalg.norm(x - Q @ (Q.T @ x)) <= 1e-10 * max(np.linalg.norm(x), 1e-300)


def test_true_residual_recorded():
    p = random_problem(20, 12, 7)
    r = solve(p, SolverConfig(method="rlsqr", max_iters=4, sketch_kind="identity",
                              record_true_residuals=True))
    A = p.operator.matrix
    for k in range(1, 5):
        assert r.history[k - 1].true_residual == pytest.approx(
            np.linalg.norm(A @ r.x(k) - p.b), rel=1e-12)
    r = solve(p, SolverConfig(method="rlsqr", max_iters=4, sketch_kind="identity"))
    assert np.all(np.isnan(r.history.column("true_residual")))


def test_small_sketch_rejected_unless_allowed():
    with pytest.raises(ValueError):
        SolverConfig(method="rlsqr", max_iters=10, sketch_dims=(5, 20))
    SolverConfig(method="rlsqr", max_iters=10, sketch_dims=(5, 20), allow_small_sketch=True)


@pytest.mark.parametrize("kw", [dict(method="cg"), dict(max_iters=0), dict(sketch_dims=(3,))])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)


def test_default_sketch_dims():
    th_n, th_m = make_sketches(SolverConfig(method="rlsqr", max_iters=20), 300, 200)
    assert th_n.sketch_dim == min(int(np.ceil(40 * np.log(200) / np.log(20))), 256)
    assert th_m.input_dim == 300
    assert make_sketches(SolverConfig(method="lsqr"), 3, 2) == (None, None)
    assert make_sketches(SolverConfig(method="rgmres", max_iters=5), 30, 30)[1] is None


def test_history_csv_roundtrip(tmp_path):
    p = random_problem(20, 12, 8)
    r = solve(p, SolverConfig(method="rlsqr", max_iters=5, sketch_kind="identity"))
    text = r.history.to_csv(tmp_path / "h.csv", timing=False)
    assert text.splitlines()[0] == "k,lambda,projected_objective,sketched_residual,true_residual,rel_error,wall_ms"
    back = IterationHistory.from_csv(tmp_path / "h.csv")
    np.testing.assert_array_equal(back.column("rel_error"), r.history.column("rel_error"))
    assert back.column("k").tolist() == [1, 2, 3, 4, 5]


def test_numeric_failure_carries_partial_result():
    calls = {"n": 0}
    rng = np.random.default_rng(0)
    M = rng.standard_normal((6, 6))

    def mv(v):
        calls["n"] += 1
        return M @ v if calls["n"] < 4 else np.full(6, np.inf)

    p = InverseProblem(LinearOperator(6, 6, mv, lambda u: M.T @ u), np.ones(6))
    with pytest.raises(FloatingPointError) as info:
        solve(p, SolverConfig(method="gmres", max_iters=6))
    assert info.value.partial.iterations == 3


def test_svd_report_identity_matches_dense_ritz_values():
    p = random_problem(30, 20, 9)
    A, b = p.operator.matrix, p.b
    r = rlsqr_solve(p, identity_cfg("rlsqr", 6))
    rows = svd_approx_report(r.factorization, p.operator, ks=(2, 4, 6))
    for k in (2, 4, 6):
        Wv = orthonormal_krylov_basis(A.T @ A, A.T @ b, k)
        Wu = orthonormal_krylov_basis(A @ A.T, b, k + 1)
        ritz = np.linalg.svd(Wu.T @ A @ Wv, compute_uv=False)
        got = [row["value"] for row in rows if row["k"] == k and row["panel"] == "rlsqr"]
        np.testing.assert_allclose(got, ritz, rtol=1e-8)
    ref = [row["value"] for row in rows if row["panel"] == "A"]
    np.testing.assert_allclose(ref, np.linalg.svd(A, compute_uv=False)[:10], rtol=1e-12)


def test_svd_report_full_dimension_exact():
    p = random_problem(10, 6, 10)
    r = rlsqr_solve(p, identity_cfg("rlsqr", 6))
    rows = svd_approx_report(r.factorization, None, ks=(6,))
    got = [row["value"] for row in rows if row["panel"] == "rlsqr"]
    np.testing.assert_allclose(got, np.linalg.svd(p.operator.matrix, compute_uv=False), rtol=1e-8)


def test_svd_report_rejects_unavailable_k():
    p = random_problem(10, 6, 10)
    r = rlsqr_solve(p, identity_cfg("rlsqr", 3))
    with pytest.raises(ValueError):
        svd_approx_report(r.factorization, None, ks=(4,))
