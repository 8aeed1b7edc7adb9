"""Hybrid (projected Tikhonov) variants of the randomized Krylov solvers.

At step k every method reduces to

    x_k(lam) = V_k (P_k + lam^2 I)^{-1} c_k

with method-specific small matrices:

    method   P_k                  c_k
    rgmres   H^T H                beta H^T e1
    rlsqr    M^T M                beta M^T e1
    rcgls    T~ M                 beta t11 e1
    rlsmr    (T M)^T (T M)        beta t11 (T M)^T e1

Since V_k, P_k and c_k do not depend on lam, selecting lam only touches
k x k quantities. The symmetric rows are evaluated through the SVD of their
small factor (H, M or T M) instead of forming P_k.
"""

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Union

import numpy as np
import scipy.linalg as sla
from scipy.optimize import brentq

from randkrylov.linop import InverseProblem, stack_damped
from randkrylov.sketch import make_sketch
from randkrylov.solvers import (IterationHistory, IterRecord, SolveResult,
                                SolverConfig, _basis, _rel_error, default_sketch_dim, e1, solve,
                                start_factorization)

# deterministic baselines share the rGMRES / rLSQR rows
ROW_OF = {"gmres": "rgmres", "rgmres": "rgmres", "lsqr": "rlsqr", "rlsqr": "rlsqr",
          "rcgls": "rcgls", "rlsmr": "rlsmr"}

SV_RTOL = 1e-13


@dataclass
class ProjectedTikhonov:
    method: str
    V: np.ndarray
    P: np.ndarray
    c: np.ndarray
    fit: np.ndarray          # H_k or M_k: the sketched data-fit map
    beta: float
    t11: float = 0.0
    T: Optional[np.ndarray] = None
    F: Optional[np.ndarray] = None   # P = F^T F, c = F^T g (symmetric rows)
    g: Optional[np.ndarray] = None
    _svd: tuple = field(default=None, repr=False)

    @property
    def k(self):
        return self.P.shape[0]

    @property
    def symmetric(self):
        return self.F is not None

    def svd(self):
        if self._svd is None:
            U, s, Vt = np.linalg.svd(self.F, full_matrices=True)
            self._svd = (U, s, Vt)
        return self._svd

    def p_norm(self):
        if self.symmetric:
            s = self.svd()[1]
            return float(s[0] ** 2) if s.size else 0.0
        return float(np.linalg.norm(self.P, 2))

    def z(self, lam):
        """z_k(lam); flag "minnorm" when lam = 0 and the system is singular."""
        lam2 = float(lam) ** 2
        k = self.k
        if self.symmetric:
            U, s, Vt = self.svd()
            ghat = U[:, :k].T @ self.g
            keep = s > SV_RTOL * (s[0] if s.size else 0.0)
            filt = np.zeros_like(s)
            filt[keep] = s[keep] / (s[keep] ** 2 + lam2)
            if lam2 > 0.0:
                filt[~keep] = s[~keep] / (s[~keep] ** 2 + lam2)
            flag = "minnorm" if lam2 == 0.0 and not keep.all() else ""
            return Vt.T @ (filt * ghat), flag
        Areg = self.P + lam2 * np.eye(k)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu, piv = sla.lu_factor(Areg)
        d = np.abs(np.diag(lu))
        if d.min() > 1e-14 * max(d.max(), 1e-300):
            return sla.lu_solve((lu, piv), self.c), ""
        return np.linalg.lstsq(Areg, self.c, rcond=None)[0], "minnorm"

    def x(self, lam):
        return self.V @ self.z(lam)[0]

    def residual(self, lam):
        """Sketched data misfit ||Theta(A x_k(lam) - b)||."""
        z = self.z(lam)[0]
        return float(np.linalg.norm(self.fit @ z - e1(self.fit.shape[0], self.beta)))

    def trace(self, lam):
        """trace(A A_reg^dagger(lam)) from k x k quantities."""
        lam2 = float(lam) ** 2
        if self.symmetric:
            s2 = self.svd()[1] ** 2
            with np.errstate(invalid="ignore", divide="ignore"):
                r = np.where(s2 + lam2 > 0, s2 / (s2 + lam2), 0.0)
            return float(r.sum())
        return float(np.trace(np.linalg.solve(self.P + lam2 * np.eye(self.k), self.P)))


def build_projected(st, method) -> ProjectedTikhonov:
    """Assemble the Table-1 row for ``method`` from a factorization state."""
    row = ROW_OF[method]
    k = st.k
    V = _basis(st)[:, :k]
    if row == "rgmres":
        H = st.hessenberg
        g = e1(k + 1, st.beta)
        return ProjectedTikhonov(row, V, H.T @ H, H.T @ g, H, st.beta, F=H, g=g)
    M = st.Mk
    g = e1(k + 1, st.beta)
    if row == "rlsqr":
        return ProjectedTikhonov(row, V, M.T @ M, M.T @ g, M, st.beta, st.t11, st.Tk1,
                                 F=M, g=g)
    T = st.Tk1
    TM = T @ M
    if row == "rcgls":
        return ProjectedTikhonov(row, V, TM[:k], e1(k, st.beta * st.t11), M, st.beta,
                                 st.t11, T)
    gl = e1(k + 1, st.beta * st.t11)
    return ProjectedTikhonov(row, V, TM.T @ TM, TM.T @ gl, M, st.beta, st.t11, T, F=TM, g=gl)


# -- parameter choice ----------------------------------------------------------

class Selection(NamedTuple):
    lam: float
    flags: str = ""


@dataclass
class RegRule:
    kind: str = "dp"                 # fixed | optimal | dp | gcv | wgcv
    lam: float = 0.0                 # for kind="fixed"
    tau: float = 1.01                # for kind="dp"
    weight: Union[float, str] = 1.0  # for kind="wgcv"; "adaptive" for the running schedule
    bounds: Optional[tuple] = None   # absolute (lam_min, lam_max); default scales with ||P||
    grid_size: int = 60
    tol: float = 1e-6

    def __post_init__(self):
        if self.kind not in ("fixed", "optimal", "dp", "gcv", "wgcv"):
            raise ValueError(f"unknown rule kind {self.kind!r}")
        if self.kind == "dp" and not self.tau > 1.0:
            raise ValueError("discrepancy safety factor tau must exceed 1")
        if self.kind == "fixed" and self.lam < 0:
            raise ValueError("fixed lambda must be nonnegative")
        if self.bounds is not None and not 0.0 <= self.bounds[0] < self.bounds[1]:
            raise ValueError("bounds must satisfy 0 <= lam_min < lam_max")
        if self.kind == "wgcv" and self.weight != "adaptive" and not float(self.weight) > 0:
            raise ValueError("wgcv weight must be positive or 'adaptive'")

    @property
    def param(self):
        if self.kind == "dp":
            return self.tau
        if self.kind == "gcv":
            return 1.0
        if self.kind == "wgcv":
            return math.nan if self.weight == "adaptive" else float(self.weight)
        if self.kind == "fixed":
            return self.lam
        return math.nan


def search_bounds(pt: ProjectedTikhonov, bounds=None):
    if bounds is not None:
        return float(bounds[0]), float(bounds[1])
    scale = math.sqrt(pt.p_norm()) or 1.0
    return 1e-10 * scale, 1e4 * scale


def golden_section(f, a, b, tol):
    """Minimize f on [a, b] to absolute tolerance ``tol`` in the argument."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while abs(b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def _grid_then_golden(f, lo, hi, npts, tol_log):
    """Minimize f(lam) over a log grid, refining around the best grid point."""
    grid = np.logspace(math.log10(lo), math.log10(hi), npts)
    vals = np.array([f(l) for l in grid])
    i = int(np.nanargmin(vals))
    a = math.log10(grid[max(i - 1, 0)])
    b = math.log10(grid[min(i + 1, npts - 1)])
    t = golden_section(lambda u: f(10.0 ** u), a, b, tol_log)
    best, fbest = grid[i], vals[i]
    ft = f(10.0 ** t)
    if ft <= fbest:
        best, fbest = 10.0 ** t, ft
    return best, fbest, grid, vals, i


def select_lambda_dp(pt: ProjectedTikhonov, noise_norm, tau=1.01, bounds=None,
                     grid_size=60, rtol=1e-6) -> Selection:
    """Zero of phi(lam) - tau*noise_norm, phi the sketched misfit."""
    target = tau * noise_norm
    phi0 = pt.residual(0.0)
    if phi0 >= target:
        return Selection(0.0, "undershoot")
    lo, hi = search_bounds(pt, bounds)
    grid = np.logspace(math.log10(lo), math.log10(hi), grid_size)
    phis = np.array([pt.residual(l) for l in grid])
    flags = []
    scale = max(phis.max(), 1e-300)
    if np.any(np.diff(phis) < -1e-10 * scale):
        flags.append("nonmonotone")
    if phis[-1] < target:
        return Selection(float(hi), ";".join(flags + ["overshoot"]))
    j = int(np.argmax(phis >= target))
    f = lambda u: pt.residual(10.0 ** u) - target
    if j == 0:
        lam = brentq(lambda l: pt.residual(l) - target, 0.0, grid[0], xtol=1e-300,
                     rtol=4 * np.finfo(float).eps, maxiter=500)
    else:
        u = brentq(f, math.log10(grid[j - 1]), math.log10(grid[j]), xtol=1e-14,
                   rtol=4 * np.finfo(float).eps, maxiter=500)
        lam = 10.0 ** u
    if abs(pt.residual(lam) - target) > rtol * target:
        flags.append("inexact")
    return Selection(float(lam), ";".join(flags))


def gcv_function(pt: ProjectedTikhonov, w, n, m):
    """G_w(lam) = n phi(lam)^2 / (m - w trace(A A_reg^dagger(lam)))^2."""
    def G(lam):
        den = m - w * pt.trace(lam)
        if den <= 0:
            return math.inf
        return n * pt.residual(lam) ** 2 / den ** 2
    return G


def select_lambda_gcv(pt: ProjectedTikhonov, w=1.0, n=None, m=None, bounds=None,
                      grid_size=60, tol=1e-6) -> Selection:
    if not w > 0:
        raise ValueError("GCV weight must be positive")
    if n is None or m is None:
        raise ValueError("problem dimensions n and m are required")
    G = gcv_function(pt, w, n, m)
    lo, hi = search_bounds(pt, bounds)
    lam, _, grid, vals, i = _grid_then_golden(G, lo, hi, grid_size, 1e-6)
    flags = []
    finite = vals[np.isfinite(vals)]
    if finite.size and (finite.max() - finite.min()) <= tol * finite.max():
        flags.append("flat")
        lam = grid[i]
    elif i in (0, grid_size - 1):
        flags.append("boundary")
    return Selection(float(lam), ";".join(flags))


def adaptive_weight(pt: ProjectedTikhonov):
    """One-step WGCV weight estimate (HyBR-style ``findomega``).

    Assumes the optimal parameter equals the smallest singular value of the
    projected fit matrix, sets dG/dlam = 0 there and solves for the weight.
    """
    F = pt.F if pt.symmetric else pt.fit
    g = pt.g if pt.symmetric else e1(pt.fit.shape[0], pt.beta)
    U, s, _ = np.linalg.svd(F, full_matrices=True)
    k = s.size
    bhat = U.T @ g
    alpha = s[-1]
    t0 = float(np.sum(bhat[k:] ** 2))
    s2 = s ** 2
    a2 = alpha ** 2
    tt = 1.0 / (s2 + a2)
    t1 = np.sum(s2 * tt)
    t3 = np.sum((bhat[:k] * alpha * s) ** 2 * tt ** 3)
    t4 = np.sum((s * tt) ** 2)
    t5 = np.sum((a2 * bhat[:k] * tt) ** 2)
    v2 = np.sum((bhat[:k] * s) ** 2 * tt ** 3)
    den = t1 * t3 + t4 * (t5 + t0)
    if den <= 0 or not np.isfinite(den):
        return 1.0
    return float(F.shape[0] * a2 * v2 / den)


def _optimal_error_fn(pt: ProjectedTikhonov, x_true, gram=None):
    """err(lam) = ||V z(lam) - x_true|| through a Cholesky factor of V^T V."""
    V = pt.V
    G = V.T @ V if gram is None else gram
    h = V.T @ x_true
    xx = float(x_true @ x_true)
    try:
        R = np.linalg.cholesky(G).T
        q = sla.solve_triangular(R, h, trans="T")
        perp2 = max(xx - float(q @ q), 0.0)

        def err(lam):
            r = R @ pt.z(lam)[0] - q
            return math.sqrt(float(r @ r) + perp2)
    except np.linalg.LinAlgError:
        def err(lam):
            return float(np.linalg.norm(V @ pt.z(lam)[0] - x_true))
    return err


def select_lambda_optimal(pt: ProjectedTikhonov, x_true, bounds=None, grid_size=200,
                          gram=None) -> Selection:
    """Parameter minimizing the true error (oracle rule; needs x_true)."""
    err = _optimal_error_fn(pt, np.asarray(x_true, dtype=float), gram)
    lo, hi = search_bounds(pt, bounds)
    # 1e-4 relative in lam is ~4.3e-5 in log10(lam)
    lam, ebest, *_ = _grid_then_golden(err, lo, hi, grid_size, 4e-5)
    e0 = err(0.0)
    if e0 <= ebest * (1.0 + 1e-9) + 1e-14 * np.linalg.norm(x_true):
        return Selection(0.0, "")
    return Selection(float(lam), "")


class LambdaSelector:
    """Applies a :class:`RegRule` across iterations (holds the WGCV schedule)."""

    def __init__(self, rule: RegRule, problem: InverseProblem):
        self.rule = rule
        self.problem = problem
        self.weights: List[float] = []

    def select(self, pt: ProjectedTikhonov, gram=None) -> Selection:
        r, p = self.rule, self.problem
        m, n = p.operator.shape
        if r.kind == "fixed":
            return Selection(float(r.lam), "")
        if r.kind == "optimal":
            if p.x_true is None:
                raise ValueError("optimal rule needs x_true")
            return select_lambda_optimal(pt, p.x_true, r.bounds, gram=gram)
        if r.kind == "dp":
            if p.noise_norm is None:
                raise ValueError("discrepancy principle needs the noise norm")
            return select_lambda_dp(pt, p.noise_norm, r.tau, r.bounds, r.grid_size, r.tol)
        if r.kind == "gcv":
            return select_lambda_gcv(pt, 1.0, n, m, r.bounds, r.grid_size, r.tol)
        w = self.current_weight(pt)
        return select_lambda_gcv(pt, w, n, m, r.bounds, r.grid_size, r.tol)

    def current_weight(self, pt):
        if self.rule.weight != "adaptive":
            return float(self.rule.weight)
        self.weights.append(min(1.0, adaptive_weight(pt)))
        return float(np.mean(self.weights))


def hybrid_iterate(st, rule: RegRule, problem: InverseProblem, method,
                   selector: Optional[LambdaSelector] = None, gram=None):
    """Regularize the k-th projected problem. Returns (lam, x_k(lam), record)."""
    lam, x, rec, _ = _hybrid_step(st, rule, problem, method, selector, gram)
    return lam, x, rec


def _hybrid_step(st, rule, problem, method, selector=None, gram=None):
    if st.k < 1:
        raise ValueError("factorization has no steps yet")
    selector = selector or LambdaSelector(rule, problem)
    pt = build_projected(st, method)
    sel = selector.select(pt, gram=gram)
    z, zflag = pt.z(sel.lam)
    x = pt.V @ z
    flags = ";".join(f for f in (sel.flags, zflag) if f)
    param = rule.param
    if rule.kind == "wgcv" and rule.weight == "adaptive":
        param = float(np.mean(selector.weights))
    rec = IterRecord(st.k, sel.lam, float(np.linalg.norm(pt.fit @ z - e1(pt.fit.shape[0], pt.beta))),
                     math.nan, rule=rule.kind, tau_or_w=param, flags=flags)
    rec.sketched_residual = rec.projected_objective
    rec.rel_error = _rel_error(x, problem.x_true)
    return sel.lam, x, rec, z


def hybrid_solve(problem: InverseProblem, config: SolverConfig, rule: RegRule,
                 sketches=None) -> SolveResult:
    """Hybrid variant of ``config.method`` with per-iteration parameter choice."""
    A, b = problem.operator, problem.b
    st, step, sketches = start_factorization(problem, config, sketches)
    hist = IterationHistory(hybrid=True)
    result = SolveResult(config.method, st, [], hist, sketches)
    result.lambdas = []
    selector = LambdaSelector(rule, problem)
    basis = _basis(st)
    gram = np.zeros((config.max_iters, config.max_iters))
    t0 = time.perf_counter()
    try:
        while st.k < config.max_iters and not st.breakdown:
            step(st)
            k = st.k
            if rule.kind == "optimal":
                col = basis[:, :k].T @ basis[:, k - 1]
                gram[:k, k - 1] = col
                gram[k - 1, :k] = col
            lam, x, rec, z = _hybrid_step(st, rule, problem, config.method, selector,
                                            gram[:k, :k] if rule.kind == "optimal" else None)
            if config.record_true_residuals:
                rec.true_residual = float(np.linalg.norm(A.apply(x) - b))
            if st.breakdown:
                rec.flags = ";".join(f for f in (rec.flags, "breakdown") if f)
            rec.wall_ms = (time.perf_counter() - t0) * 1e3
            result.Z.append(z)
            result.lambdas.append(lam)
            hist.records.append(rec)
    except FloatingPointError as err:
        err.partial = result
        raise
    return result


def rlsqr_damped_solve(problem: InverseProblem, lam, config: SolverConfig,
                       sketch_dim_stacked=None, sketches=None) -> SolveResult:
    """rLSQR on the damped system [A; lam I] x = [b; 0] with one stacked sketch.

    The returned history's residual columns refer to the stacked system;
    relative errors are against the original x_true.
    """
    if lam < 0:
        raise ValueError("damping parameter must be nonnegative")
    A = problem.operator
    m, n = A.shape
    aug = stack_damped(A, lam)
    b_aug = np.concatenate([problem.b, np.zeros(n)])
    stacked = InverseProblem(aug, b_aug, problem.x_true, problem.noise_norm,
                             problem.noise_level, name=f"{problem.name}-damped")
    cfg = SolverConfig(**{**config.__dict__, "method": "rlsqr"})
    if sketches is None:
        kind = cfg.sketch_kind
        ell_n, ell_mn = cfg.sketch_dims or (None, None)
        if sketch_dim_stacked is not None:
            ell_mn = sketch_dim_stacked
        ell_n = ell_n or default_sketch_dim(kind, n, cfg.max_iters)
        ell_mn = ell_mn or default_sketch_dim(kind, m + n, cfg.max_iters)
        sketches = (make_sketch(kind, n, ell_n, cfg.seed, "theta_n"),
                    make_sketch(kind, m + n, ell_mn, cfg.seed, "theta_mn"))
    return solve(stacked, cfg, sketches)
