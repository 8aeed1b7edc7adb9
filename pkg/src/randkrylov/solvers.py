"""Un-regularized Krylov solvers built on the factorizations in :mod:`factor`.

Each solver advances its factorization one step at a time and solves a
small projected problem per iteration. Only the coefficient vectors z_k
are kept; iterates x_k = basis_k z_k are formed on demand.
"""

import csv
import io
import math
import time
import warnings
from dataclasses import dataclass, field, fields
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg as sla

from randkrylov import factor as fz
from randkrylov.linop import InverseProblem
from randkrylov.sketch import SketchOperator, embedding_dim_default, make_sketch, next_pow2

METHODS = ("gmres", "rgmres", "lsqr", "rlsqr", "rcgls", "rlsmr")
ARNOLDI_METHODS = ("gmres", "rgmres")


@dataclass
class SolverConfig:
    method: str = "rlsqr"
    max_iters: int = 50
    # (ell_n, ell_m); None picks the heuristic default for each side
    sketch_dims: Optional[Tuple[Optional[int], Optional[int]]] = None
    sketch_kind: str = "srht"
    seed: int = 0
    breakdown_tol: float = 1e-14
    record_true_residuals: bool = False
    coeffs: str = "cgs"
    passes: int = 1
    resketch: bool = False
    # sketches smaller than max_iters+1 cannot embed the whole Krylov space;
    # they are rejected unless explicitly allowed
    allow_small_sketch: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.sketch_dims is not None:
            if len(self.sketch_dims) != 2:
                raise ValueError("sketch_dims must be a pair (ell_n, ell_m)")
            for ell in self.sketch_dims:
                if ell is not None and ell < self.max_iters + 1 and not self.allow_small_sketch:
                    raise ValueError(
                        f"sketch dimension {ell} < max_iters + 1 = {self.max_iters + 1}")

    @property
    def randomized(self):
        return self.method.startswith("r")

    def factor_options(self):
        return fz.FactorOptions(self.breakdown_tol, self.coeffs, self.passes, self.resketch)


def default_sketch_dim(kind, dim, max_iters):
    if kind == "identity":
        return dim
    ell = embedding_dim_default(dim, max(max_iters, 2))
    cap = next_pow2(dim) if kind == "srht" else dim
    return min(ell, cap)


def make_sketches(config: SolverConfig, m, n, label_m="theta_m", label_n="theta_n"):
    """Draw (theta_n, theta_m) for an m x n problem; None for deterministic methods."""
    if not config.randomized:
        return None, None
    ell_n, ell_m = config.sketch_dims or (None, None)
    kind = config.sketch_kind
    if ell_n is None:
        ell_n = default_sketch_dim(kind, n, config.max_iters)
    if ell_m is None:
        ell_m = default_sketch_dim(kind, m, config.max_iters)
    theta_n = make_sketch(kind, n, ell_n, config.seed, label_n)
    if config.method in ARNOLDI_METHODS:
        return theta_n, None
    return theta_n, make_sketch(kind, m, ell_m, config.seed, label_m)


# -- history ------------------------------------------------------------------

@dataclass
class IterRecord:
    k: int
    lam: float = 0.0
    projected_objective: float = math.nan
    sketched_residual: float = math.nan
    true_residual: float = math.nan
    rel_error: float = math.nan
    wall_ms: float = math.nan
    rule: str = ""
    tau_or_w: float = math.nan
    flags: str = ""


BASE_COLUMNS = ("k", "lambda", "projected_objective", "sketched_residual", "true_residual",
                "rel_error", "wall_ms")
HYBRID_COLUMNS = ("rule", "tau_or_w", "flags")


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "nan" if not np.isfinite(v) else repr(float(v))


@dataclass
class IterationHistory:
    records: List[IterRecord] = field(default_factory=list)
    hybrid: bool = False

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def column(self, name):
        attr = "lam" if name == "lambda" else name
        return np.array([getattr(r, attr) for r in self.records])

    @property
    def columns(self):
        return BASE_COLUMNS + (HYBRID_COLUMNS if self.hybrid else ())

    def rows(self, timing=True):
        for r in self.records:
            row = [r.k, r.lam, r.projected_objective, r.sketched_residual, r.true_residual,
                   r.rel_error, r.wall_ms if timing else math.nan]
            if self.hybrid:
                row += [r.rule, r.tau_or_w, r.flags]
            yield [_fmt(v) for v in row]

    def to_csv(self, path=None, timing=True):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        w.writerows(self.rows(timing))
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as f:
                f.write(text)
        return text

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as f:
            rd = csv.DictReader(f)
            hybrid = "rule" in (rd.fieldnames or ())
            recs = []
            for row in rd:
                rec = IterRecord(int(row["k"]))
                for fld in fields(IterRecord)[1:]:
                    key = "lambda" if fld.name == "lam" else fld.name
                    if key in row:
                        val = row[key]
                        setattr(rec, fld.name, val if fld.type is str or fld.type == "str"
                                else float(val))
                recs.append(rec)
        return cls(recs, hybrid)


@dataclass
class SolveResult:
    method: str
    factorization: object
    Z: List[Optional[np.ndarray]]
    history: IterationHistory
    sketches: Tuple[Optional[SketchOperator], Optional[SketchOperator]] = (None, None)

    @property
    def iterations(self):
        return len(self.Z)

    def x(self, k=None):
        """Iterate x_k (default: last); None if iterate k was skipped."""
        k = self.iterations if k is None else k
        if k < 1 or k > self.iterations:
            raise IndexError(f"iteration {k} not available (1..{self.iterations})")
        z = self.Z[k - 1]
        if z is None:
            return None
        return _basis(self.factorization)[:, :k] @ z

    def solutions(self):
        return [self.x(k) for k in range(1, self.iterations + 1)]


def _basis(st):
    return st.Q if isinstance(st, fz.ArnoldiFactorization) else st.V


# -- projected problems -------------------------------------------------------

def lstsq_qr(F, g):
    """min ||F z - g|| by Householder QR; falls back to SVD if R is singular."""
    Q, R = sla.qr(F, mode="economic")
    d = np.abs(np.diag(R))
    if d.size and d.min() > 1e-14 * d.max():
        return sla.solve_triangular(R, Q.T @ g)
    return np.linalg.lstsq(F, g, rcond=None)[0]


def e1(size, scale=1.0):
    v = np.zeros(size)
    v[0] = scale
    return v


def projected_solve(st, method):
    """Solve the k-th projected problem.

    Returns ``(z, objective, sketched_residual, flag)``; z is None and flag
    is "singular" when an rCGLS system cannot be solved.
    """
    k = st.k
    small = st.hessenberg if isinstance(st, fz.ArnoldiFactorization) else st.Mk
    if not (np.all(np.isfinite(small)) and np.isfinite(st.beta)):
        raise FloatingPointError(f"non-finite projected matrix at step {k}")
    if isinstance(st, fz.ArnoldiFactorization):
        F = st.hessenberg
        g = e1(k + 1, st.beta)
        z = lstsq_qr(F, g)
        res = float(np.linalg.norm(F @ z - g))
        return z, res, res, ""
    M = st.Mk
    g = e1(k + 1, st.beta)
    if method in ("lsqr", "rlsqr"):
        z = lstsq_qr(M, g)
        res = float(np.linalg.norm(M @ z - g))
        return z, res, res, ""
    TM = st.Tk1 @ M
    c = e1(k + 1, st.beta * st.t11)
    if method == "rcgls":
        A_small = TM[:k]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu, piv = sla.lu_factor(A_small, check_finite=True)
        d = np.abs(np.diag(lu))
        if d.min() <= 1e-14 * max(d.max(), 1e-300):
            return None, math.nan, math.nan, "singular"
        z = sla.lu_solve((lu, piv), c[:k])
        obj = float(np.linalg.norm(A_small @ z - c[:k]))
    elif method == "rlsmr":
        z = lstsq_qr(TM, c)
        obj = float(np.linalg.norm(TM @ z - c))
    else:
        raise ValueError(f"method {method!r} does not use a Golub-Kahan factorization")
    return z, obj, float(np.linalg.norm(M @ z - g)), ""


# -- driver -------------------------------------------------------------------

def start_factorization(problem: InverseProblem, config: SolverConfig, sketches=None):
    """Initialize the factorization that ``config.method`` runs on.

    Returns ``(state, step)`` where ``step(state)`` advances one iteration.
    """
    A, b, K = problem.operator, problem.b, config.max_iters
    opts = config.factor_options()
    method = config.method
    if sketches is None:
        sketches = make_sketches(config, A.nrows, A.ncols)
    theta_n, theta_m = sketches
    if method in ARNOLDI_METHODS:
        if A.nrows != A.ncols:
            raise ValueError(f"{method} needs a square operator, got {A.shape}")
        if method == "rgmres":
            st = fz.rarnoldi_init(A, b, theta_n, K, opts)
            return st, lambda s: fz.rarnoldi_step(s, A, theta_n), sketches
        st = fz.arnoldi_init(A, b, K, opts)
        return st, lambda s: fz.arnoldi_step(s, A), sketches
    if method == "lsqr":
        st = fz.gkb_init(A, b, K, reorth=False, options=opts)
        return st, lambda s: fz.gkb_step(s, A), sketches
    st = fz.rgk_init(A, b, theta_n, theta_m, K, opts)
    return st, lambda s: fz.rgk_step(s, A, theta_n, theta_m), sketches


def iterate_factorization(problem, config, sketches=None):
    """Yield the factorization state after each step k = 1, 2, ...

    Stops at ``max_iters`` or right after a breakdown step. If the process
    cannot even start (zero data), yields nothing.
    """
    st, step, _ = start_factorization(problem, config, sketches)
    while st.k < config.max_iters and not st.breakdown:
        step(st)
        yield st


def _rel_error(x, x_true):
    if x is None or x_true is None:
        return math.nan
    return float(np.linalg.norm(x - x_true) / np.linalg.norm(x_true))


def solve(problem: InverseProblem, config: SolverConfig, sketches=None) -> SolveResult:
    """Run ``config.method`` for up to ``max_iters`` iterations.

    A FloatingPointError raised mid-run carries the partial result in its
    ``partial`` attribute.
    """
    A, b = problem.operator, problem.b
    st, step, sketches = start_factorization(problem, config, sketches)
    hist = IterationHistory()
    result = SolveResult(config.method, st, [], hist, sketches)
    basis = _basis(st)
    t0 = time.perf_counter()
    if st.breakdown and st.k == 0:
        # zero data (or A^T b = 0): x = 0 is the answer at every k
        for k in range(1, config.max_iters + 1):
            result.Z.append(np.zeros(k))
            rn = float(np.linalg.norm(b))
            hist.records.append(IterRecord(
                k, 0.0, st.beta, st.beta, rn if config.record_true_residuals else math.nan,
                _rel_error(np.zeros(A.ncols), problem.x_true),
                (time.perf_counter() - t0) * 1e3, flags="zero_start"))
        return result
    try:
        while st.k < config.max_iters and not st.breakdown:
            step(st)
            k = st.k
            z, obj, sres, flag = projected_solve(st, config.method)
            result.Z.append(z)
            x = None if z is None else basis[:, :k] @ z
            true_res = math.nan
            if config.record_true_residuals and x is not None:
                true_res = float(np.linalg.norm(A.apply(x) - b))
            if st.breakdown:
                flag = ";".join(f for f in (flag, "breakdown") if f)
            hist.records.append(IterRecord(
                k, 0.0, obj, sres, true_res, _rel_error(x, problem.x_true),
                (time.perf_counter() - t0) * 1e3, flags=flag))
    except FloatingPointError as err:
        err.partial = result
        raise
    return result


def rgmres_solve(problem, config=None, **kw):
    return solve(problem, _cfg(config, "rgmres", kw))


def gmres_solve(problem, config=None, **kw):
    return solve(problem, _cfg(config, "gmres", kw))


def rlsqr_solve(problem, config=None, **kw):
    return solve(problem, _cfg(config, "rlsqr", kw))


def lsqr_solve(problem, config=None, **kw):
    return solve(problem, _cfg(config, "lsqr", kw))


def rcgls_solve(problem, config=None, **kw):
    return solve(problem, _cfg(config, "rcgls", kw))


def rlsmr_solve(problem, config=None, **kw):
    return solve(problem, _cfg(config, "rlsmr", kw))


def _cfg(config, method, kw):
    if config is None:
        return SolverConfig(method=method, **kw)
    if config.method != method:
        raise ValueError(f"config is for {config.method!r}, expected {method!r}")
    return config


# -- SVD approximation study --------------------------------------------------

PANELS = ("rlsqr", "rcgls", "rlsmr")


def svd_approx_report(st: fz.GKFactorization, A=None, ks: Sequence[int] = (2, 4, 6, 8, 10),
                      num_reference: int = 10, reference=None):
    """Singular values of the three rGK projected matrices at each k.

    Rows are dicts with keys ``k, panel, index, value``. Panel "A" holds the
    leading singular values of ``A`` (dense SVD, or the supplied
    ``reference`` array); "rlsqr" holds sigma(M_k), "rcgls"
    sqrt(sigma(T~_{k+1} M_k)) and "rlsmr" sqrt(sigma(T_{k+1} M_k)).
    """
    rows = []
    if reference is None and A is not None:
        dense = A.to_dense() if hasattr(A, "to_dense") else np.asarray(A)
        reference = np.linalg.svd(dense, compute_uv=False)
    if reference is not None:
        for i, s in enumerate(np.asarray(reference)[:num_reference]):
            rows.append(dict(k=0, panel="A", index=i + 1, value=float(s)))
    for k in ks:
        if k > st.k:
            raise ValueError(f"factorization only has {st.k} steps, requested k={k}")
        M = st.M[: k + 1, :k]
        T = st.T[: k + 1, : k + 1]
        TM = T @ M
        panels = {
            "rlsqr": np.linalg.svd(M, compute_uv=False),
            "rcgls": np.sqrt(np.linalg.svd(TM[:k], compute_uv=False)),
            "rlsmr": np.sqrt(np.linalg.svd(TM, compute_uv=False)),
        }
        for name in PANELS:
            for i, s in enumerate(panels[name]):
                rows.append(dict(k=k, panel=name, index=i + 1, value=float(s)))
    return rows
