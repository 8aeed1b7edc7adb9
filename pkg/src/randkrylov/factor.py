"""Krylov factorizations: randomized Arnoldi and Golub-Kahan, plus baselines.

Randomized variants orthonormalize with respect to the sketched inner
product <Theta x, Theta y>. The sketched vectors are updated by the same
recurrence as the full vectors, so each new basis vector costs one sketch.

Every factorization preallocates ``capacity + 1`` basis columns. After a
breakdown the trailing basis vector and its coefficients are zero, which
keeps the identities ``A Q_k = Q_{k+1} H_k`` and ``A V_k = U_{k+1} M_k``,
``A^T U_{k+1} = V_{k+1} T_{k+1}`` exact in shape and value.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from randkrylov.linop import LinearOperator
from randkrylov.sketch import SketchOperator


@dataclass
class FactorOptions:
    breakdown_tol: float = 1e-14
    # "cgs" uses S^T s directly; "lstsq" solves min ||S y - s|| instead
    coeffs: str = "cgs"
    passes: int = 1
    # re-sketch the projected vector rather than updating it recursively
    resketch: bool = False


def _checked(v, what):
    if not np.all(np.isfinite(v)):
        raise FloatingPointError(f"non-finite values in {what}")
    return v


def _project(w, sw, basis, sbasis, opts: FactorOptions):
    """Sketched Gram-Schmidt of (w, sw) against (basis, sbasis)."""
    coeff = np.zeros(basis.shape[1])
    for _ in range(opts.passes):
        if opts.coeffs == "lstsq":
            c = np.linalg.lstsq(sbasis, sw, rcond=None)[0]
        else:
            c = sbasis.T @ sw
        w = w - basis @ c
        sw = sw - sbasis @ c
        coeff += c
    return coeff, w, sw


# -- Arnoldi ------------------------------------------------------------------

@dataclass
class ArnoldiFactorization:
    Q: np.ndarray
    S: Optional[np.ndarray]
    H: np.ndarray
    beta: float
    k: int = 0
    breakdown: bool = False
    options: FactorOptions = field(default_factory=FactorOptions)

    @property
    def capacity(self):
        return self.H.shape[1]

    @property
    def randomized(self):
        return self.S is not None

    @property
    def basis(self):
        return self.Q[:, : self.k]

    @property
    def hessenberg(self):
        return self.H[: self.k + 1, : self.k]

    def storage_floats(self):
        n = self.Q.shape[0]
        ell = self.S.shape[0] if self.S is not None else 0
        return (self.k + 1) * (n + ell)


def rarnoldi_init(A: LinearOperator, b, theta_n: SketchOperator, capacity,
                  options: Optional[FactorOptions] = None) -> ArnoldiFactorization:
    if A.nrows != A.ncols:
        raise ValueError(f"Arnoldi needs a square operator, got {A.shape}")
    options = options or FactorOptions()
    n = A.ncols
    Q = np.zeros((n, capacity + 1))
    S = np.zeros((theta_n.sketch_dim, capacity + 1))
    H = np.zeros((capacity + 1, capacity))
    b = np.asarray(b, dtype=float)
    s = theta_n.apply(b)
    beta = float(np.linalg.norm(s))
    st = ArnoldiFactorization(Q, S, H, beta, options=options)
    if beta == 0.0:
        st.breakdown = True
        return st
    Q[:, 0] = b / beta
    S[:, 0] = s / beta
    return st


def rarnoldi_step(st: ArnoldiFactorization, A: LinearOperator,
                  theta_n: SketchOperator) -> ArnoldiFactorization:
    if A.nrows != A.ncols:
        raise ValueError(f"Arnoldi needs a square operator, got {A.shape}")
    if st.breakdown:
        raise RuntimeError("factorization has broken down; no further steps possible")
    if st.k >= st.capacity:
        raise RuntimeError(f"capacity {st.capacity} exhausted")
    k, opts = st.k, st.options
    w = _checked(A.apply(st.Q[:, k]), "operator output")
    sw = theta_n.apply(w)
    norm0 = np.linalg.norm(sw)
    coeff, w, sw = _project(w, sw, st.Q[:, : k + 1], st.S[:, : k + 1], opts)
    if opts.resketch:
        sw = theta_n.apply(w)
    r = np.linalg.norm(sw)
    st.H[: k + 1, k] = coeff
    st.k = k + 1
    if r <= opts.breakdown_tol * norm0 or norm0 == 0.0:
        st.breakdown = True
        return st
    st.H[k + 1, k] = r
    st.Q[:, k + 1] = w / r
    st.S[:, k + 1] = sw / r
    return st


def arnoldi_init(A: LinearOperator, b, capacity,
                 options: Optional[FactorOptions] = None) -> ArnoldiFactorization:
    if A.nrows != A.ncols:
        raise ValueError(f"Arnoldi needs a square operator, got {A.shape}")
    options = options or FactorOptions()
    n = A.ncols
    Q = np.zeros((n, capacity + 1))
    H = np.zeros((capacity + 1, capacity))
    b = np.asarray(b, dtype=float)
    beta = float(np.linalg.norm(b))
    st = ArnoldiFactorization(Q, None, H, beta, options=options)
    if beta == 0.0:
        st.breakdown = True
        return st
    Q[:, 0] = b / beta
    return st


def arnoldi_step(st: ArnoldiFactorization, A: LinearOperator) -> ArnoldiFactorization:
    """Classical Arnoldi step with modified Gram-Schmidt."""
    if st.breakdown:
        raise RuntimeError("factorization has broken down; no further steps possible")
    if st.k >= st.capacity:
        raise RuntimeError(f"capacity {st.capacity} exhausted")
    k = st.k
    w = _checked(A.apply(st.Q[:, k]), "operator output")
    norm0 = np.linalg.norm(w)
    for i in range(k + 1):
        h = st.Q[:, i] @ w
        w = w - h * st.Q[:, i]
        st.H[i, k] = h
    r = np.linalg.norm(w)
    st.k = k + 1
    if r <= st.options.breakdown_tol * norm0 or norm0 == 0.0:
        st.breakdown = True
        return st
    st.H[k + 1, k] = r
    st.Q[:, k + 1] = w / r
    return st


def rarnoldi(A, b, theta_n, steps, options=None):
    st = rarnoldi_init(A, b, theta_n, steps, options)
    while st.k < steps and not st.breakdown:
        rarnoldi_step(st, A, theta_n)
    return st


def arnoldi(A, b, steps, options=None):
    st = arnoldi_init(A, b, steps, options)
    while st.k < steps and not st.breakdown:
        arnoldi_step(st, A)
    return st


# -- Golub-Kahan --------------------------------------------------------------

@dataclass
class GKFactorization:
    """State of a (randomized) Golub-Kahan process after ``k`` steps.

    ``M`` is (capacity+1) x capacity upper Hessenberg and ``T`` is
    (capacity+1) x (capacity+1) upper triangular; only the leading
    (k+1) x k and (k+1) x (k+1) blocks are meaningful. For the
    deterministic processes ``P`` and ``S`` are None and ``M``, ``T``
    are bidiagonal.
    """

    V: np.ndarray
    U: np.ndarray
    P: Optional[np.ndarray]
    S: Optional[np.ndarray]
    M: np.ndarray
    T: np.ndarray
    beta: float
    k: int = 0
    breakdown: bool = False
    variant: str = "rgk"
    options: FactorOptions = field(default_factory=FactorOptions)

    @property
    def capacity(self):
        return self.M.shape[1]

    @property
    def t11(self):
        return float(self.T[0, 0])

    @property
    def randomized(self):
        return self.P is not None

    @property
    def basis(self):
        return self.V[:, : self.k]

    @property
    def Mk(self):
        return self.M[: self.k + 1, : self.k]

    @property
    def Tk1(self):
        return self.T[: self.k + 1, : self.k + 1]

    def storage_floats(self):
        n, m = self.V.shape[0], self.U.shape[0]
        if self.variant == "gkb":
            return 2 * (n + m)
        extra = 0 if self.P is None else self.P.shape[0] + self.S.shape[0]
        return (self.k + 1) * (n + m + extra)


def _gk_alloc(A, capacity, theta_n, theta_m, variant, options):
    m, n = A.shape
    V = np.zeros((n, capacity + 1))
    U = np.zeros((m, capacity + 1))
    P = None if theta_n is None else np.zeros((theta_n.sketch_dim, capacity + 1))
    S = None if theta_m is None else np.zeros((theta_m.sketch_dim, capacity + 1))
    M = np.zeros((capacity + 1, capacity))
    T = np.zeros((capacity + 1, capacity + 1))
    return GKFactorization(V, U, P, S, M, T, 0.0, variant=variant,
                           options=options or FactorOptions())


def rgk_init(A: LinearOperator, b, theta_n: SketchOperator, theta_m: SketchOperator,
             capacity, options: Optional[FactorOptions] = None) -> GKFactorization:
    st = _gk_alloc(A, capacity, theta_n, theta_m, "rgk", options)
    b = np.asarray(b, dtype=float)
    s = theta_m.apply(b)
    st.beta = float(np.linalg.norm(s))
    if st.beta == 0.0:
        st.breakdown = True
        return st
    st.U[:, 0] = b / st.beta
    st.S[:, 0] = s / st.beta
    v = _checked(A.apply_transpose(st.U[:, 0]), "transpose output")
    p = theta_n.apply(v)
    t = np.linalg.norm(p)
    if t == 0.0:
        st.breakdown = True
        return st
    st.T[0, 0] = t
    st.V[:, 0] = v / t
    st.P[:, 0] = p / t
    return st


def rgk_step(st: GKFactorization, A: LinearOperator, theta_n: SketchOperator,
             theta_m: SketchOperator) -> GKFactorization:
    if st.breakdown:
        raise RuntimeError("factorization has broken down; no further steps possible")
    if st.k >= st.capacity:
        raise RuntimeError(f"capacity {st.capacity} exhausted")
    k, opts = st.k, st.options
    tol = opts.breakdown_tol

    # new U column from A v_k, sketched with Theta^(m)
    w = _checked(A.apply(st.V[:, k]), "operator output")
    sw = theta_m.apply(w)
    norm0 = np.linalg.norm(sw)
    coeff, w, sw = _project(w, sw, st.U[:, : k + 1], st.S[:, : k + 1], opts)
    if opts.resketch:
        sw = theta_m.apply(w)
    mk = np.linalg.norm(sw)
    st.M[: k + 1, k] = coeff
    st.k = k + 1
    if mk <= tol * norm0 or norm0 == 0.0:
        st.breakdown = True
        return st
    st.M[k + 1, k] = mk
    st.U[:, k + 1] = w / mk
    st.S[:, k + 1] = sw / mk

    # new V column from A^T u_{k+1}, sketched with Theta^(n)
    y = _checked(A.apply_transpose(st.U[:, k + 1]), "transpose output")
    sy = theta_n.apply(y)
    norm0 = np.linalg.norm(sy)
    coeff, y, sy = _project(y, sy, st.V[:, : k + 1], st.P[:, : k + 1], opts)
    if opts.resketch:
        sy = theta_n.apply(y)
    tk = np.linalg.norm(sy)
    st.T[: k + 1, k + 1] = coeff
    if tk <= tol * norm0 or norm0 == 0.0:
        st.breakdown = True
        return st
    st.T[k + 1, k + 1] = tk
    st.V[:, k + 1] = y / tk
    st.P[:, k + 1] = sy / tk
    return st


def gkb_init(A: LinearOperator, b, capacity, reorth=False,
             options: Optional[FactorOptions] = None) -> GKFactorization:
    st = _gk_alloc(A, capacity, None, None, "rogkb" if reorth else "gkb", options)
    b = np.asarray(b, dtype=float)
    st.beta = float(np.linalg.norm(b))
    if st.beta == 0.0:
        st.breakdown = True
        return st
    st.U[:, 0] = b / st.beta
    v = _checked(A.apply_transpose(st.U[:, 0]), "transpose output")
    alpha = np.linalg.norm(v)
    if alpha == 0.0:
        st.breakdown = True
        return st
    st.T[0, 0] = alpha
    st.V[:, 0] = v / alpha
    return st


def gkb_step(st: GKFactorization, A: LinearOperator) -> GKFactorization:
    """Golub-Kahan bidiagonalization step (short recurrence).

    A ``rogkb`` state additionally reorthogonalizes each new vector against
    the stored basis with one classical Gram-Schmidt pass.
    """
    if st.breakdown:
        raise RuntimeError("factorization has broken down; no further steps possible")
    if st.k >= st.capacity:
        raise RuntimeError(f"capacity {st.capacity} exhausted")
    k = st.k
    tol = st.options.breakdown_tol
    reorth = st.variant == "rogkb"
    alpha = st.T[k, k]

    w = _checked(A.apply(st.V[:, k]), "operator output")
    norm0 = np.linalg.norm(w)
    w = w - alpha * st.U[:, k]
    if reorth:
        w = w - st.U[:, : k + 1] @ (st.U[:, : k + 1].T @ w)
    beta = np.linalg.norm(w)
    st.M[k, k] = alpha
    st.k = k + 1
    if beta <= tol * norm0 or norm0 == 0.0:
        st.breakdown = True
        return st
    st.M[k + 1, k] = beta
    st.U[:, k + 1] = w / beta

    y = _checked(A.apply_transpose(st.U[:, k + 1]), "transpose output")
    norm0 = np.linalg.norm(y)
    y = y - beta * st.V[:, k]
    if reorth:
        y = y - st.V[:, : k + 1] @ (st.V[:, : k + 1].T @ y)
    alpha = np.linalg.norm(y)
    st.T[k, k + 1] = beta
    if alpha <= tol * norm0 or norm0 == 0.0:
        st.breakdown = True
        return st
    st.T[k + 1, k + 1] = alpha
    st.V[:, k + 1] = y / alpha
    return st


def rogkb_init(A, b, capacity, options=None):
    return gkb_init(A, b, capacity, reorth=True, options=options)


rogkb_step = gkb_step


def rgk(A, b, theta_n, theta_m, steps, options=None):
    st = rgk_init(A, b, theta_n, theta_m, steps, options)
    while st.k < steps and not st.breakdown:
        rgk_step(st, A, theta_n, theta_m)
    return st


def gkb(A, b, steps, reorth=False, options=None):
    st = gkb_init(A, b, steps, reorth=reorth, options=options)
    while st.k < steps and not st.breakdown:
        gkb_step(st, A)
    return st


# -- snapshots ----------------------------------------------------------------

def save_factorization(path, st):
    """Write a factorization to an ``.npz`` container."""
    opts = st.options
    common = dict(beta=st.beta, k=st.k, breakdown=st.breakdown,
                  breakdown_tol=opts.breakdown_tol, coeffs=opts.coeffs,
                  passes=opts.passes, resketch=opts.resketch)
    if isinstance(st, ArnoldiFactorization):
        arrays = dict(kind="arnoldi", Q=st.Q, H=st.H)
        if st.S is not None:
            arrays["S"] = st.S
    else:
        arrays = dict(kind="gk", variant=st.variant, V=st.V, U=st.U, M=st.M, T=st.T)
        if st.P is not None:
            arrays.update(P=st.P, S=st.S)
    np.savez(path, **common, **arrays)


def load_factorization(path):
    with np.load(path, allow_pickle=False) as z:
        d = {key: z[key] for key in z.files}
    opts = FactorOptions(float(d["breakdown_tol"]), str(d["coeffs"]), int(d["passes"]),
                         bool(d["resketch"]))
    beta, k, bd = float(d["beta"]), int(d["k"]), bool(d["breakdown"])
    if str(d["kind"]) == "arnoldi":
        return ArnoldiFactorization(d["Q"], d.get("S"), d["H"], beta, k, bd, opts)
    return GKFactorization(d["V"], d["U"], d.get("P"), d.get("S"), d["M"], d["T"], beta,
                           k, bd, str(d["variant"]), opts)
