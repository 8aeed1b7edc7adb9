"""Dense brute-force references for tests and acceptance runs.

Nothing here imports the factorizations or solvers. Sketches, when given,
are plain dense matrices.
"""

import numpy as np

MAX_ENTRIES = 10 ** 7


def _dense(A):
    if hasattr(A, "to_dense"):
        if A.shape[0] * A.shape[1] > MAX_ENTRIES:
            raise ValueError(f"operator {A.shape} too large for a dense oracle")
        return A.to_dense()
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError("expected a 2-D array")
    if A.size > MAX_ENTRIES:
        raise ValueError(f"matrix {A.shape} too large for a dense oracle")
    return A


def _svd_lstsq(F, g, rtol=1e-12):
    """Minimum-norm least squares through a truncated SVD."""
    U, s, Vt = np.linalg.svd(F, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(F.shape[1])
    keep = s > rtol * s[0]
    return Vt[keep].T @ ((U[:, keep].T @ g) / s[keep])


def dense_tikhonov(A, b, lam):
    """argmin ||A x - b||^2 + lam^2 ||x||^2 via QR of the stacked matrix."""
    A = _dense(A)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if lam == 0:
        return _svd_lstsq(A, b)
    K = np.vstack([A, lam * np.eye(n)])
    Q, R = np.linalg.qr(K)
    return np.linalg.solve(R, Q.T @ np.concatenate([b, np.zeros(n)]))


def dense_subspace_tikhonov(A, b, lam, V, theta_m=None, theta_n=None):
    """x = V z minimizing ||theta_m (A V z - b)||^2 + lam^2 ||theta_n V z||^2."""
    A = _dense(A)
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    b = np.asarray(b, dtype=float)
    Sm = np.eye(A.shape[0]) if theta_m is None else np.asarray(theta_m, dtype=float)
    Sn = np.eye(A.shape[1]) if theta_n is None else np.asarray(theta_n, dtype=float)
    k = V.shape[1]
    top = Sm @ (A @ V)
    bot = lam * (Sn @ V)
    K = np.vstack([top, bot])
    rhs = np.concatenate([Sm @ b, np.zeros(bot.shape[0])])
    Q, R = np.linalg.qr(K)
    d = np.abs(np.diag(R))
    if d.size and d.min() > 1e-12 * d.max():
        z = np.linalg.solve(R, Q.T @ rhs)
    else:
        z = _svd_lstsq(K, rhs)
    return V @ z


def orthonormal_krylov_basis(B, v, k, rtol=1e-12):
    """Orthonormal basis of span{v, Bv, ..., B^(k-1) v} by twice-repeated
    classical Gram-Schmidt; stops early when the space becomes invariant."""
    B = np.asarray(B, dtype=float)
    v = np.asarray(v, dtype=float)
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return np.zeros((v.size, 0))
    cols = [v / nv]
    for _ in range(1, k):
        w = B @ cols[-1]
        W = np.column_stack(cols)
        scale = np.linalg.norm(w)
        for _ in range(2):
            w = w - W @ (W.T @ w)
        nw = np.linalg.norm(w)
        if nw <= rtol * max(scale, 1e-300):
            break
        cols.append(w / nw)
    return np.column_stack(cols)


def dense_sketched_krylov_residual(A, b, Theta, k, kind="arnoldi"):
    """min over x in the k-th Krylov space of ||Theta (A x - b)||.

    ``kind="arnoldi"`` uses K_k(A, b); ``kind="normal"`` uses K_k(A^T A, A^T b).
    Returns ``(residual, x)``.
    """
    A = _dense(A)
    b = np.asarray(b, dtype=float)
    Th = np.eye(A.shape[0]) if Theta is None else np.asarray(Theta, dtype=float)
    if kind == "arnoldi":
        W = orthonormal_krylov_basis(A, b, k)
    elif kind == "normal":
        W = orthonormal_krylov_basis(A.T @ A, A.T @ b, k)
    else:
        raise ValueError(f"unknown Krylov kind {kind!r}")
    if W.shape[1] == 0:
        return float(np.linalg.norm(Th @ b)), np.zeros(A.shape[1])
    y = _svd_lstsq(Th @ (A @ W), Th @ b)
    x = W @ y
    return float(np.linalg.norm(Th @ (A @ x - b))), x
