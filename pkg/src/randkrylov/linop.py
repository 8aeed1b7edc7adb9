"""Black-box linear operators and desk-scale inverse-problem generators.

Solvers in this package only ever call :meth:`LinearOperator.apply` and
:meth:`LinearOperator.apply_transpose`; entry access is never needed.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import scipy.io
import scipy.sparse as sp
from scipy import ndimage

from randkrylov._rng import stream


class LinearOperator:
    """Rectangular operator ``A`` given by its forward and transpose actions."""

    def __init__(self, nrows: int, ncols: int, matvec: Callable, rmatvec: Callable,
                 name: str = "operator"):
        if nrows < 1 or ncols < 1:
            raise ValueError(f"operator dimensions must be positive, got {nrows}x{ncols}")
        self.nrows = int(nrows)
        self.ncols = int(ncols)
        self._matvec = matvec
        self._rmatvec = rmatvec
        self.name = name
        self.matvec_count = 0

    @property
    def shape(self):
        return (self.nrows, self.ncols)

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.ncols,):
            raise ValueError(f"apply expects a vector of length {self.ncols}, got {v.shape}")
        self.matvec_count += 1
        return np.asarray(self._matvec(v), dtype=float).reshape(self.nrows)

    def apply_transpose(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.nrows,):
            raise ValueError(
                f"apply_transpose expects a vector of length {self.nrows}, got {u.shape}")
        self.matvec_count += 1
        return np.asarray(self._rmatvec(u), dtype=float).reshape(self.ncols)

    def to_dense(self):
        """Materialize column by column (tests and oracles only)."""
        out = np.empty((self.nrows, self.ncols))
        e = np.zeros(self.ncols)
        for j in range(self.ncols):
            e[j] = 1.0
            out[:, j] = self._matvec(e)
            e[j] = 0.0
        return out

    def norm_estimate(self, iters=30, seed=0):
        """Power-iteration estimate of the spectral norm."""
        rng = stream(seed, "norm_estimate")
        v = rng.standard_normal(self.ncols)
        v /= np.linalg.norm(v)
        s = 0.0
        for _ in range(iters):
            w = self._rmatvec(self._matvec(v))
            nw = np.linalg.norm(w)
            if nw == 0.0:
                return 0.0
            s = np.sqrt(nw)
            v = w / nw
        return float(s)

    def __repr__(self):
        return f"LinearOperator({self.name}, {self.nrows}x{self.ncols})"


def make_dense_operator(matrix) -> LinearOperator:
    A = np.array(matrix, dtype=float)
    if A.ndim != 2 or A.size == 0:
        raise ValueError(f"need a non-empty 2-D array, got shape {A.shape}")
    op = LinearOperator(A.shape[0], A.shape[1], A.dot, A.T.dot, name="dense")
    op.matrix = A
    return op


def make_sparse_operator(matrix) -> LinearOperator:
    A = sp.csr_matrix(matrix, dtype=float)
    if A.shape[0] == 0 or A.shape[1] == 0:
        raise ValueError(f"need a non-empty matrix, got shape {A.shape}")
    At = A.T.tocsr()
    op = LinearOperator(A.shape[0], A.shape[1], A.dot, At.dot, name="sparse")
    op.matrix = A
    return op


def stack_damped(op: LinearOperator, lam: float) -> LinearOperator:
    """The augmented operator ``[A; lam*I]`` acting on R^n -> R^(m+n)."""
    m, n = op.shape

    def matvec(x):
        return np.concatenate([op._matvec(x), lam * x])

    def rmatvec(y):
        return op._rmatvec(y[:m]) + lam * y[m:]

    return LinearOperator(m + n, n, matvec, rmatvec, name=f"damped({op.name}, {lam:g})")


@dataclass
class InverseProblem:
    operator: LinearOperator
    b: np.ndarray
    x_true: Optional[np.ndarray] = None
    noise_norm: Optional[float] = None
    noise_level: Optional[float] = None
    name: str = "problem"

    @property
    def shape(self):
        return self.operator.shape


def add_noise(b_exact, noise_level, seed):
    """Gaussian noise rescaled to exactly ``noise_level * ||b_exact||``."""
    if not 0.0 <= noise_level < 1.0:
        raise ValueError(f"noise_level must lie in [0, 1), got {noise_level}")
    if noise_level == 0.0:
        return b_exact.copy(), 0.0
    e = stream(seed, "noise").standard_normal(b_exact.shape[0])
    e *= noise_level * np.linalg.norm(b_exact) / np.linalg.norm(e)
    b = b_exact + e
    # measured rather than nominal, so the discrepancy principle sees the real ||e||
    return b, float(np.linalg.norm(b - b_exact))


# -- deblurring -------------------------------------------------------------

def gaussian_psf(width):
    r = int(np.ceil(3.0 * width))
    t = np.arange(-r, r + 1)
    g = np.exp(-0.5 * (t / width) ** 2)
    psf = np.outer(g, g)
    return psf / psf.sum()


def blur_phantom(side):
    """Centered disk plus two rectangles, values in [0, 1]."""
    y, x = np.mgrid[0:side, 0:side] + 0.5
    c = side / 2.0
    img = np.zeros((side, side))
    img[(x - c) ** 2 + (y - c) ** 2 <= (0.3 * side) ** 2] = 0.5
    img[int(0.15 * side):int(0.35 * side), int(0.55 * side):int(0.85 * side)] = 1.0
    img[int(0.6 * side):int(0.85 * side), int(0.2 * side):int(0.35 * side)] = 0.75
    return img / img.max()


def blur_operator(side, psf_width) -> LinearOperator:
    psf = gaussian_psf(psf_width)

    def matvec(x):
        return ndimage.convolve(x.reshape(side, side), psf, mode="constant", cval=0.0).ravel()

    def rmatvec(y):
        return ndimage.correlate(y.reshape(side, side), psf, mode="constant", cval=0.0).ravel()

    op = LinearOperator(side * side, side * side, matvec, rmatvec, name=f"blur{side}")
    op.psf = psf
    return op


def make_blur_problem(side=32, psf_width=1.5, noise_level=0.01, seed=0) -> InverseProblem:
    if side < 8:
        raise ValueError("side must be at least 8")
    if psf_width <= 0:
        raise ValueError("psf_width must be positive")
    if not 0.0 <= noise_level < 1.0:
        raise ValueError(f"noise_level must lie in [0, 1), got {noise_level}")
    op = blur_operator(side, psf_width)
    x_true = blur_phantom(side).ravel()
    b, nn = add_noise(op.apply(x_true), noise_level, seed)
    return InverseProblem(op, b, x_true, nn, noise_level, name=f"blur{side}")


# -- straight-ray tomography ------------------------------------------------

def ray_pixel_lengths(p0, p1, side):
    """Pixel indices and intersection lengths of segment p0->p1 with the grid.

    The domain is [0, side]^2 with unit pixels; pixel (row, col) covers
    y in [row, row+1), x in [col, col+1) and has flat index row*side + col.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    d = p1 - p0
    length = float(np.hypot(*d))
    if length == 0.0:
        return np.empty(0, dtype=int), np.empty(0)
    ts = [np.array([0.0, 1.0])]
    for ax in range(2):
        if d[ax] != 0.0:
            lines = np.arange(0, side + 1, dtype=float)
            t = (lines - p0[ax]) / d[ax]
            ts.append(t[(t > 0.0) & (t < 1.0)])
    t = np.unique(np.concatenate(ts))
    mid = 0.5 * (t[:-1] + t[1:])
    seg = np.diff(t) * length
    pts = p0[None, :] + mid[:, None] * d[None, :]
    col = np.floor(pts[:, 0]).astype(int)
    row = np.floor(pts[:, 1]).astype(int)
    keep = (seg > 0) & (col >= 0) & (col < side) & (row >= 0) & (row < side)
    idx = row[keep] * side + col[keep]
    return idx, seg[keep]


def random_rays(side, num_rays, seed):
    """Sources on the left/bottom edges, receivers on the right/top edges."""
    rng = stream(seed, "rays")
    s_edge = rng.integers(0, 2, num_rays)
    r_edge = rng.integers(0, 2, num_rays)
    s_pos = rng.uniform(0.0, side, num_rays)
    r_pos = rng.uniform(0.0, side, num_rays)
    src = np.where(s_edge[:, None] == 0,
                   np.column_stack([np.zeros(num_rays), s_pos]),
                   np.column_stack([s_pos, np.zeros(num_rays)]))
    rec = np.where(r_edge[:, None] == 0,
                   np.column_stack([np.full(num_rays, float(side)), r_pos]),
                   np.column_stack([r_pos, np.full(num_rays, float(side))]))
    return src, rec


def tomo_matrix(side, sources, receivers):
    rows, cols, vals = [], [], []
    for i, (p0, p1) in enumerate(zip(sources, receivers)):
        idx, seg = ray_pixel_lengths(p0, p1, side)
        rows.append(np.full(idx.size, i))
        cols.append(idx)
        vals.append(seg)
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(len(sources), side * side))
    A.sum_duplicates()
    return A


def tomo_phantom(side):
    """Smooth Gaussian bump on a constant background, plus a block insert."""
    y, x = (np.mgrid[0:side, 0:side] + 0.5) / side
    img = 0.5 + 0.35 * np.exp(-((x - 0.4) ** 2 + (y - 0.55) ** 2) / 0.03)
    img[int(0.2 * side):int(0.4 * side), int(0.6 * side):int(0.8 * side)] += 0.3
    return img


def make_tomo_problem(side=32, num_rays=None, noise_level=0.04, seed=0) -> InverseProblem:
    if side < 8:
        raise ValueError("side must be at least 8")
    if num_rays is None:
        num_rays = 2 * side * side
    if num_rays < 1:
        raise ValueError("num_rays must be positive")
    if not 0.0 <= noise_level < 1.0:
        raise ValueError(f"noise_level must lie in [0, 1), got {noise_level}")
    src, rec = random_rays(side, num_rays, seed)
    op = make_sparse_operator(tomo_matrix(side, src, rec))
    op.name = f"tomo{side}"
    op.rays = (src, rec)
    x_true = tomo_phantom(side).ravel()
    b, nn = add_noise(op.apply(x_true), noise_level, seed)
    return InverseProblem(op, b, x_true, nn, noise_level, name=f"tomo{side}")


# -- files ------------------------------------------------------------------

def load_matrix_market(path) -> LinearOperator:
    A = scipy.io.mmread(str(path))
    op = make_sparse_operator(A) if sp.issparse(A) else make_dense_operator(A)
    op.name = Path(path).stem
    return op


def load_vector(path):
    return np.atleast_1d(np.loadtxt(str(path), dtype=float))


def save_vector(path, x):
    np.savetxt(str(path), np.asarray(x), fmt="%.17g")
