"""Oblivious subspace embeddings and sketch-dimension rules."""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from randkrylov._rng import stream

KINDS = ("gaussian", "srht", "identity")


def next_pow2(d):
    return 1 << max(0, (int(d) - 1).bit_length())


def fwht(x):
    """Orthonormal Walsh-Hadamard transform along axis 0 (Sylvester order).

    ``x.shape[0]`` must be a power of two. Runs in O(p log p) per column.
    """
    y = np.array(x, dtype=float)
    p = y.shape[0]
    if p & (p - 1):
        raise ValueError(f"length {p} is not a power of two")
    tail = y.shape[1:]
    h = 1
    while h < p:
        y = y.reshape((p // (2 * h), 2, h) + tail)
        a = y[:, 0]
        b = y[:, 1]
        y = np.stack([a + b, a - b], axis=1)
        h *= 2
    return y.reshape((p,) + tail) / math.sqrt(p)


@dataclass(frozen=True, eq=False)
class SketchOperator:
    """A fixed draw of a sketching matrix Theta of shape (sketch_dim, input_dim).

    Use :func:`make_sketch` to construct one from a seed. The SRHT variant
    stores only its sign diagonal and selected rows; it is never
    materialized as a dense matrix.
    """

    input_dim: int
    sketch_dim: int
    kind: str
    seed: int = 0
    label: str = ""
    signs: Optional[np.ndarray] = field(default=None, repr=False)
    rows: Optional[np.ndarray] = field(default=None, repr=False)
    matrix: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def padded_dim(self):
        return next_pow2(self.input_dim) if self.kind == "srht" else self.input_dim

    @property
    def shape(self):
        return (self.sketch_dim, self.input_dim)

    def apply(self, x):
        """Theta @ x for a vector or for each column of a 2-D array."""
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.input_dim:
            raise ValueError(f"sketch expects leading dimension {self.input_dim}, got {x.shape}")
        if self.kind == "identity":
            return x.copy()
        if self.kind == "gaussian":
            return self.matrix @ x
        p = self.padded_dim
        if p > self.input_dim:
            xp = np.zeros((p,) + x.shape[1:])
            xp[: self.input_dim] = x
        else:
            xp = x
        d = self.signs if x.ndim == 1 else self.signs[:, None]
        hx = fwht(d * xp)
        return math.sqrt(p / self.sketch_dim) * hx[self.rows]

    __call__ = apply

    def to_dense(self):
        return self.apply(np.eye(self.input_dim))


def make_sketch(kind, input_dim, sketch_dim=None, seed=0, label="") -> SketchOperator:
    """Draw a sketch of the given kind; ``label`` selects an independent stream."""
    if kind not in KINDS:
        raise ValueError(f"unknown sketch kind {kind!r}; expected one of {KINDS}")
    input_dim = int(input_dim)
    if input_dim < 1:
        raise ValueError("input_dim must be positive")
    if kind == "identity":
        if sketch_dim not in (None, input_dim):
            raise ValueError("identity sketch requires sketch_dim == input_dim")
        return SketchOperator(input_dim, input_dim, kind, seed, label)
    if sketch_dim is None or sketch_dim < 1:
        raise ValueError("sketch_dim must be a positive integer")
    sketch_dim = int(sketch_dim)
    if kind == "gaussian":
        if sketch_dim > input_dim:
            raise ValueError(f"gaussian sketch_dim {sketch_dim} exceeds input_dim {input_dim}")
        rng = stream(seed, f"{label}/gaussian")
        G = rng.standard_normal((sketch_dim, input_dim)) / math.sqrt(sketch_dim)
        return SketchOperator(input_dim, sketch_dim, kind, seed, label, matrix=G)
    p = next_pow2(input_dim)
    if sketch_dim > p:
        raise ValueError(f"srht sketch_dim {sketch_dim} exceeds padded dimension {p}")
    signs = stream(seed, f"{label}/signs").choice(np.array([-1.0, 1.0]), size=p)
    rows = np.sort(stream(seed, f"{label}/rows").choice(p, size=sketch_dim, replace=False))
    return SketchOperator(input_dim, sketch_dim, kind, seed, label, signs=signs, rows=rows)


def sketch_apply(theta: SketchOperator, x):
    return theta.apply(x)


@dataclass(frozen=True)
class EmbeddingSpec:
    eps: float
    delta: float
    max_dim: int
    ambient_dim: int

    def __post_init__(self):
        if not (0.0 < self.eps < 1.0 and 0.0 < self.delta < 1.0):
            raise ValueError("eps and delta must lie strictly inside (0, 1)")
        if self.max_dim < 1:
            raise ValueError("max_dim must be at least 1")
        if self.ambient_dim < 1:
            raise ValueError("ambient_dim must be positive")


def embedding_dim_theory(spec: EmbeddingSpec):
    """SRHT sketch size guaranteeing an (eps, delta, max_dim) oblivious embedding.

    Returns ``(ell, exceeds_ambient)``; when the flag is set the bound is
    larger than the ambient dimension and sketching buys nothing.
    """
    eps, delta, d, n = spec.eps, spec.delta, spec.max_dim, spec.ambient_dim
    val = (2.0 / (eps ** 2 - eps ** 3 / 3.0)
           * (math.sqrt(d) + math.sqrt(8.0 * math.log(6.0 * n / delta))) ** 2
           * math.log(3.0 * d / delta))
    ell = math.ceil(val)
    return ell, ell > n


def embedding_dim_default(ambient_dim, max_iters, literal=False):
    """Heuristic sketch size ``ceil(2 K log(n) / log(K))``.

    ``literal=True`` substitutes K+1 for K; the default form is the one that
    reproduces the published sizes 319, 512 and 482.
    """
    n, K = int(ambient_dim), int(max_iters)
    if n < 2 or K < 2:
        raise ValueError("need ambient_dim >= 2 and max_iters >= 2")
    k = K + 1 if literal else K
    return math.ceil(2.0 * k * math.log(n) / math.log(k))


def measure_epsilon(theta: SketchOperator, basis, tol=1e-10):
    """Smallest eps for which theta is an eps-embedding of range(basis).

    ``basis`` must have orthonormal columns.
    """
    Q = np.asarray(basis, dtype=float)
    if Q.ndim == 1:
        Q = Q[:, None]
    gram_err = np.abs(Q.T @ Q - np.eye(Q.shape[1])).max()
    if gram_err > tol:
        s = np.linalg.svd(Q, compute_uv=False)
        if s[-1] < tol:
            raise ValueError("basis is rank deficient")
        raise ValueError(f"basis columns are not orthonormal (max Gram error {gram_err:.2e})")
    s = np.linalg.svd(theta.apply(Q), compute_uv=False)
    return float(max(s[0] ** 2 - 1.0, 1.0 - s[-1] ** 2))
