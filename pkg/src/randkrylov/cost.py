"""Closed-form flop counts for rGK, GKB and GKB with full reorthogonalization.

All counts are exact Python integers so that comparisons never suffer from
rounding. Sketch application costs are supplied by the caller, or modeled
by :func:`srht_cost` for a subsampled randomized Hadamard transform.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from randkrylov.sketch import EmbeddingSpec, embedding_dim_default, embedding_dim_theory


@dataclass(frozen=True)
class CostParams:
    m: int
    n: int
    K: int
    ell_n: int
    ell_m: int
    C_mv: int = 0
    C_sk_n: int = 0
    C_sk_m: int = 0

    def __post_init__(self):
        for name in ("m", "n", "ell_n", "ell_m"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("K", "C_mv", "C_sk_n", "C_sk_m"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


def flops_rgk(p: CostParams) -> int:
    K, m, n = p.K, p.m, p.n
    return ((2 * K + 1) * p.C_mv
            + (K + 1) * (m + n + p.C_sk_n + p.C_sk_m + 3 * (p.ell_n + p.ell_m) - 2)
            + K * (K + 1) * (m + n + 2 * p.ell_m + 2 * p.ell_n - 1))


def flops_gkb(p: CostParams) -> int:
    K, s = p.K, p.m + p.n
    return (2 * K + 1) * p.C_mv + (K + 1) * (5 * s - 2) - 2 * s


def flops_rogkb(p: CostParams) -> int:
    K, s = p.K, p.m + p.n
    return flops_gkb(p) + K * (K - 1) // 2 * (3 * s - 2)


def inner_products_rgk(p: CostParams) -> int:
    return (p.K + 1) * (p.K + 2) * (p.ell_m + p.ell_n - 1)


def inner_products_gkb(p: CostParams) -> int:
    return 2 * p.K * (p.n + p.m - 1)


def inner_products_rogkb(p: CostParams) -> int:
    return p.K * (p.K + 1) * (p.n + p.m - 1)


def srht_cost(dim, ell) -> int:
    """Flops to apply an SRHT of size ell x dim, modeled as 2 dim log2(ell+1)."""
    return math.ceil(2 * dim * math.log2(ell + 1))


def with_srht_costs(p: CostParams) -> CostParams:
    return replace(p, C_sk_n=srht_cost(p.n, p.ell_n), C_sk_m=srht_cost(p.m, p.ell_m))


def k_grid(lo=10, hi=5000, num=20):
    """About ``num`` log-spaced integers in [lo, hi] (duplicates removed)."""
    return [int(v) for v in np.unique(np.round(np.logspace(math.log10(lo), math.log10(hi), num)))]


def _row(p: CostParams):
    return dict(K=p.K, ell_n=p.ell_n, ell_m=p.ell_m, flops_rgk=flops_rgk(p),
                flops_gkb=flops_gkb(p), flops_rogkb=flops_rogkb(p))


def panel_rows(panel, m=10_000, n=10_000, C_mv=None, eps=0.5, delta=0.5):
    """Rows for one of the four cost panels.

    a: K sweep, ell from the (eps, delta) embedding bound
    b: K sweep, ell from the heuristic default
    c: ell sweep from K to 5000 at K=100
    d: ell sweep from K to 5000 at K=500

    ``C_mv`` defaults to a dense matvec, 2mn - m flops.
    """
    if C_mv is None:
        C_mv = 2 * m * n - m
    rows = []
    if panel in ("a", "b"):
        for K in k_grid():
            if panel == "a":
                ell_n = embedding_dim_theory(EmbeddingSpec(eps, delta, K + 1, n))[0]
                ell_m = embedding_dim_theory(EmbeddingSpec(eps, delta, K + 1, m))[0]
            else:
                ell_n = embedding_dim_default(n, K)
                ell_m = embedding_dim_default(m, K)
            rows.append(_row(with_srht_costs(CostParams(m, n, K, ell_n, ell_m, C_mv))))
    elif panel in ("c", "d"):
        K = 100 if panel == "c" else 500
        for ell in k_grid(K, 5000):
            rows.append(_row(with_srht_costs(CostParams(m, n, K, ell, ell, C_mv))))
    else:
        raise ValueError(f"unknown panel {panel!r}; expected a, b, c or d")
    return rows


FLOPS_COLUMNS = ("K", "ell_n", "ell_m", "flops_rgk", "flops_gkb", "flops_rogkb")
