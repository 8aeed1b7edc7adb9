"""Check the rGMRES residual against the GMRES residual times (1+eps)/(1-eps)."""

import argparse

import numpy as np

from randkrylov import (InverseProblem, SolverConfig, gmres_solve, make_dense_operator,
                        measure_epsilon, solve)
from randkrylov.oracle import orthonormal_krylov_basis


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=40)
    ap.add_argument("--iters", type=int, default=10)
    ap.add_argument("--ell", type=int, default=48)
    ap.add_argument("--seeds", type=int, default=20)
    args = ap.parse_args()
    worst = 0.0
    for seed in range(args.seeds):
        rng = np.random.default_rng(seed)
        A, b = rng.standard_normal((args.n, args.n)), rng.standard_normal(args.n)
        p = InverseProblem(make_dense_operator(A), b)
        r = solve(p, SolverConfig(method="rgmres", max_iters=args.iters, sketch_kind="srht",
                                  sketch_dims=(args.ell, None), seed=seed))
        g = gmres_solve(p, max_iters=args.iters)
        eps = measure_epsilon(r.sketches[0], orthonormal_krylov_basis(A, b, args.iters + 1))
        ratios = [np.linalg.norm(b - A @ r.x(k)) ** 2 / np.linalg.norm(b - A @ g.x(k)) ** 2
                  for k in range(1, args.iters + 1)]
        bound = (1 + eps) / (1 - eps) if eps < 1 else np.inf
        worst = max(worst, max(ratios) / bound)
        print(f"seed {seed:2d}  eps-hat {eps:.3f}  max ratio {max(ratios):.4f}  bound {bound:.3f}")
    print(f"largest ratio/bound {worst:.4f} ({'holds' if worst <= 1 else 'VIOLATED'})")


if __name__ == "__main__":
    main()
