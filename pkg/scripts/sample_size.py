"""Minimum rLSQR error as the sketch size shrinks, median over seeds."""

import argparse

import numpy as np

from randkrylov import SolverConfig, make_tomo_problem, solve


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--side", type=int, default=64)
    ap.add_argument("--iters", type=int, default=100)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--fractions", type=float, nargs="+", default=[0.001, 0.005, 0.01, 0.05])
    args = ap.parse_args()

    problem = make_tomo_problem(args.side, noise_level=0.04, seed=0)
    m, n = problem.shape
    print("fraction  ell_n  ell_m  median_min_error  q25      q75")
    for frac in args.fractions:
        dims = (max(2, round(frac * n)), max(2, round(frac * m)))
        mins = [solve(problem, SolverConfig(method="rlsqr", max_iters=args.iters, sketch_dims=dims,
                                            seed=s, allow_small_sketch=True))
                .history.column("rel_error").min() for s in range(args.seeds)]
        q25, med, q75 = np.percentile(mins, [25, 50, 75])
        print(f"{frac:<8g}  {dims[0]:5d}  {dims[1]:5d}  {med:16.4f}  {q25:.4f}   {q75:.4f}")


if __name__ == "__main__":
    main()
