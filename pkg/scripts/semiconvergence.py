"""Error histories of LSQR, rLSQR and hybrid rLSQR on a tomography problem.

Writes one long-format CSV (method, k, rel_error, lambda) and prints the
minimum error and where it occurs for every curve.
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from randkrylov import RegRule, SolverConfig, hybrid_solve, lsqr_solve, make_tomo_problem, solve


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--side", type=int, default=64)
    ap.add_argument("--iters", type=int, default=100)
    ap.add_argument("--noise", type=float, default=0.04)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("semiconvergence.csv"))
    args = ap.parse_args()

    problem = make_tomo_problem(args.side, noise_level=args.noise, seed=args.seed)
    cfg = SolverConfig(method="rlsqr", max_iters=args.iters, seed=args.seed)
    runs = {
        "lsqr": lsqr_solve(problem, max_iters=args.iters),
        "rlsqr": solve(problem, cfg),
        "hybrid-rlsqr-opt": hybrid_solve(problem, cfg, RegRule("optimal")),
        "hybrid-rlsqr-dp": hybrid_solve(problem, cfg, RegRule("dp")),
        "hybrid-rlsqr-gcv": hybrid_solve(problem, cfg, RegRule("gcv")),
    }
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("method", "k", "rel_error", "lambda"))
        for name, r in runs.items():
            for rec in r.history:
                w.writerow((name, rec.k, repr(rec.rel_error), repr(rec.lam)))
    print(f"problem {problem.shape[0]}x{problem.shape[1]}, sketches "
          f"{[s.shape for s in runs['rlsqr'].sketches]}")
    for name, r in runs.items():
        e = r.history.column("rel_error")
        j = int(np.argmin(e))
        print(f"{name:18s} min error {e[j]:.4f} at k={j + 1:3d}, final {e[-1]:.4f}")


if __name__ == "__main__":
    main()
