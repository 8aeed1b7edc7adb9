"""Print where rGK is cheaper than GKB with reorthogonalization in each cost panel."""

import argparse

from randkrylov.cost import panel_rows


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--m", type=int, default=10_000)
    ap.add_argument("--n", type=int, default=10_000)
    args = ap.parse_args()
    for panel in "abcd":
        rows = panel_rows(panel, args.m, args.n)
        axis = "K" if panel in "ab" else "ell_n"
        print(f"panel {panel}: {axis:5s} ell_n  ell_m  rGK/ro-GKB")
        for r in rows:
            print(f"         {r[axis]:5d} {r['ell_n']:6d} {r['ell_m']:6d}  "
                  f"{r['flops_rgk'] / r['flops_rogkb']:.3f}")


if __name__ == "__main__":
    main()
