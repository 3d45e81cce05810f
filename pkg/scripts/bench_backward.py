"""Time one forward+backward iteration for bp and tp across sequence lengths
and print the per-length overhead ratio; the fixed cost of the single matrix
factorization washes out as sequences grow.

    python3 scripts/bench_backward.py --tau-grid 50,200,784 --p 100
"""

import argparse

from tprop.cli import bench_point


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tau-grid", default="50,200,784")
    ap.add_argument("--p", type=int, default=100)
    ap.add_argument("--batch", type=int, default=4)
    ap.add_argument("--reps", type=int, default=15)
    ap.add_argument("--out", default="", help="also write the rows as CSV")
    args = ap.parse_args()

    taus = [int(x) for x in args.tau_grid.split(",")]
    lines = ["tau,p,method,ms_per_iter,inversions"]
    print(f"{'tau':>5} {'bp ms':>9} {'tp ms':>9} {'tp/bp':>6}")
    for tau in taus:
        rows = bench_point(tau, args.p, args.batch, args.reps)
        by = {method: ms for _, _, method, ms, _ in rows}
        for row in rows:
            lines.append(f"{row[0]},{row[1]},{row[2]},{row[3]:.4f},{row[4]}")
        print(f"{tau:>5} {by['bp']:>9.3f} {by['tp']:>9.3f} "
              f"{by['tp'] / by['bp']:>6.2f}")
    if args.out:
        with open(args.out, "w") as f:
            f.write("\n".join(lines) + "\n")
        print(f"csv -> {args.out}")


if __name__ == "__main__":
    main()
