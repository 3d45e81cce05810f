"""Sweep the tp parameter stepsize against the inversion ridge r, including
the unregularized r = 0 column, and render the area-under-loss heatmap.

    python3 scripts/regularization_grid.py --T 20 --iters 400 --jobs 4
"""

import argparse
import os

from tprop import trainer
from tprop.cli import write_heatmap_svg


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--task", default="temporal-order")
    ap.add_argument("--T", type=int, default=20)
    ap.add_argument("--hidden", type=int, default=100)
    ap.add_argument("--iters", type=int, default=400)
    ap.add_argument("--gamma-theta-grid", default="0.03,0.1,0.3,1.0")
    ap.add_argument("--r-grid", default="0,0.1,1,10")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", default="out/grid")
    args = ap.parse_args()

    base = trainer.ExperimentConfig(
        task=args.task, T=args.T, hidden=args.hidden, method="tp",
        batch=20, iters=args.iters, eval_every=0, seed=args.seed,
    )
    base.validate()
    gts = [float(x) for x in args.gamma_theta_grid.split(",")]
    rs = [float(x) for x in args.r_grid.split(",")]
    cells = trainer.grid_search(base, gts, rs, horizon=args.iters, jobs=args.jobs)

    os.makedirs(args.out_dir, exist_ok=True)
    csv = os.path.join(args.out_dir, "grid.csv")
    with open(csv, "w") as f:
        f.write("gamma_theta,r,area,diverged\n")
        for c in cells:
            f.write(f"{c.gamma_theta:.17g},{c.r:.17g},{c.area:.17g},"
                    f"{'true' if c.diverged else 'false'}\n")
    svg = os.path.join(args.out_dir, "grid.svg")
    write_heatmap_svg(svg, cells, title=f"{args.task} T={args.T} "
                                        f"area({args.iters} iters)")
    diverged = [(c.gamma_theta, c.r) for c in cells if c.diverged]
    print(f"{len(cells)} cells -> {csv}, {svg}")
    if diverged:
        print("diverged cells (gamma_theta, r):",
              ", ".join(f"({g:g}, {r:g})" for g, r in sorted(diverged)))


if __name__ == "__main__":
    main()
