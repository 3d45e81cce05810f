"""Train the same task with backprop and target propagation, overlay the loss
curves, and leave both metrics CSVs next to the plot.

    python3 scripts/compare_methods.py --task temporal-order --T 20 --iters 3000
"""

import argparse
import os

from tprop import trainer
from tprop.cli import write_line_svg

STEPSIZES = {
    # per-method settings that train at desk scale; bp needs a tiny stepsize
    # on the synthetic tasks while tp takes its two stepsizes and the ridge
    "bp": dict(gamma=1e-5, momentum=0.9),
    "tp": dict(gamma_h=1e-2, gamma_theta=1e-1, r=10.0),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--task", default="temporal-order")
    ap.add_argument("--T", type=int, default=20)
    ap.add_argument("--hidden", type=int, default=100)
    ap.add_argument("--iters", type=int, default=3000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", default="out/compare")
    args = ap.parse_args()

    os.makedirs(args.out_dir, exist_ok=True)
    series = []
    for method in ("bp", "tp"):
        cfg = trainer.ExperimentConfig(
            task=args.task, T=args.T, hidden=args.hidden, method=method,
            batch=20, iters=args.iters, eval_every=0, seed=args.seed,
            **STEPSIZES[method],
        )
        cfg.validate()
        res = trainer.train(cfg)
        log = res.log
        path = os.path.join(args.out_dir, f"{method}.csv")
        log.to_csv(path)
        tag = "diverged" if log.diverged else f"acc {log.running_accuracy():.3f}"
        print(f"{method}: {len(log.losses)} iters, final loss "
              f"{log.losses[-1]:.4f}, {tag} -> {path}")
        series.append((method, log.iters, log.losses))
    svg = os.path.join(args.out_dir, "loss.svg")
    write_line_svg(svg, series, ylabel="loss",
                   title=f"{args.task} T={args.T}, bp vs tp")
    print(f"plot -> {svg}")


if __name__ == "__main__":
    main()
