"""Loss-component and matching-strategy ablations over several seeds.

Runs rgb-only, normal-only and full (loss components) plus no-epipolar and
no-angular (matching strategies), then prints per-mode mean and spread.

    python3 scripts/run_ablation.py --seeds 0 1 2 --iterations 3000 --rays 256 --n-coarse 32 --n-fine 16 \\
        --sdf-hidden 64 --sdf-layers 3 --color-hidden 64 --color-layers 2 --feature-dim 32 \\
        --mesh-resolution 128 --points 30000 --gt-resolution 128 --out runs/ablation
"""

import argparse
import math
import statistics

from common import add_scale_options, run_all

DEFAULT_MODES = ["full", "normal-only", "rgb-only", "no-epipolar", "no-angular"]
GAP = 0.05


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    add_scale_options(p)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--modes", nargs="+", default=DEFAULT_MODES)
    args = p.parse_args()
    rows = run_all(args, args.modes, args.seeds)
    F = {m: [r["fscore"] for r in rows if r["mode"] == m] for m in args.modes}
    mean = {m: statistics.fmean(v) for m, v in F.items()}
    print(f"\n{'mode':14s} {'mean F':>7s} {'std':>6s}  per seed")
    for m in args.modes:
        sd = statistics.stdev(F[m]) if len(F[m]) > 1 else float("nan")
        print(f"{m:14s} {mean[m]:7.3f} {sd:6.3f}  " + " ".join(f"{v:.3f}" for v in F[m]))
    if {"full", "normal-only", "rgb-only"} <= set(mean):
        a, b = mean["full"] - mean["normal-only"], mean["normal-only"] - mean["rgb-only"]
        print(f"full - normal-only {a:+.3f}, normal-only - rgb-only {b:+.3f} (each needs >= {GAP})")
    strat = [m for m in ("full", "no-epipolar", "no-angular") if m in F and len(F[m]) > 1]
    if len(strat) == 3:
        sigma = math.sqrt(statistics.fmean([statistics.variance(F[m]) for m in strat]))
        for m in ("no-epipolar", "no-angular"):
            gap = mean["full"] - mean[m]
            print(f"full - {m} {gap:+.3f} (needs >= -sigma = {-sigma:.3f})")


if __name__ == "__main__":
    main()
