"""End-to-end synthetic reconstruction and the monocular-baseline comparison.

Trains the full model and the scale/shift-invariant monocular baseline on the
same seed, meshes both and scores them against the analytic scene.

    python3 scripts/run_e2e.py                       # full settings
    python3 scripts/run_e2e.py --iterations 3000 --rays 256 --n-coarse 32 --n-fine 16 \\
        --sdf-hidden 64 --sdf-layers 3 --color-hidden 64 --color-layers 2 --feature-dim 32 \\
        --mesh-resolution 128 --points 30000 --gt-resolution 128 --out runs/e2e
"""

import argparse

from common import add_scale_options, run_all

F_TARGET, F_FLOOR, MONO_GAP = 0.80, 0.70, 0.10


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    add_scale_options(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-mono", action="store_true", help="skip the monocular baseline run")
    args = p.parse_args()
    modes = ["full"] if args.no_mono else ["full", "mono-baseline"]
    rows = {r["mode"]: r for r in run_all(args, modes, [args.seed])}
    f = rows["full"]["fscore"]
    verdict = "meets target" if f >= F_TARGET else ("within tolerance" if f >= F_FLOOR else "below tolerance")
    print(f"full F-score {f:.3f}: {verdict} (target {F_TARGET}, floor {F_FLOOR})")
    if "mono-baseline" in rows:
        gap = f - rows["mono-baseline"]["fscore"]
        print(f"inter-image minus monocular F-score: {gap:.3f} ({'>=' if gap >= MONO_GAP else '<'} {MONO_GAP})")


if __name__ == "__main__":
    main()
