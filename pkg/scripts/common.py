"""Shared options and run loop for the experiment scripts."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import time
from pathlib import Path

from sparsesdf import dataset, pipeline
from sparsesdf.train import TrainConfig, ablation_config, fast_field_config


def add_scale_options(p: argparse.ArgumentParser) -> None:
    """Options defaulting to the full settings; shrink them for single-core runs."""
    g = p.add_argument_group("scale")
    g.add_argument("--scene", default="room-two-chairs")
    g.add_argument("--views", type=int, default=10)
    g.add_argument("--matches-per-pair", type=int, default=2000)
    g.add_argument("--iterations", type=int, default=20000)
    g.add_argument("--rays", type=int, default=512)
    g.add_argument("--n-coarse", type=int, default=64)
    g.add_argument("--n-fine", type=int, default=32)
    g.add_argument("--sdf-hidden", type=int, default=128)
    g.add_argument("--sdf-layers", type=int, default=4)
    g.add_argument("--color-hidden", type=int, default=128)
    g.add_argument("--color-layers", type=int, default=3)
    g.add_argument("--feature-dim", type=int, default=64)
    g.add_argument("--mesh-resolution", type=int, default=256)
    g.add_argument("--points", type=int, default=100_000)
    g.add_argument("--gt-resolution", type=int, default=256)
    p.add_argument("--out", type=Path, default=None, help="directory for per-run outputs and results.json")
    p.add_argument("-v", "--verbose", action="store_true")


def configs(args, mode: str, seed: int):
    tcfg = ablation_config(TrainConfig(iterations=args.iterations, rays_per_batch=args.rays,
                                       n_coarse=args.n_coarse, n_fine=args.n_fine, seed=seed,
                                       log_every=max(args.iterations // 20, 1)), mode)
    fcfg = dataclasses.replace(fast_field_config(), sdf_hidden=args.sdf_hidden, sdf_layers=args.sdf_layers,
                               color_hidden=args.color_hidden, color_layers=args.color_layers,
                               feature_dim=args.feature_dim)
    return tcfg, fcfg


def run_all(args, modes, seeds) -> list[dict]:
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    t0 = time.perf_counter()
    data = dataset.synthesize(args.scene, args.views, matches_per_pair=args.matches_per_pair,
                              noise_px=0.5, outlier_rate=0.1, seed=0)
    print(f"synthesized {args.scene}: {len(data.cameras)} views in {time.perf_counter() - t0:.0f}s", flush=True)
    rows = []
    for seed in seeds:
        for mode in modes:
            tcfg, fcfg = configs(args, mode, seed)
            run_dir = args.out / f"{mode}-seed{seed}" if args.out else None
            res = pipeline.run_experiment(data, tcfg, fcfg, args.mesh_resolution, args.points, args.gt_resolution,
                                          out_dir=run_dir)
            row = dict(mode=mode, seed=seed, seconds=round(res.total_seconds, 1), **dataclasses.asdict(res.report))
            rows.append(row)
            print(f"{mode:14s} seed {seed}  {res.report.row()}  {res.total_seconds / 60:.1f} min", flush=True)
            if args.out:
                args.out.mkdir(parents=True, exist_ok=True)
                (args.out / "results.json").write_text(json.dumps(dict(settings=vars_json(args), runs=rows),
                                                                  indent=2) + "\n")
    return rows


def vars_json(args) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()}
