"""End-to-end helpers shared by the CLI, scripts and acceptance tests."""

from __future__ import annotations

import functools
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import meshing, synthetic
from .field import SdfField

MESH_MARGIN = 0.05


def default_tau(scene: synthetic.AnalyticScene) -> float:
    """Synthetic-scene threshold: 2% of the room diagonal."""
    return 0.02 * scene.diagonal


@functools.lru_cache(maxsize=8)
def _gt_cloud(scene_key: str, resolution: int, n_points: int, seed: int) -> np.ndarray:
    scene = synthetic.parse_scene(scene_key)
    mesh = synthetic.ground_truth_mesh(scene, resolution, MESH_MARGIN)
    pts = meshing.sample_points(mesh, n_points, seed)
    # walls sit exactly on the box, so allow for round-off in the extracted vertices
    return meshing.crop_points(pts, scene.room_min, scene.room_max, pad=1e-6 * scene.diagonal)


def gt_cloud(scene: synthetic.AnalyticScene, resolution: int = 256, n_points: int = 100_000,
             seed: int = 1) -> np.ndarray:
    return _gt_cloud(synthetic.format_scene(scene), resolution, n_points, seed)


def field_mesh(fld: SdfField, scene: synthetic.AnalyticScene, resolution: int = 256) -> meshing.Mesh:
    pad = MESH_MARGIN * (scene.room_max - scene.room_min)
    return meshing.marching_cubes(fld, scene.room_min - pad, scene.room_max + pad, resolution)


def evaluate_mesh(mesh: meshing.Mesh, scene: synthetic.AnalyticScene, tau: float | None = None,
                  n_points: int = 100_000, gt_resolution: int = 256, seed: int = 0) -> meshing.MetricsReport:
    """Score a mesh against the analytic scene, keeping only points inside the room box.

    The box is padded by tau for the prediction so a wall recovered just outside it still counts.
    """
    tau = default_tau(scene) if tau is None else tau
    pred = meshing.crop_points(meshing.sample_points(mesh, n_points, seed), scene.room_min, scene.room_max, pad=tau)
    return meshing.evaluate(pred, gt_cloud(scene, gt_resolution, n_points), tau)


def evaluate_field(fld: SdfField, scene: synthetic.AnalyticScene, tau: float | None = None,
                   resolution: int = 256, n_points: int = 100_000, seed: int = 0) -> meshing.MetricsReport:
    return evaluate_mesh(field_mesh(fld, scene, resolution), scene, tau, n_points, seed=seed)


@dataclass
class ExperimentResult:
    report: meshing.MetricsReport
    history: list
    sources: dict
    train_seconds: float
    total_seconds: float


def run_experiment(data, train_cfg, field_cfg=None, mesh_resolution: int = 256, n_points: int = 100_000,
                   gt_resolution: int = 256, tau: float | None = None, out_dir=None,
                   callback=None) -> ExperimentResult:
    """Train on a synthetic capture, mesh the field and score it against the analytic scene."""
    from .train import train

    t0 = time.perf_counter()
    res = train(data, train_cfg, field_cfg, out_dir=out_dir, callback=callback)
    mesh = field_mesh(res.field, data.scene, mesh_resolution)
    rep = evaluate_mesh(mesh, data.scene, tau, n_points, gt_resolution)
    if out_dir is not None:
        meshing.write_ply(Path(out_dir) / "mesh.ply", mesh)
        rep.to_json(Path(out_dir) / "metrics.json")
    return ExperimentResult(rep, res.history, res.sources, res.seconds, time.perf_counter() - t0)
