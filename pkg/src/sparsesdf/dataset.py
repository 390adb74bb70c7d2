"""On-disk layout of a synthetic capture and its in-memory form.

A data directory holds::

    cameras.txt           camera records (see geometry.read_cameras)
    matches.txt           match blocks (see priors.load_matches)
    scene.txt             analytic scene description, when synthetic
    images/NNN.png        colour images
    depth/NNN.pfm         ray-distance depth maps
    normal/NNN.pfm        world-frame normal maps (the normal prior)
    meta.json             synthesis parameters
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry, imageio, priors, synthetic
from .errors import MissingInput, NoOverlap


@dataclass
class SceneData:
    cameras: dict[int, geometry.Camera]
    images: dict[int, np.ndarray]
    normals: dict[int, np.ndarray]
    matches: priors.MatchSet
    box_min: np.ndarray
    box_max: np.ndarray
    depths: dict[int, np.ndarray] = field(default_factory=dict)
    scene: synthetic.AnalyticScene | None = None
    meta: dict = field(default_factory=dict)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(np.asarray(self.box_max) - np.asarray(self.box_min)))

    @property
    def views(self) -> list[int]:
        return sorted(self.cameras)


def scene_box(scene: synthetic.AnalyticScene, margin: float = 0.1):
    """Room box padded by ``margin`` of its extent, the sampling volume for rays."""
    pad = margin * (scene.room_max - scene.room_min)
    return scene.room_min - pad, scene.room_max + pad


def from_scene(scene, cameras, views: dict[int, synthetic.OracleView], matches, meta=None) -> SceneData:
    lo, hi = scene_box(scene)
    return SceneData(
        cameras=dict(cameras),
        images={k: v.color.astype(np.float32) for k, v in views.items()},
        normals={k: v.normal.astype(np.float32) for k, v in views.items()},
        matches=matches,
        box_min=lo,
        box_max=hi,
        depths={k: v.depth.astype(np.float32) for k, v in views.items()},
        scene=scene,
        meta=meta or {},
    )


def save(data: SceneData, out_dir) -> list[Path]:
    out = Path(out_dir)
    for sub in ("images", "depth", "normal"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    written = [out / "cameras.txt", out / "matches.txt"]
    geometry.write_cameras(written[0], data.cameras)
    priors.save_matches(written[1], data.matches)
    for v in data.views:
        imageio.write_png(out / "images" / f"{v:03d}.png", data.images[v])
        imageio.write_pfm(out / "normal" / f"{v:03d}.pfm", data.normals[v])
        written += [out / "images" / f"{v:03d}.png", out / "normal" / f"{v:03d}.pfm"]
        if v in data.depths:
            imageio.write_pfm(out / "depth" / f"{v:03d}.pfm", data.depths[v])
            written.append(out / "depth" / f"{v:03d}.pfm")
    if data.scene is not None:
        (out / "scene.txt").write_text(synthetic.format_scene(data.scene))
        written.append(out / "scene.txt")
    meta = dict(data.meta, box_min=list(map(float, data.box_min)), box_max=list(map(float, data.box_max)))
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    written.append(out / "meta.json")
    return written


def load(data_dir) -> SceneData:
    d = Path(data_dir)
    for name in ("cameras.txt", "matches.txt"):
        if not (d / name).is_file():
            raise MissingInput(f"{d / name} not found")
    cams = geometry.read_cameras(d / "cameras.txt")
    matches = priors.load_matches(d / "matches.txt", cams)
    images, normals, depths = {}, {}, {}
    for v in cams:
        img = d / "images" / f"{v:03d}.png"
        nrm = d / "normal" / f"{v:03d}.pfm"
        if not img.is_file():
            raise MissingInput(f"{img} not found")
        images[v] = imageio.read_png(img)
        if nrm.is_file():
            normals[v] = imageio.read_pfm(nrm)
        dep = d / "depth" / f"{v:03d}.pfm"
        if dep.is_file():
            depths[v] = imageio.read_pfm(dep)
    meta = json.loads((d / "meta.json").read_text()) if (d / "meta.json").is_file() else {}
    scene = None
    if (d / "scene.txt").is_file():
        scene = synthetic.parse_scene((d / "scene.txt").read_text(), name=meta.get("scene", "custom"))
    if "box_min" in meta:
        lo, hi = np.array(meta["box_min"]), np.array(meta["box_max"])
    elif scene is not None:
        lo, hi = scene_box(scene)
    else:
        centers = np.array([c.center for c in cams.values()])
        pad = 0.1 * (centers.max(0) - centers.min(0)) + 1.0
        lo, hi = centers.min(0) - pad, centers.max(0) + pad
    return SceneData(cams, images, normals, matches, lo, hi, depths, scene, meta)


def synthesize(scene_name: str = "room-two-chairs", n_views: int = 10, pattern: str = "ring",
               matches_per_pair: int = 2000, noise_px: float = 0.5, outlier_rate: float = 0.1, seed: int = 0,
               width: int = 128, height: int = 96, textured: bool = True) -> SceneData:
    """Scene, rig, oracle maps and matches for every unordered view pair."""
    scene = synthetic.build_scene(scene_name, textured=textured)
    cams = synthetic.make_camera_rig(scene, n_views, pattern, width=width, image_height=height)
    cameras = dict(enumerate(cams))
    views = {k: synthetic.render_oracle(scene, c) for k, c in cameras.items()}
    ms = priors.MatchSet()
    for a in cameras:
        for b in cameras:
            if a < b:
                try:
                    block = synthetic.generate_matches(
                        scene, cameras[a], cameras[b], matches_per_pair, noise_px, outlier_rate,
                        seed=seed * 1000003 + a * 1009 + b, ref_view=a, src_view=b,
                    )
                except NoOverlap:
                    # keep one block per pair; an empty block records that the frusta share nothing
                    block = priors.MatchBlock(a, b, np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0))
                ms.add(block)
    meta = dict(scene=scene.name, n_views=n_views, pattern=pattern, matches_per_pair=matches_per_pair,
                noise_px=noise_px, outlier_rate=outlier_rate, seed=seed, width=width, height=height,
                textured=textured)
    return from_scene(scene, cameras, views, ms, meta)
