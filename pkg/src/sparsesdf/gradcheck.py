"""Finite-difference verification of loss gradients with respect to field parameters.

Every loss term is evaluated on a small float64 field over fixed (unstratified)
ray samples, so the loss is a deterministic function of the parameters. Each
probe perturbs one scalar parameter by ``+-h`` and compares the central
difference against the reverse-mode gradient.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

import numpy as np
import torch

from . import geometry, losses, render, synthetic
from .field import FieldConfig, SdfField

TERMS = ("rgb", "depth", "reproj", "normal", "eikonal", "mono", "total")


@dataclass
class GradcheckConfig:
    probes: int = 100
    step: float = 1e-6
    n_rays: int = 8
    n_samples: int = 24
    n_eikonal: int = 32
    # denominators are floored at this fraction of the largest gradient entry
    floor: float = 1e-4
    tolerance: float = 1e-3
    seed: int = 0


@dataclass
class TermReport:
    term: str
    probes: int
    max_rel_error: float
    median_rel_error: float
    grad_norm: float
    seconds: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def row(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (f"{self.term:8s} probes {self.probes:4d}  max rel {self.max_rel_error:.2e}  "
                f"median rel {self.median_rel_error:.2e}  |g| {self.grad_norm:.3e}  {self.seconds:.1f}s  {flag}")


def _fixture(cfg: GradcheckConfig):
    """Tiny scene, camera pair, rays, samples and random targets for every term."""
    scene = synthetic.build_scene("room-two-chairs")
    cams = synthetic.make_camera_rig(scene, 6, width=32, image_height=24)
    cam_r, cam_s = cams[0], cams[1]
    rng = np.random.default_rng(cfg.seed)
    pix = np.column_stack([rng.uniform(0, cam_r.width, cfg.n_rays), rng.uniform(0, cam_r.height, cfg.n_rays)])
    o, d = geometry.pixels_to_rays(cam_r, pix)
    diag = scene.diagonal
    near, far = render.ray_box_range(o, d, scene.room_min - 0.1, scene.room_max + 0.1, diag)
    t, deltas = render.bin_samples(near, far, cfg.n_samples, stratified=False, dtype=torch.float64)

    lo, hi = np.asarray(scene.room_min), np.asarray(scene.room_max)
    fcfg = FieldConfig(sdf_hidden=32, sdf_layers=3, color_hidden=32, color_layers=2, feature_dim=8, pe_levels=4,
                       dir_levels=2, inside_out=True, center=[float(v) for v in 0.5 * (lo + hi)],
                       scale=float(0.5 * np.max(hi - lo)))
    fld = SdfField(fcfg, seed=cfg.seed).double()
    # move beta off its initial value so its gradient is generic
    with torch.no_grad():
        fld.beta.fill_(0.15)

    normals = rng.normal(size=(cfg.n_rays, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    data = dict(
        o=torch.tensor(o), d=torch.tensor(d), t=t, deltas=deltas,
        color=torch.tensor(rng.uniform(0, 1, (cfg.n_rays, 3))),
        normal=torch.tensor(normals),
        prior=torch.tensor(rng.uniform(1.0, 4.0, cfg.n_rays)),
        u=torch.tensor(rng.uniform(0, 0.8, cfg.n_rays)),
        w=torch.tensor(rng.uniform(0.01, 0.25, cfg.n_rays)),
        match=torch.tensor(rng.uniform(0, 32, (cfg.n_rays, 2))),
        mono=torch.tensor(rng.uniform(0.5, 3.0, cfg.n_rays)),
        eik=torch.tensor(rng.uniform(lo, hi, (cfg.n_eikonal, 3))),
        cam_r=cam_r,
        cam_s=cam_s,
    )
    return fld, data


def _term_fn(term: str, data: dict):
    weights = losses.LossWeights()

    def components(fld: SdfField) -> dict:
        out = render.render_rays(fld, data["o"], data["d"], data["t"], data["deltas"], create_graph=True)
        _, g, _ = fld.sdf_with_gradient(data["eik"], create_graph=True)
        q = losses.reproject_torch(data["cam_r"], data["cam_s"], data["o"], data["d"], out.depth)
        return {
            "rgb": losses.rgb_loss(out.color, data["color"]),
            "normal": losses.normal_loss(out.normal, data["normal"]),
            "eikonal": losses.eikonal_loss(torch.cat([g, out.gradients.reshape(-1, 3)])),
            "depth": losses.interimage_depth_loss(out.depth, data["prior"], data["u"], data["w"]),
            "reproj": losses.reprojection_loss(data["match"], q, data["u"], data["w"]),
            "mono": losses.monocular_depth_baseline_loss(out.depth, data["mono"])[0],
        }

    def fn(fld: SdfField) -> torch.Tensor:
        comp = components(fld)
        if term == "total":
            return losses.total_loss({k: comp[k] for k in losses.COMPONENTS}, weights)[0]
        return comp[term]

    return fn


def _probe_sites(fld: SdfField, n: int, rng: np.random.Generator):
    """``n`` random (parameter, flat index) pairs, sampled proportionally to tensor size."""
    params = [p for p in fld.parameters()]
    sizes = np.array([p.numel() for p in params], dtype=float)
    which = rng.choice(len(params), size=n, p=sizes / sizes.sum())
    # always include beta once; it is a single scalar and otherwise rarely drawn
    beta_idx = next(i for i, p in enumerate(params) if p is fld.beta)
    which[0] = beta_idx
    return [(params[i], int(rng.integers(params[i].numel()))) for i in which]


def check_term(term: str, cfg: GradcheckConfig | None = None) -> TermReport:
    cfg = cfg or GradcheckConfig()
    if term not in TERMS:
        raise ValueError(f"unknown term {term!r}; choose from {TERMS}")
    start = time.perf_counter()
    fld, data = _fixture(cfg)
    fn = _term_fn(term, data)
    fld.zero_grad()
    loss = fn(fld)
    loss.backward()
    grads = {id(p): p.grad.detach().clone() for p in fld.parameters() if p.grad is not None}
    scale = max(float(g.abs().max()) for g in grads.values())
    rng = np.random.default_rng(cfg.seed + 1000 * TERMS.index(term))
    errs = []
    with torch.no_grad():
        for p, k in _probe_sites(fld, cfg.probes, rng):
            flat = p.view(-1)
            orig = flat[k].item()
            flat[k] = orig + cfg.step
            up = fn(fld).item()
            flat[k] = orig - cfg.step
            down = fn(fld).item()
            flat[k] = orig
            fd = (up - down) / (2 * cfg.step)
            an = grads[id(p)].view(-1)[k].item() if id(p) in grads else 0.0
            denom = max(abs(an), abs(fd), cfg.floor * scale)
            errs.append(abs(an - fd) / denom)
    errs = np.array(errs)
    return TermReport(term, len(errs), float(errs.max()), float(np.median(errs)), scale,
                      time.perf_counter() - start, cfg.tolerance)


def check_all(cfg: GradcheckConfig | None = None, terms=TERMS) -> list[TermReport]:
    cfg = cfg or GradcheckConfig()
    return [check_term(t, dataclasses.replace(cfg)) for t in terms]
