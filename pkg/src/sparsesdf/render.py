"""Ray sampling and transmittance quadrature for SDF-based volume rendering."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import geometry
from .errors import InvalidRange
from .field import SdfField, density_from_sdf

NEAR_MIN = 0.05


@dataclass
class RaySamples:
    t_values: np.ndarray
    deltas: np.ndarray


@dataclass
class RenderOutput:
    """Per-ray outputs. Batched renders hold tensors with a leading ray axis."""

    color: torch.Tensor
    depth: torch.Tensor
    normal: torch.Tensor
    weights: torch.Tensor
    transmittance_final: torch.Tensor
    # raw spatial SDF gradients at every sample, reused by the eikonal term
    gradients: torch.Tensor | None = None
    t_values: torch.Tensor | None = None

    @property
    def weight_sum(self) -> torch.Tensor:
        return self.weights.sum(-1)


def _check_range(near, far, n_samples):
    near = np.asarray(near, dtype=float)
    far = np.asarray(far, dtype=float)
    if n_samples < 2 or np.any(near <= 0) or np.any(far <= near):
        raise InvalidRange(f"need 0 < near < far and n_samples >= 2 (near={near}, far={far}, n={n_samples})")


def bin_samples(near, far, n_samples: int, stratified: bool, generator: torch.Generator | None = None,
                dtype=torch.float32):
    """Batched samples: ``(t, deltas)`` of shape (R, n).

    Unstratified samples sit at bin midpoints; stratified draws one uniform
    point per bin. The last spacing is capped at the bin width.
    """
    near = torch.as_tensor(near, dtype=dtype).reshape(-1, 1)
    far = torch.as_tensor(far, dtype=dtype).reshape(-1, 1)
    width = (far - near) / n_samples
    edges = near + width * torch.arange(n_samples, dtype=dtype)
    if stratified:
        u = torch.rand(edges.shape, generator=generator, dtype=dtype)
    else:
        u = torch.full_like(edges, 0.5)
    t = edges + u * width
    return t, deltas_from_t(t, width)


def deltas_from_t(t: torch.Tensor, cap: torch.Tensor) -> torch.Tensor:
    cap = torch.as_tensor(cap, dtype=t.dtype).reshape(-1, 1).expand(t.shape[0], 1)
    return torch.cat([t[:, 1:] - t[:, :-1], cap], dim=-1)


def sample_ray(ray: geometry.Ray, near: float, far: float, n_samples: int, stratified: bool = False,
               rng_seed: int = 0) -> RaySamples:
    _check_range(near, far, n_samples)
    gen = torch.Generator().manual_seed(int(rng_seed))
    t, d = bin_samples([near], [far], n_samples, stratified, gen, dtype=torch.float64)
    return RaySamples(t[0].numpy(), d[0].numpy())


def ray_box_range(origins, dirs, box_min, box_max, diag: float):
    """Entry/exit distances of rays against an AABB, clamped to [NEAR_MIN, 2 diag]."""
    o = np.asarray(origins, dtype=float).reshape(-1, 3)
    d = np.asarray(dirs, dtype=float).reshape(-1, 3)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t0 = (np.asarray(box_min) - o) * inv
        t1 = (np.asarray(box_max) - o) * inv
    tmin = np.nanmax(np.minimum(t0, t1), axis=1)
    tmax = np.nanmin(np.maximum(t0, t1), axis=1)
    near = np.clip(tmin, NEAR_MIN, 2 * diag)
    far = np.clip(tmax, NEAR_MIN, 2 * diag)
    far = np.maximum(far, near + 1e-3)
    return near, far


def composite(sigma: torch.Tensor, deltas: torch.Tensor) -> torch.Tensor:
    """Weights ``T_i * alpha_i`` with ``alpha_i = 1 - exp(-sigma_i delta_i)``."""
    tau = sigma * deltas
    alpha = 1.0 - torch.exp(-tau)
    # exclusive cumulative optical depth: T_1 = 1
    acc = torch.cumsum(tau, dim=-1) - tau
    return torch.exp(-acc) * alpha


def render_rays(fld: SdfField, origins: torch.Tensor, dirs: torch.Tensor, t: torch.Tensor, deltas: torch.Tensor,
                create_graph: bool = True) -> RenderOutput:
    R, N = t.shape
    pts = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    view = dirs[:, None, :].expand(R, N, 3)
    s, g, c, _ = fld(pts.reshape(-1, 3), view.reshape(-1, 3), create_graph=create_graph)
    s, g, c = s.reshape(R, N), g.reshape(R, N, 3), c.reshape(R, N, 3)
    n_hat = g / g.norm(dim=-1, keepdim=True).clamp_min(1e-12)
    sigma = density_from_sdf(s, fld.get_beta())
    w = composite(sigma, deltas)
    return RenderOutput(
        color=(w[..., None] * c).sum(1),
        depth=(w * t).sum(1),
        normal=(w[..., None] * n_hat).sum(1),
        weights=w,
        transmittance_final=1.0 - w.sum(1),
        gradients=g,
        t_values=t,
    )


def render_ray(fld: SdfField, ray: geometry.Ray, samples: RaySamples) -> RenderOutput:
    """Render one ray; outputs keep their autograd graph."""
    dtype = next(fld.parameters()).dtype
    o = torch.tensor(ray.origin, dtype=dtype)[None]
    d = torch.tensor(ray.direction, dtype=dtype)[None]
    t = torch.tensor(samples.t_values, dtype=dtype)[None]
    dl = torch.tensor(samples.deltas, dtype=dtype)[None]
    out = render_rays(fld, o, d, t, dl)
    return RenderOutput(out.color[0], out.depth[0], out.normal[0], out.weights[0], out.transmittance_final[0],
                        out.gradients[0], out.t_values[0])


@torch.no_grad()
def surface_estimate(fld: SdfField, origins, dirs, t: torch.Tensor) -> torch.Tensor:
    """First outside-to-inside crossing along each ray (linear root), or the
    SDF minimum when no crossing exists."""
    R, N = t.shape
    pts = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    s = fld.sdf(pts.reshape(-1, 3)).reshape(R, N)
    cross = (s[:, :-1] > 0) & (s[:, 1:] <= 0)
    has = cross.any(1)
    idx = torch.where(has, cross.float().argmax(1), s.argmin(1).clamp(max=N - 2))
    s0 = s.gather(1, idx[:, None])[:, 0]
    s1 = s.gather(1, idx[:, None] + 1)[:, 0]
    t0 = t.gather(1, idx[:, None])[:, 0]
    t1 = t.gather(1, idx[:, None] + 1)[:, 0]
    frac = torch.where(has, s0 / (s0 - s1).clamp_min(1e-12), torch.zeros_like(s0))
    return torch.where(has, t0 + frac * (t1 - t0), t.gather(1, s.argmin(1, keepdim=True))[:, 0])


def hierarchical_samples(fld: SdfField, origins, dirs, near, far, n_coarse: int, n_fine: int, stratified: bool,
                         generator: torch.Generator | None = None):
    """Coarse bins plus ``n_fine`` uniform samples within two coarse bins of
    the current surface estimate. Returns merged ``(t, deltas)``."""
    dtype = origins.dtype
    t, _ = bin_samples(near, far, n_coarse, stratified, generator, dtype=dtype)
    near = torch.as_tensor(near, dtype=dtype)
    far = torch.as_tensor(far, dtype=dtype)
    width = (far - near) / n_coarse
    if n_fine <= 0:
        return t, deltas_from_t(t, width)
    d_est = surface_estimate(fld, origins, dirs, t)
    lo = torch.maximum(d_est - 2 * width, near)
    hi = torch.minimum(d_est + 2 * width, far)
    hi = torch.maximum(hi, lo + 1e-4)
    fine, _ = bin_samples(lo, hi, n_fine, stratified, generator, dtype=dtype)
    t_all, _ = torch.sort(torch.cat([t, fine], dim=-1), dim=-1)
    return t_all, deltas_from_t(t_all, width)


def render_view(fld: SdfField, camera: geometry.Camera, box_min, box_max, diag: float, n_coarse: int = 64,
                n_fine: int = 32, chunk: int = 2048) -> dict[str, np.ndarray]:
    """Render full colour/depth/normal maps (no parameter gradients)."""
    vv, uu = np.mgrid[0 : camera.height, 0 : camera.width]
    pix = np.column_stack([uu.ravel(), vv.ravel()]).astype(float)
    o, d = geometry.pixels_to_rays(camera, pix)
    near, far = ray_box_range(o, d, box_min, box_max, diag)
    dtype = next(fld.parameters()).dtype
    cols, deps, nors = [], [], []
    for i in range(0, len(pix), chunk):
        ot = torch.tensor(o[i : i + chunk], dtype=dtype)
        dt = torch.tensor(d[i : i + chunk], dtype=dtype)
        t, dl = hierarchical_samples(fld, ot, dt, near[i : i + chunk], far[i : i + chunk], n_coarse, n_fine, False)
        out = render_rays(fld, ot, dt, t, dl, create_graph=False)
        cols.append(out.color.detach().numpy())
        deps.append(out.depth.detach().numpy())
        nors.append(out.normal.detach().numpy())
    shape = (camera.height, camera.width)
    return {
        "color": np.concatenate(cols).reshape(*shape, 3),
        "depth": np.concatenate(deps).reshape(shape),
        "normal": np.concatenate(nors).reshape(*shape, 3),
    }
