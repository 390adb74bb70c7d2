"""Loss terms and their weighted total.

All functions take array-likes or tensors and return torch scalars so they can
sit directly in the training graph. Match-based sums are divided by the number
of matches in the batch, which keeps the lambdas independent of batch size.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from . import geometry
from .errors import Degenerate, InvalidPrior, ShapeError


@dataclass
class LossWeights:
    lambda_depth: float = 0.5
    lambda_reproj: float = 0.01
    lambda_normal: float = 1.0
    lambda_eikonal: float = 0.05

    def __post_init__(self):
        for name in ("lambda_depth", "lambda_reproj", "lambda_normal", "lambda_eikonal"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class ScaleShift:
    w: torch.Tensor
    q: torch.Tensor

    @property
    def positive_scale(self) -> bool:
        return bool(self.w > 0)


def _t(x, like: torch.Tensor | None = None) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    dtype = like.dtype if like is not None else torch.float64
    return torch.as_tensor(x, dtype=dtype)


def _same_len(*xs):
    n = {len(x) for x in xs}
    if len(n) != 1:
        raise ShapeError(f"length mismatch: {[len(x) for x in xs]}")
    if n == {0}:
        raise ShapeError("empty input")


def rgb_loss(rendered, truth) -> torch.Tensor:
    rendered = _t(rendered)
    truth = _t(truth, rendered)
    _same_len(rendered, truth)
    if rendered.shape != truth.shape:
        raise ShapeError(f"shape mismatch {tuple(rendered.shape)} vs {tuple(truth.shape)}")
    return (truth - rendered).abs().sum(-1).mean()


def normal_loss(rendered, prior) -> torch.Tensor:
    rendered = _t(rendered)
    prior = _t(prior, rendered)
    _same_len(rendered, prior)
    if rendered.shape != prior.shape:
        raise ShapeError(f"shape mismatch {tuple(rendered.shape)} vs {tuple(prior.shape)}")
    l1 = (rendered - prior).abs().sum(-1)
    cos = (1.0 - (rendered * prior).sum(-1)).abs()
    return (l1 + cos).mean()


def eikonal_loss(gradients) -> torch.Tensor:
    g = _t(gradients).reshape(-1, 3)
    if len(g) == 0:
        raise ShapeError("eikonal loss needs at least one point")
    return ((g.norm(dim=-1) - 1.0) ** 2).mean()


def interimage_depth_loss(rendered_depths, priors, uncertainties, epi_weights) -> torch.Tensor:
    """``sum_i (1/prior_i) (1 - u_i) w_i |rendered_i - prior_i|`` over the batch, divided by its size."""
    d = _t(rendered_depths)
    p, u, w = (_t(x, d) for x in (priors, uncertainties, epi_weights))
    _same_len(d, p, u, w)
    if not torch.all(p > 0):
        raise InvalidPrior("triangulated depth priors must be positive")
    return ((1.0 - u) * w * (d - p).abs() / p).sum() / len(d)


def reprojection_loss(match_pixels, reprojected, uncertainties, epi_weights) -> torch.Tensor:
    """Weighted L1 pixel offset between matches and reprojections, per match."""
    p = _t(match_pixels)
    q, u, w = (_t(x, p) for x in (reprojected, uncertainties, epi_weights))
    _same_len(p, q, u, w)
    if p.shape != q.shape:
        raise ShapeError(f"shape mismatch {tuple(p.shape)} vs {tuple(q.shape)}")
    return ((1.0 - u) * w * (p - q).abs().sum(-1)).sum() / len(p)


def solve_scale_shift(rendered_depths, mono_depths) -> ScaleShift:
    """Closed-form least squares for ``w * rendered + q ~ mono``."""
    x = _t(rendered_depths)
    y = _t(mono_depths, x)
    _same_len(x, y)
    n = len(x)
    if n < 2:
        raise Degenerate("need at least two samples")
    sx, sy = x.sum(), y.sum()
    sxx, sxy = (x * x).sum(), (x * y).sum()
    det = n * sxx - sx * sx
    if not float(det.detach()) > 1e-12 * max(float((n * sxx).detach()), 1.0):
        raise Degenerate("rendered depths are constant; scale and shift are not identifiable")
    w = (n * sxy - sx * sy) / det
    q = (sy - w * sx) / n
    return ScaleShift(w, q)


def monocular_depth_baseline_loss(rendered, mono) -> tuple[torch.Tensor, ScaleShift]:
    """Scale-and-shift invariant squared depth residual (summed) and the fitted pair."""
    x = _t(rendered)
    y = _t(mono, x)
    ss = solve_scale_shift(x, y)
    return ((ss.w * x + ss.q - y) ** 2).sum(), ss


COMPONENTS = ("rgb", "depth", "reproj", "normal", "eikonal")


def total_loss(components: dict, weights: LossWeights) -> tuple[torch.Tensor, dict[str, float]]:
    """Weighted sum; missing components count as zero. Returns ``(total, breakdown)``."""
    lam = {
        "rgb": 1.0,
        "depth": weights.lambda_depth,
        "reproj": weights.lambda_reproj,
        "normal": weights.lambda_normal,
        "eikonal": weights.lambda_eikonal,
    }
    total = None
    breakdown = {}
    for name in COMPONENTS:
        val = components.get(name)
        if val is None:
            breakdown[name] = 0.0
            continue
        val = _t(val)
        breakdown[name] = float(val.detach())
        term = lam[name] * val
        total = term if total is None else total + term
    if total is None:
        total = torch.zeros(())
    breakdown["total"] = float(total.detach())
    return total, breakdown


def reproject_torch(cam_r: geometry.Camera, cam_s: geometry.Camera, origins: torch.Tensor, dirs: torch.Tensor,
                    depth: torch.Tensor) -> torch.Tensor:
    """Differentiable version of :func:`geometry.reproject` for a batch of reference rays."""
    W = torch.as_tensor(cam_s.world_to_cam, dtype=depth.dtype)
    K = torch.as_tensor(cam_s.intrinsics, dtype=depth.dtype)
    X = origins + depth[:, None] * dirs
    Xc = X @ W[:3, :3].T + W[:3, 3]
    h = Xc @ K.T
    z = h[:, 2:3]
    # keep the division finite for rays rendered behind the source camera
    z = torch.where(z.abs() < 1e-6, torch.full_like(z, 1e-6), z)
    return h[:, :2] / z - 0.5
