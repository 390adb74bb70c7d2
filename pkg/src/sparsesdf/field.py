"""Neural signed-distance and colour fields.

The SDF network sees positionally encoded coordinates that are first
normalised by the scene centre and half-extent; its scalar output is scaled
back to metres so densities, eikonal terms and depths all live in world units.
Spatial gradients come from torch's reverse mode with ``create_graph=True`` so
losses on normals and gradient norms remain differentiable in the parameters.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import CheckpointMismatch, InvalidBeta, InvalidInput

CHECKPOINT_FORMAT = "sparsesdf-field"
CHECKPOINT_VERSION = 1


@dataclass
class FieldConfig:
    sdf_hidden: int = 128
    sdf_layers: int = 4
    color_hidden: int = 128
    color_layers: int = 3
    feature_dim: int = 64
    pe_levels: int = 6
    dir_levels: int = 4
    softplus_beta: float = 100.0
    beta_init: float = 0.1
    beta_min: float = 1e-4
    init_radius: float = 0.75
    # indoor scenes are observed from inside: flip the init sphere so its
    # interior is free space
    inside_out: bool = False
    center: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    scale: float = 1.0


@dataclass
class FieldSample:
    sdf: float
    gradient: np.ndarray
    color: np.ndarray
    feature: np.ndarray


def positional_encoding(x: torch.Tensor, levels: int, include_input: bool = True) -> torch.Tensor:
    """``[x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(L-1) pi x), cos(2^(L-1) pi x)]``.

    Each octave contributes a (sin, cos) block over all coordinates.
    """
    parts = [x] if include_input else []
    for k in range(levels):
        arg = (2.0**k * math.pi) * x
        parts.append(torch.sin(arg))
        parts.append(torch.cos(arg))
    return torch.cat(parts, dim=-1)


def density_from_sdf(s, beta):
    """Laplace-CDF density: about ``1/beta`` inside (s < 0), decaying to 0 outside.

    Accepts floats, numpy arrays or torch tensors. ``beta`` may be a tensor.
    """
    if isinstance(s, torch.Tensor) or isinstance(beta, torch.Tensor):
        s = torch.as_tensor(s)
        beta = torch.as_tensor(beta, dtype=s.dtype)
        if torch.any(beta <= 0):
            raise InvalidBeta("beta must be positive")
        inside = 1.0 - 0.5 * torch.exp(torch.clamp(s, max=0.0) / beta)
        outside = 0.5 * torch.exp(-torch.clamp(s, min=0.0) / beta)
        return torch.where(s <= 0, inside, outside) / beta
    if not np.all(np.asarray(beta) > 0):
        raise InvalidBeta("beta must be positive")
    s = np.asarray(s, dtype=float)
    inside = 1.0 - 0.5 * np.exp(np.minimum(s, 0.0) / beta)
    outside = 0.5 * np.exp(-np.maximum(s, 0.0) / beta)
    out = np.where(s <= 0, inside, outside) / beta
    return float(out) if out.ndim == 0 else out


def _mlp(dims: list[int]) -> nn.ModuleList:
    return nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))


class SdfField(nn.Module):
    def __init__(self, config: FieldConfig | None = None, seed: int = 0):
        super().__init__()
        self.config = cfg = config or FieldConfig()
        if not 0 < cfg.beta_min < cfg.beta_init:
            raise InvalidBeta(f"need 0 < beta_min < beta_init, got {cfg.beta_min}, {cfg.beta_init}")
        self.register_buffer("center", torch.tensor(cfg.center, dtype=torch.float32))
        self.register_buffer("scale", torch.tensor(float(cfg.scale)))
        self.act = nn.Softplus(beta=cfg.softplus_beta)

        pe_dim = 3 + 6 * cfg.pe_levels
        dir_dim = 3 + 6 * cfg.dir_levels
        self.sdf_layers = _mlp([pe_dim] + [cfg.sdf_hidden] * cfg.sdf_layers + [1 + cfg.feature_dim])
        self.color_layers = _mlp(
            [3 + dir_dim + 3 + cfg.feature_dim] + [cfg.color_hidden] * cfg.color_layers + [3]
        )
        # beta = beta_min + |raw|: stays positive and, unlike a clamp, keeps a
        # gradient when an update overshoots the floor
        self.beta = nn.Parameter(torch.tensor(float(cfg.beta_init - cfg.beta_min)))

        gen = torch.Generator().manual_seed(seed)
        self._geometric_init(gen)
        for lin in self.color_layers:
            bound = 1.0 / math.sqrt(lin.in_features)
            with torch.no_grad():
                lin.weight.uniform_(-bound, bound, generator=gen)
                lin.bias.uniform_(-bound, bound, generator=gen)

    def _geometric_init(self, gen: torch.Generator) -> None:
        cfg = self.config
        n = len(self.sdf_layers)
        with torch.no_grad():
            for i, lin in enumerate(self.sdf_layers):
                out_dim, in_dim = lin.weight.shape
                if i == n - 1:
                    lin.weight.normal_(math.sqrt(math.pi) / math.sqrt(in_dim), 1e-4, generator=gen)
                    lin.bias.fill_(-cfg.init_radius)
                    if cfg.inside_out:
                        lin.weight.neg_()
                        lin.bias.neg_()
                else:
                    lin.weight.normal_(0.0, math.sqrt(2.0) / math.sqrt(out_dim), generator=gen)
                    lin.bias.zero_()
                    if i == 0:
                        # start from a smooth field: only the raw coordinates feed layer 0
                        lin.weight[:, 3:] = 0.0

    def get_beta(self) -> torch.Tensor:
        return self.config.beta_min + self.beta.abs()

    def normalize(self, x: torch.Tensor) -> torch.Tensor:
        return (x - self.center.to(x.dtype)) / self.scale.to(x.dtype)

    def sdf_and_feature(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = positional_encoding(self.normalize(x), self.config.pe_levels)
        for i, lin in enumerate(self.sdf_layers):
            h = lin(h)
            if i < len(self.sdf_layers) - 1:
                h = self.act(h)
        return h[..., 0] * self.scale.to(x.dtype), h[..., 1:]

    def sdf(self, x: torch.Tensor) -> torch.Tensor:
        return self.sdf_and_feature(x)[0]

    def sdf_with_gradient(self, x: torch.Tensor, create_graph: bool = True):
        """``(sdf, gradient, feature)``; gradient is d sdf / d x in world units."""
        with torch.enable_grad():
            if not x.requires_grad:
                x = x.detach().requires_grad_(True)
            s, feat = self.sdf_and_feature(x)
            (g,) = torch.autograd.grad(s, x, torch.ones_like(s), create_graph=create_graph)
        return s, g, feat

    def color(self, x, view_dir, normal, feature) -> torch.Tensor:
        h = torch.cat(
            [self.normalize(x), positional_encoding(view_dir, self.config.dir_levels), normal, feature], dim=-1
        )
        for i, lin in enumerate(self.color_layers):
            h = lin(h)
            if i < len(self.color_layers) - 1:
                h = torch.relu(h)
        return torch.sigmoid(h)

    def forward(self, x, view_dir, create_graph: bool = True):
        s, g, feat = self.sdf_with_gradient(x, create_graph=create_graph)
        n = g / g.norm(dim=-1, keepdim=True).clamp_min(1e-12)
        return s, g, self.color(x, view_dir, n, feat), feat


def eval_field(fld: SdfField, point, view_dir) -> FieldSample:
    """Single-point evaluation returning numpy values."""
    p = np.asarray(point, dtype=float).reshape(3)
    d = np.asarray(view_dir, dtype=float).reshape(3)
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(d))):
        raise InvalidInput("point and view direction must be finite")
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise InvalidInput("view direction must be unit length")
    dtype = next(fld.parameters()).dtype
    x = torch.tensor(p, dtype=dtype)[None]
    v = torch.tensor(d, dtype=dtype)[None]
    s, g, c, f = fld(x, v, create_graph=False)
    return FieldSample(float(s[0].detach()), g[0].detach().numpy().astype(float), c[0].detach().numpy().astype(float),
                       f[0].detach().numpy().astype(float))


def save_checkpoint(fld: SdfField, path, extra: dict | None = None) -> None:
    """Write all parameters and buffers as a numpy archive with a JSON header."""
    state = {k: v.detach().cpu().numpy() for k, v in fld.state_dict().items()}
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(fld.config),
        "shapes": {k: list(v.shape) for k, v in state.items()},
        "extra": extra or {},
    }
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **state)


def load_checkpoint(path, fld: SdfField | None = None) -> SdfField:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
            raise CheckpointMismatch(f"unsupported checkpoint {meta.get('format')} v{meta.get('version')}")
        if fld is None:
            fld = SdfField(FieldConfig(**meta["config"]))
        own = fld.state_dict()
        if set(own) != set(meta["shapes"]):
            raise CheckpointMismatch(f"tensor names differ: {sorted(set(own) ^ set(meta['shapes']))}")
        new = {}
        for k, t in own.items():
            arr = data[k]
            if list(arr.shape) != list(t.shape):
                raise CheckpointMismatch(f"{k}: checkpoint shape {list(arr.shape)} != field shape {list(t.shape)}")
            new[k] = torch.from_numpy(arr.copy()).to(t.dtype)
    fld.load_state_dict(new)
    return fld
