"""Optimisation loop, its configuration file and the loss-history CSV."""

from __future__ import annotations

import configparser
import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from . import geometry, losses, priors, render
from .dataset import SceneData
from .errors import NonFiniteLoss
from .field import FieldConfig, SdfField, save_checkpoint

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["iteration", "total", "rgb", "depth", "reproj", "normal", "eikonal"]


@dataclass
class TrainConfig:
    iterations: int = 20000
    rays_per_batch: int = 512
    # share of each batch drawn from matched pixels of the selected source view
    matched_fraction: float = 0.5
    lr: float = 5e-4
    lr_decay_at: float = 0.8
    lr_decay: float = 0.1
    seed: int = 0
    lambda_depth: float = 0.5
    lambda_reproj: float = 0.01
    lambda_normal: float = 1.0
    lambda_eikonal: float = 0.05
    epsilon: float = priors.DEFAULT_EPSILON
    gamma: float = priors.DEFAULT_GAMMA
    n_coarse: int = 64
    n_fine: int = 32
    fine_warmup: int = 200
    eikonal_points: int = 256
    use_normal: bool = True
    use_depth: bool = True
    use_reproj: bool = True
    use_epipolar_weight: bool = True
    use_angular_filter: bool = True
    # "interimage" (triangulated priors) or "mono" (scale/shift-invariant baseline)
    depth_mode: str = "interimage"
    mono_scale_range: tuple = (0.5, 2.0)
    log_every: int = 100

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.rays_per_batch <= 0:
            raise ValueError("rays_per_batch must be > 0")
        if self.depth_mode not in ("interimage", "mono"):
            raise ValueError(f"depth_mode must be 'interimage' or 'mono', got {self.depth_mode!r}")
        if not 0.0 <= self.matched_fraction < 1.0:
            raise ValueError("matched_fraction must lie in [0, 1)")

    @property
    def weights(self) -> losses.LossWeights:
        return losses.LossWeights(self.lambda_depth, self.lambda_reproj, self.lambda_normal, self.lambda_eikonal)

    @property
    def needs_matches(self) -> bool:
        return (self.use_depth and self.depth_mode == "interimage") or self.use_reproj


# config file: INI sections [train] and [field]; unknown keys are rejected


def _coerce(value: str, like):
    if isinstance(like, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, (tuple, list)):
        return type(like)(float(v) for v in value.replace(",", " ").split())
    return value


def _format(value) -> str:
    if isinstance(value, (tuple, list)):
        return " ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def update_dataclass(obj, values: dict):
    kw = {}
    names = {f.name: f for f in dataclasses.fields(obj)}
    for k, v in values.items():
        if k not in names:
            raise KeyError(f"unknown key {k!r} for {type(obj).__name__}")
        kw[k] = _coerce(v, getattr(obj, k)) if isinstance(v, str) else v
    return dataclasses.replace(obj, **kw)


def write_config(path, train_cfg: TrainConfig, field_cfg: FieldConfig, extra: dict | None = None) -> None:
    cp = configparser.ConfigParser()
    cp["train"] = {f.name: _format(getattr(train_cfg, f.name)) for f in dataclasses.fields(train_cfg)}
    cp["field"] = {
        f.name: _format(getattr(field_cfg, f.name)) for f in dataclasses.fields(field_cfg)
        if f.name not in ("center", "scale")
    }
    for section, values in (extra or {}).items():
        cp[section] = {k: _format(v) for k, v in values.items()}
    with open(path, "w") as fh:
        cp.write(fh)


def read_config(path, train_cfg: TrainConfig | None = None, field_cfg: FieldConfig | None = None):
    """Apply a config file over defaults. Returns ``(train, field, other_sections)``."""
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise FileNotFoundError(path)
    train_cfg = train_cfg or TrainConfig()
    field_cfg = field_cfg or fast_field_config()
    if cp.has_section("train"):
        train_cfg = update_dataclass(train_cfg, dict(cp["train"]))
    if cp.has_section("field"):
        field_cfg = update_dataclass(field_cfg, dict(cp["field"]))
    other = {s: dict(cp[s]) for s in cp.sections() if s not in ("train", "field")}
    return train_cfg, field_cfg, other


def fast_field_config() -> FieldConfig:
    """Indoor field defaults (inside-out initialisation)."""
    return FieldConfig(inside_out=True)


# training


@dataclass
class TrainResult:
    field: SdfField
    history: list[dict]
    sources: dict[int, int | None]
    pair_priors: dict = field(default_factory=dict)
    seconds: float = 0.0


def write_history(path, history: list[dict]) -> None:
    cols = list(HISTORY_COLUMNS)
    for row in history:
        for k in row:
            if k not in cols:
                cols.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for row in history:
            w.writerow({k: row.get(k, "") for k in cols})


def read_history(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items() if v != ""} for row in csv.DictReader(fh)]


def init_field(data: SceneData, field_cfg: FieldConfig | None = None, seed: int = 0) -> SdfField:
    cfg = dataclasses.replace(field_cfg or fast_field_config())
    lo, hi = np.asarray(data.box_min), np.asarray(data.box_max)
    if data.scene is not None:
        lo, hi = data.scene.room_min, data.scene.room_max
    cfg.center = [float(v) for v in 0.5 * (lo + hi)]
    cfg.scale = float(0.5 * np.max(hi - lo))
    return SdfField(cfg, seed=seed)


def mono_depth_maps(data: SceneData, scale_range, seed: int) -> dict[int, np.ndarray]:
    """Relative depth ``a_v * D_gt`` with an independent random ``a_v`` per view."""
    rng = np.random.default_rng(seed + 7919)
    return {v: float(rng.uniform(*scale_range)) * data.depths[v] for v in data.views}


class _Batch:
    pass


def _dump_batch(path, batch: _Batch, breakdown) -> None:
    arrays = {k: np.asarray(v) for k, v in vars(batch).items() if isinstance(v, np.ndarray)}
    np.savez(path, **arrays, breakdown=np.array(str(breakdown)))


def train(data: SceneData, config: TrainConfig, field_cfg: FieldConfig | None = None,
          fld: SdfField | None = None, out_dir=None,
          callback: Callable[[int, SdfField, dict], None] | None = None) -> TrainResult:
    """Optimise an SDF field on ``data``.

    Each iteration takes the next reference view round-robin, draws random
    pixels (colour and normal supervision) plus matched pixels paired with the
    view's selected source (depth and reprojection supervision), and takes one
    Adam step on the weighted total loss.
    """
    t_start = time.time()
    if len(data.cameras) < 2:
        raise ValueError("training needs at least two views")
    torch.manual_seed(config.seed)
    fld = fld if fld is not None else init_field(data, field_cfg, seed=config.seed)
    dtype = next(fld.parameters()).dtype
    rng = np.random.default_rng(config.seed)
    gen = torch.Generator().manual_seed(config.seed)
    views = data.views

    pair_priors = priors.build_all_priors(data.cameras, data.matches, config.gamma)
    eps = config.epsilon if config.use_angular_filter else None
    sources = priors.select_all_sources(views, pair_priors, eps)
    logger.info("selected sources: %s", sources)
    mono = mono_depth_maps(data, config.mono_scale_range, config.seed) if config.depth_mode == "mono" else None

    history: list[dict] = []
    if config.iterations == 0:
        return TrainResult(fld, history, sources, pair_priors, time.time() - t_start)

    opt = torch.optim.Adam(fld.parameters(), lr=config.lr)
    decay_iter = int(config.lr_decay_at * config.iterations)
    weights = config.weights
    n_match_target = int(round(config.rays_per_batch * config.matched_fraction)) if config.needs_matches else 0
    box_lo, box_hi = np.asarray(data.box_min), np.asarray(data.box_max)
    diag = data.diagonal

    for it in range(config.iterations):
        if it == decay_iter and decay_iter > 0:
            for g in opt.param_groups:
                g["lr"] = config.lr * config.lr_decay
        r = views[it % len(views)]
        cam = data.cameras[r]
        img = data.images[r]
        H, W = img.shape[:2]
        b = _Batch()

        s = sources.get(r)
        pair = pair_priors.get((r, s)) if s is not None else None
        n_match = 0
        if pair is not None and n_match_target:
            valid = np.nonzero(pair.valid)[0]
            if len(valid):
                n_match = n_match_target
                b.sel = rng.choice(valid, size=n_match, replace=len(valid) < n_match)
        n_rand = config.rays_per_batch - n_match
        idx = rng.integers(0, H * W, size=n_rand)
        b.pix = np.column_stack([idx % W, idx // W]).astype(float)
        pix_all = b.pix
        if n_match:
            pix_all = np.vstack([b.pix, pair.matches.pixel_r[b.sel]])
        o_np, d_np = geometry.pixels_to_rays(cam, pix_all)
        near, far = render.ray_box_range(o_np, d_np, box_lo, box_hi, diag)
        o = torch.as_tensor(o_np, dtype=dtype)
        d = torch.as_tensor(d_np, dtype=dtype)
        n_fine = config.n_fine if it >= config.fine_warmup else 0
        t, deltas = render.hierarchical_samples(fld, o, d, near, far, config.n_coarse, n_fine, True, gen)
        out = render.render_rays(fld, o, d, t, deltas)

        comps: dict[str, torch.Tensor] = {}
        pi = idx
        rgb_true = torch.as_tensor(img.reshape(-1, 3)[pi], dtype=dtype)
        comps["rgb"] = losses.rgb_loss(out.color[:n_rand], rgb_true)
        if config.use_normal and r in data.normals:
            n_true = torch.as_tensor(data.normals[r].reshape(-1, 3)[pi], dtype=dtype)
            comps["normal"] = losses.normal_loss(out.normal[:n_rand], n_true)
        extra = {}
        if n_match:
            m = pair.matches
            u = torch.as_tensor(m.uncertainty[b.sel], dtype=dtype)
            if config.use_epipolar_weight:
                w = torch.as_tensor(pair.epi_weight[b.sel], dtype=dtype)
            else:
                w = torch.full_like(u, 0.25)
            d_m = out.depth[n_rand:]
            if config.use_depth and config.depth_mode == "interimage":
                prior = torch.as_tensor(pair.tri_depth[b.sel], dtype=dtype)
                comps["depth"] = losses.interimage_depth_loss(d_m, prior, u, w)
            if config.use_reproj:
                p_src = torch.as_tensor(m.pixel_s[b.sel], dtype=dtype)
                p_rep = losses.reproject_torch(cam, data.cameras[s], o[n_rand:], d[n_rand:], d_m)
                comps["reproj"] = losses.reprojection_loss(p_src, p_rep, u, w)
        if config.use_depth and config.depth_mode == "mono":
            mono_d = torch.as_tensor(mono[r].reshape(-1)[pi], dtype=dtype)
            mono_loss, ss = losses.monocular_depth_baseline_loss(out.depth[:n_rand], mono_d)
            comps["depth"] = mono_loss / n_rand
            extra = {"scale": float(ss.w.detach()), "shift": float(ss.q.detach())}

        lo_t = torch.as_tensor(box_lo, dtype=dtype)
        hi_t = torch.as_tensor(box_hi, dtype=dtype)
        x_eik = lo_t + (hi_t - lo_t) * torch.rand(config.eikonal_points, 3, generator=gen, dtype=dtype)
        _, g_eik, _ = fld.sdf_with_gradient(x_eik)
        comps["eikonal"] = losses.eikonal_loss(torch.cat([g_eik, out.gradients.reshape(-1, 3)]))

        total, breakdown = losses.total_loss(comps, weights)
        if not torch.isfinite(total):
            if out_dir is not None:
                b.depth = out.depth.detach().numpy()
                b.near, b.far = near, far
                _dump_batch(Path(out_dir) / "nonfinite_batch.npz", b, breakdown)
            raise NonFiniteLoss(f"iteration {it}: non-finite loss {breakdown}")
        opt.zero_grad(set_to_none=True)
        total.backward()
        opt.step()

        row = {"iteration": it, **{k: breakdown[k] for k in HISTORY_COLUMNS[1:]}, **extra}
        row["beta"] = float(fld.get_beta().detach())
        history.append(row)
        if config.log_every and it % config.log_every == 0:
            logger.info("it %d total %.4f rgb %.4f depth %.4f reproj %.4f normal %.4f eik %.4f beta %.4f", it,
                        row["total"], row["rgb"], row["depth"], row["reproj"], row["normal"], row["eikonal"],
                        row["beta"])
        if callback is not None:
            callback(it, fld, row)

    result = TrainResult(fld, history, sources, pair_priors, time.time() - t_start)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(fld, out / "checkpoint.npz", extra={"iterations": config.iterations, "seed": config.seed})
        write_history(out / "history.csv", history)
    return result


def lr_at(config: TrainConfig, it: int) -> float:
    decay_iter = int(config.lr_decay_at * config.iterations)
    return config.lr * (config.lr_decay if decay_iter > 0 and it >= decay_iter else 1.0)


def ablation_config(base: TrainConfig, name: str) -> TrainConfig:
    """Named loss/strategy configurations (loss-component and matching-strategy ablations)."""
    presets = {
        "rgb-only": dict(use_normal=False, use_depth=False, use_reproj=False),
        "normal-only": dict(use_normal=True, use_depth=False, use_reproj=False),
        "no-reproj": dict(use_normal=True, use_depth=True, use_reproj=False),
        "no-depth": dict(use_normal=True, use_depth=False, use_reproj=True),
        "full": dict(use_normal=True, use_depth=True, use_reproj=True, use_epipolar_weight=True,
                     use_angular_filter=True),
        "no-epipolar": dict(use_epipolar_weight=False, use_angular_filter=True),
        "no-angular": dict(use_epipolar_weight=True, use_angular_filter=False),
        "mono-baseline": dict(depth_mode="mono"),
    }
    if name not in presets:
        raise KeyError(f"unknown ablation {name!r}; choose from {sorted(presets)}")
    return dataclasses.replace(base, **presets[name])


ABLATIONS = ("rgb-only", "normal-only", "no-reproj", "no-depth", "full", "no-epipolar", "no-angular",
             "mono-baseline")

