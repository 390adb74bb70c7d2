"""Analytic indoor scenes used as ground truth.

A scene is the interior of an axis-aligned room plus furniture primitives.
Its signed distance is positive in free space (inside the room, outside the
furniture) and negative inside walls and furniture, matching the field
convention used for rendering. ``box_sdf`` keeps the textbook sign (negative
inside the box) for the primitives themselves.

Scene file schema (whitespace separated, ``#`` comments)::

    room      xmin ymin zmin xmax ymax zmax
    textured  0|1
    box       name cx cy cz hx hy hz r g b
    sphere    name cx cy cz radius r g b
    cylinder  name cx cy cz radius half_height r g b

Cylinders are vertical. Furniture must lie inside the room.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry
from .errors import InvalidCamera, InvalidScene, NoOverlap, ParseError, TooFewViews, UnknownScene
from .priors import MatchBlock

LIGHT_DIR = np.array([0.3, -0.45, 0.85]) / np.linalg.norm([0.3, -0.45, 0.85])
CHECKER = 0.25
TRACE_EPS = 1e-7


def box_sdf(p, center, half) -> np.ndarray:
    q = np.abs(np.asarray(p, dtype=float) - center) - half
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(np.max(q, axis=-1), 0.0)
    return outside + inside


def box_grad(p, center, half) -> np.ndarray:
    p = np.atleast_2d(np.asarray(p, dtype=float))
    rel = p - center
    q = np.abs(rel) - half
    sgn = np.where(rel >= 0, 1.0, -1.0)
    qpos = np.maximum(q, 0.0)
    n_out = np.linalg.norm(qpos, axis=-1, keepdims=True)
    g_out = sgn * qpos / np.maximum(n_out, 1e-300)
    k = np.argmax(q, axis=-1)
    g_in = np.zeros_like(p)
    g_in[np.arange(len(p)), k] = sgn[np.arange(len(p)), k]
    return np.where(n_out > 0, g_out, g_in)


@dataclass
class Primitive:
    kind: str
    name: str
    center: np.ndarray
    size: np.ndarray  # box: half extents; sphere: (r,); cylinder: (r, half_height)
    albedo: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.size = np.atleast_1d(np.asarray(self.size, dtype=float))
        self.albedo = np.asarray(self.albedo, dtype=float)
        if self.kind not in ("box", "sphere", "cylinder"):
            raise InvalidScene(f"unknown primitive kind {self.kind!r}")
        if np.any(self.size <= 0):
            raise InvalidScene(f"{self.name}: sizes must be positive")

    def sdf(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if self.kind == "box":
            return box_sdf(p, self.center, self.size)
        rel = p - self.center
        if self.kind == "sphere":
            return np.linalg.norm(rel, axis=-1) - self.size[0]
        r, hh = self.size
        d = np.stack([np.linalg.norm(rel[..., :2], axis=-1) - r, np.abs(rel[..., 2]) - hh], axis=-1)
        return np.minimum(np.max(d, axis=-1), 0.0) + np.linalg.norm(np.maximum(d, 0.0), axis=-1)

    def grad(self, p) -> np.ndarray:
        p = np.atleast_2d(np.asarray(p, dtype=float))
        if self.kind == "box":
            return box_grad(p, self.center, self.size)
        rel = p - self.center
        if self.kind == "sphere":
            return rel / np.maximum(np.linalg.norm(rel, axis=-1, keepdims=True), 1e-300)
        r, hh = self.size
        rho = np.linalg.norm(rel[:, :2], axis=-1)
        radial = np.column_stack([rel[:, :2] / np.maximum(rho, 1e-300)[:, None], np.zeros(len(p))])
        axial = np.zeros_like(p)
        axial[:, 2] = np.where(rel[:, 2] >= 0, 1.0, -1.0)
        d0, d1 = rho - r, np.abs(rel[:, 2]) - hh
        a, b = np.maximum(d0, 0.0), np.maximum(d1, 0.0)
        n = np.hypot(a, b)
        g_out = (a[:, None] * radial + b[:, None] * axial) / np.maximum(n, 1e-300)[:, None]
        g_in = np.where((d0 > d1)[:, None], radial, axial)
        return np.where((n > 0)[:, None], g_out, g_in)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "box":
            ext = self.size
        elif self.kind == "sphere":
            ext = np.full(3, self.size[0])
        else:
            ext = np.array([self.size[0], self.size[0], self.size[1]])
        return self.center - ext, self.center + ext


@dataclass
class AnalyticScene:
    room_min: np.ndarray
    room_max: np.ndarray
    furniture: list[Primitive] = field(default_factory=list)
    textured: bool = True
    name: str = "custom"

    def __post_init__(self):
        self.room_min = np.asarray(self.room_min, dtype=float)
        self.room_max = np.asarray(self.room_max, dtype=float)
        if np.any(self.room_max <= self.room_min):
            raise InvalidScene("room extent must be positive on every axis")
        for prim in self.furniture:
            lo, hi = prim.bounds()
            if np.any(lo < self.room_min - 1e-12) or np.any(hi > self.room_max + 1e-12):
                raise InvalidScene(f"furniture {prim.name!r} extends outside the room")

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.room_min + self.room_max)

    @property
    def half_extent(self) -> np.ndarray:
        return 0.5 * (self.room_max - self.room_min)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.room_max - self.room_min))

    def _all(self, p):
        p = np.asarray(p, dtype=float)
        vals = [-box_sdf(p, self.center, self.half_extent)] + [f.sdf(p) for f in self.furniture]
        return np.stack(vals, axis=-1)

    def sdf(self, p) -> np.ndarray:
        """Signed distance, positive in free space."""
        return np.min(self._all(p), axis=-1)

    def owner(self, p) -> np.ndarray:
        """Index of the closest surface: 0 = room, k = furniture k-1."""
        return np.argmin(self._all(p), axis=-1)

    def gradient(self, p) -> np.ndarray:
        p = np.atleast_2d(np.asarray(p, dtype=float))
        idx = self.owner(p)
        g = -box_grad(p, self.center, self.half_extent)
        for k, prim in enumerate(self.furniture, start=1):
            sel = idx == k
            if np.any(sel):
                g[sel] = prim.grad(p[sel])
        return g

    def normal(self, p) -> np.ndarray:
        g = self.gradient(p)
        return g / np.linalg.norm(g, axis=-1, keepdims=True)

    def albedo(self, p) -> np.ndarray:
        p = np.atleast_2d(np.asarray(p, dtype=float))
        idx = self.owner(p)
        base = np.empty((len(p), 3))
        # room: floor, ceiling and wall pairs get distinct colours
        n_room = -box_grad(p, self.center, self.half_extent)
        room_cols = np.array([[0.80, 0.72, 0.60], [0.62, 0.74, 0.82], [0.85, 0.84, 0.80], [0.70, 0.70, 0.72]])
        axis = np.argmax(np.abs(n_room), axis=-1)
        room_idx = np.where(axis == 2, np.where(n_room[:, 2] > 0, 2, 3), axis)
        base[:] = room_cols[room_idx]
        for k, prim in enumerate(self.furniture, start=1):
            base[idx == k] = prim.albedo
        if not self.textured:
            return base
        cells = np.floor((p + 0.1) / CHECKER).astype(int).sum(-1)
        checker = np.where(cells % 2 == 0, 1.0, 0.65)
        low = 0.85 + 0.15 * np.sin(1.3 * p[:, 0] + 0.7 * p[:, 1] + 2.1 * p[:, 2])
        return np.clip(base * checker[:, None] * low[:, None], 0.0, 1.0)

    def shade(self, p, n) -> np.ndarray:
        lam = 0.35 + 0.65 * np.clip(np.atleast_2d(n) @ LIGHT_DIR, 0.0, None)
        return np.clip(self.albedo(p) * lam[:, None], 0.0, 1.0)

    def contains_camera(self, center) -> bool:
        return bool(self.sdf(np.asarray(center)[None])[0] > 0)


# scene library


def _chair(name, x, y, facing, color):
    """Seat, backrest and four legs; ``facing`` is +1/-1 along y."""
    seat_h, seat = 0.45, 0.22
    parts = [
        Primitive("box", f"{name}-seat", [x, y, seat_h], [seat, seat, 0.03], color),
        Primitive("box", f"{name}-back", [x, y - facing * (seat - 0.03), seat_h + 0.25], [seat, 0.03, 0.22], color),
    ]
    for i, (dx, dy) in enumerate([(-1, -1), (-1, 1), (1, -1), (1, 1)]):
        parts.append(
            Primitive("box", f"{name}-leg{i}", [x + dx * (seat - 0.03), y + dy * (seat - 0.03), (seat_h - 0.03) / 2],
                      [0.03, 0.03, (seat_h - 0.03) / 2], color)
        )
    return parts


ROOM_MIN = (-2.0, -1.5, 0.0)
ROOM_MAX = (2.0, 1.5, 2.5)


def _empty_room():
    return AnalyticScene(ROOM_MIN, ROOM_MAX, [], name="empty-room")


def _two_chairs():
    furn = _chair("chair-a", -1.05, 0.45, -1, [0.75, 0.30, 0.25]) + _chair("chair-b", 0.95, -0.55, 1, [0.25, 0.45, 0.70])
    return AnalyticScene(ROOM_MIN, ROOM_MAX, furn, name="room-two-chairs")


def _cluttered():
    furn = [
        Primitive("box", "table-top", [0.0, 0.6, 0.72], [0.6, 0.35, 0.03], [0.55, 0.40, 0.25]),
        Primitive("cylinder", "table-post", [0.0, 0.6, 0.345], [0.06, 0.345], [0.35, 0.30, 0.25]),
        Primitive("box", "cabinet", [1.7, -1.1, 0.5], [0.25, 0.35, 0.5], [0.60, 0.62, 0.30]),
        Primitive("sphere", "ball", [-1.2, -0.8, 0.3], [0.3], [0.80, 0.35, 0.60]),
        Primitive("cylinder", "bin", [-1.6, 1.1, 0.25], [0.2, 0.25], [0.30, 0.60, 0.45]),
        Primitive("box", "crate", [0.9, 0.9, 0.2], [0.2, 0.2, 0.2], [0.70, 0.55, 0.35]),
    ] + _chair("chair", -0.6, -0.3, 1, [0.40, 0.40, 0.75])
    return AnalyticScene(ROOM_MIN, ROOM_MAX, furn, name="cluttered")


SCENES = {"empty-room": _empty_room, "room-two-chairs": _two_chairs, "cluttered": _cluttered}


def parse_scene(text: str, name: str = "custom") -> AnalyticScene:
    room = None
    textured = True
    furniture = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        kind, args = tok[0], tok[1:]
        try:
            if kind == "room":
                if len(args) != 6:
                    raise ParseError(lineno, "room needs 6 numbers")
                room = [float(a) for a in args]
            elif kind == "textured":
                textured = bool(int(args[0]))
            elif kind in ("box", "sphere", "cylinder"):
                n = {"box": 9, "sphere": 7, "cylinder": 8}[kind]
                if len(args) != n + 1:
                    raise ParseError(lineno, f"{kind} needs a name and {n} numbers")
                v = [float(a) for a in args[1:]]
                furniture.append(Primitive(kind, args[0], v[:3], v[3:-3], v[-3:]))
            else:
                raise ParseError(lineno, f"unknown keyword {kind!r}")
        except (ValueError, IndexError):
            raise ParseError(lineno, "malformed numeric field") from None
    if room is None:
        raise InvalidScene("scene file has no 'room' line")
    return AnalyticScene(room[:3], room[3:], furniture, textured, name)


def format_scene(scene: AnalyticScene) -> str:
    lines = [f"# scene {scene.name}", "room " + " ".join(f"{v:g}" for v in [*scene.room_min, *scene.room_max]),
             f"textured {int(scene.textured)}"]
    for f in scene.furniture:
        nums = [*f.center, *f.size, *f.albedo]
        lines.append(f"{f.kind} {f.name} " + " ".join(f"{v:.6g}" for v in nums))
    return "\n".join(lines) + "\n"


def build_scene(source: str, textured: bool = True) -> AnalyticScene:
    """Named scene from the library, or a path to a scene file."""
    if source in SCENES:
        scene = SCENES[source]()
        scene.textured = textured
        return scene
    path = Path(source)
    if path.suffix and path.is_file():
        return parse_scene(path.read_text(), name=path.stem)
    raise UnknownScene(f"unknown scene {source!r}; library has {sorted(SCENES)}")


# sphere tracing and oracle views


def sphere_trace(scene: AnalyticScene, origins, dirs, max_steps: int = 1000, tol: float = TRACE_EPS):
    """First hits along rays. Returns ``(t, converged)``."""
    o = np.atleast_2d(np.asarray(origins, dtype=float))
    d = np.atleast_2d(np.asarray(dirs, dtype=float))
    t = np.zeros(len(d))
    active = np.ones(len(d), dtype=bool)
    for _ in range(max_steps):
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        s = scene.sdf(o[idx] + t[idx, None] * d[idx])
        t[idx] += s
        active[idx[np.abs(s) < tol]] = False
    return t, ~active


@dataclass
class OracleView:
    camera: geometry.Camera
    color: np.ndarray  # (H, W, 3)
    depth: np.ndarray  # (H, W) distance along the unit ray
    normal: np.ndarray  # (H, W, 3) world frame

    @property
    def z_depth(self) -> np.ndarray:
        vv, uu = np.mgrid[0 : self.camera.height, 0 : self.camera.width]
        _, d = geometry.pixels_to_rays(self.camera, np.column_stack([uu.ravel(), vv.ravel()]))
        return self.depth * (d @ self.camera.forward).reshape(self.depth.shape)


def render_oracle(scene: AnalyticScene, camera: geometry.Camera) -> OracleView:
    if not scene.contains_camera(camera.center):
        raise InvalidCamera("camera centre is not in the room's free space")
    vv, uu = np.mgrid[0 : camera.height, 0 : camera.width]
    pix = np.column_stack([uu.ravel(), vv.ravel()]).astype(float)
    o, d = geometry.pixels_to_rays(camera, pix)
    t, _ = sphere_trace(scene, o, d)
    hit = o + t[:, None] * d
    n = scene.normal(hit)
    col = scene.shade(hit, n)
    H, W = camera.height, camera.width
    return OracleView(camera, col.reshape(H, W, 3), t.reshape(H, W), n.reshape(H, W, 3))


RIG_PATTERNS = ("ring", "wall-scan")


def make_camera_rig(scene: AnalyticScene, n_views: int, pattern: str = "ring", radius: float = 1.0,
                    height: float | None = None, target_height: float | None = None, width: int = 128,
                    image_height: int = 96, fov_x: float = 90.0) -> list[geometry.Camera]:
    """Camera rigs inside the room.

    ``ring``: cameras evenly spaced on a horizontal circle around the room
    centre, each looking across it toward the point above the centre at
    ``target_height`` (defaults to the camera height).
    ``wall-scan``: cameras on a line parallel to the long axis, all looking
    toward the +y wall.
    """
    if n_views < 2:
        raise TooFewViews(f"need at least 2 views, got {n_views}")
    c = scene.center
    # level cameras at mid-height see floor, walls and ceiling alike
    h = scene.room_min[2] + 0.5 * (scene.room_max[2] - scene.room_min[2]) if height is None else height
    th = h if target_height is None else target_height
    K = geometry.intrinsics_from_fov(width, image_height, fov_x)
    cams = []
    for k in range(n_views):
        if pattern == "ring":
            a = 2 * math.pi * k / n_views
            eye = np.array([c[0] + radius * math.cos(a), c[1] + radius * math.sin(a), h])
            target = np.array([c[0], c[1], th])
        elif pattern == "wall-scan":
            span = 0.7 * (scene.room_max[0] - scene.room_min[0])
            x = c[0] - span / 2 + span * k / (n_views - 1)
            eye = np.array([x, c[1] - 0.5 * scene.half_extent[1], h])
            target = np.array([x + 0.3 * (k - (n_views - 1) / 2) / n_views, scene.room_max[1], th])
        else:
            raise ValueError(f"unknown rig pattern {pattern!r}")
        cam = geometry.Camera(K, geometry.look_at(eye, target), width, image_height)
        if not scene.contains_camera(cam.center):
            raise InvalidCamera(f"rig camera {k} lands outside free space")
        cams.append(cam)
    return cams


def ring_baseline_deg(n_views: int) -> float:
    """Azimuthal separation of adjacent ring cameras."""
    return 360.0 / n_views


def generate_matches(scene: AnalyticScene, cam_r: geometry.Camera, cam_s: geometry.Camera, count: int,
                     noise_px: float = 0.0, outlier_rate: float = 0.0, seed: int = 0, ref_view: int = 0,
                     src_view: int = 1) -> MatchBlock:
    """Oracle correspondences on mutually visible surface points.

    ``count`` reference pixels are drawn uniformly, the way a dense matcher is
    queried; only those whose surface point is visible from both cameras
    survive, so the returned match count tracks view overlap. Source pixels
    are exact projections plus isotropic Gaussian noise. An ``outlier_rate``
    fraction is replaced by uniformly random source pixels. Uncertainty is
    ``1 - exp(-|noise|)`` for inliers and uniform on [0, 0.3] for outliers.
    """
    if count < 1 or not 0.0 <= outlier_rate <= 1.0:
        raise ValueError("need count >= 1 and outlier_rate in [0, 1]")
    rng = np.random.default_rng(seed)
    pr = rng.uniform([0, 0], [cam_r.width, cam_r.height], size=(count, 2))
    o, d = geometry.pixels_to_rays(cam_r, pr)
    t, ok = sphere_trace(scene, o, d)
    X = o + t[:, None] * d
    ps, z = geometry.project_points(cam_s, X)
    ok &= (z > 1e-3) & cam_s.in_bounds(ps)
    # visible from the source camera: tracing toward X must stop at X
    dist = np.linalg.norm(X - cam_s.center, axis=1)
    dir_s = (X - cam_s.center) / np.maximum(dist, 1e-12)[:, None]
    t_s, conv = sphere_trace(scene, np.broadcast_to(cam_s.center, X.shape), dir_s)
    ok &= conv & (np.abs(t_s - dist) < 1e-4)
    if not ok.any():
        raise NoOverlap(f"views {ref_view} and {src_view} share no visible surface")
    pr, ps = pr[ok], ps[ok]
    n = len(pr)
    noise = rng.normal(0.0, noise_px, size=(n, 2)) if noise_px > 0 else np.zeros((n, 2))
    lim = np.array([cam_s.width, cam_s.height]) - 1e-6
    ps_noisy = np.clip(ps + noise, 0.0, lim)
    u = 1.0 - np.exp(-np.linalg.norm(noise, axis=1))
    n_out = int(round(outlier_rate * n))
    if n_out:
        idx = rng.choice(n, size=n_out, replace=False)
        ps_noisy[idx] = rng.uniform([0, 0], [cam_s.width, cam_s.height], size=(n_out, 2))
        u[idx] = rng.uniform(0.0, 0.3, size=n_out)
    return MatchBlock(ref_view, src_view, pr, ps_noisy, u)


def ground_truth_mesh(scene: AnalyticScene, resolution: int = 192, margin: float = 0.05):
    """Marching-cubes mesh of the analytic scene over the room box."""
    from .meshing import marching_cubes_grid

    pad = margin * (scene.room_max - scene.room_min)
    return marching_cubes_grid(scene.sdf, scene.room_min - pad, scene.room_max + pad, resolution)
