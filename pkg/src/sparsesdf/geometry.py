"""Pinhole cameras, rays, two-view triangulation and epipolar geometry.

Conventions used everywhere in the package:

* ``cam_to_world`` maps camera coordinates to world coordinates. Camera axes
  follow the OpenCV layout (x right, y down, z forward).
* Pixel ``(u, v)`` addresses the pixel whose centre sits at ``(u + 0.5, v + 0.5)``
  in continuous image coordinates, so ``pixel_to_ray`` back-projects
  ``K^-1 (u + 0.5, v + 0.5, 1)`` and ``project`` subtracts the half pixel again.
* Ray depth ``t`` is measured along the unit direction, not along the optical
  axis. ``project`` returns the optical-axis (z) depth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import (
    BehindCamera,
    DegenerateBaseline,
    DegenerateParallel,
    IllConditioned,
    InvalidCamera,
    OutOfBounds,
    ParseError,
)

PARALLEL_SIN_TOL = 1e-6
BEHIND_DEPTH_TOL = 1e-6
SAMPSON_DENOM_TOL = 1e-12


@dataclass(frozen=True)
class Camera:
    intrinsics: np.ndarray
    cam_to_world: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        K = np.asarray(self.intrinsics, dtype=float).reshape(3, 3)
        T = np.asarray(self.cam_to_world, dtype=float).reshape(4, 4)
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "cam_to_world", T)
        if self.width <= 0 or self.height <= 0:
            raise InvalidCamera(f"image size must be positive, got {self.width}x{self.height}")
        if np.any(np.abs(np.tril(K, -1)) > 0) or K[0, 0] <= 0 or K[1, 1] <= 0 or K[2, 2] <= 0:
            raise InvalidCamera("intrinsics must be upper-triangular with positive diagonal")
        R = T[:3, :3]
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9, rtol=0) or np.linalg.det(R) < 0:
            raise InvalidCamera("cam_to_world rotation is not a proper rotation")
        if not np.allclose(T[3], [0, 0, 0, 1]):
            raise InvalidCamera("cam_to_world last row must be (0, 0, 0, 1)")

    @property
    def rotation(self) -> np.ndarray:
        """Camera-to-world rotation."""
        return self.cam_to_world[:3, :3]

    @property
    def center(self) -> np.ndarray:
        return self.cam_to_world[:3, 3].copy()

    @property
    def world_to_cam(self) -> np.ndarray:
        R = self.rotation
        out = np.eye(4)
        out[:3, :3] = R.T
        out[:3, 3] = -R.T @ self.cam_to_world[:3, 3]
        return out

    @property
    def forward(self) -> np.ndarray:
        return self.rotation[:, 2].copy()

    def in_bounds(self, pixels) -> np.ndarray:
        p = np.asarray(pixels, dtype=float)
        return (p[..., 0] >= 0) & (p[..., 0] < self.width) & (p[..., 1] >= 0) & (p[..., 1] < self.height)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-9:
            d = d / n
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        object.__setattr__(self, "direction", d)

    def at(self, t):
        return self.origin + np.multiply.outer(t, self.direction)


@dataclass(frozen=True)
class TriangulationResult:
    point: np.ndarray
    depth_r: float
    depth_s: float
    ray_angle: float
    gap: float


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """cam_to_world for a camera at ``eye`` looking at ``target`` (OpenCV axes)."""
    eye = np.asarray(eye, dtype=float)
    fwd = np.asarray(target, dtype=float) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=float))
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, [0.0, 1.0, 0.0])
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    T = np.eye(4)
    T[:3, 0], T[:3, 1], T[:3, 2], T[:3, 3] = right, down, fwd, eye
    return T


def intrinsics_from_fov(width: int, height: int, fov_x_deg: float) -> np.ndarray:
    f = 0.5 * width / math.tan(math.radians(fov_x_deg) / 2)
    return np.array([[f, 0, width / 2], [0, f, height / 2], [0, 0, 1.0]])


def pixels_to_rays(camera: Camera, pixels) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised back-projection. Returns ``(origins, unit directions)``, no bounds check."""
    p = np.asarray(pixels, dtype=float).reshape(-1, 2)
    homo = np.column_stack([p + 0.5, np.ones(len(p))])
    d_cam = np.linalg.solve(camera.intrinsics, homo.T).T
    d = d_cam @ camera.rotation.T
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    o = np.broadcast_to(camera.center, d.shape).copy()
    return o, d


def pixel_to_ray(camera: Camera, pixel) -> Ray:
    pixel = np.asarray(pixel, dtype=float)
    if not camera.in_bounds(pixel):
        raise OutOfBounds(f"pixel {pixel.tolist()} outside {camera.width}x{camera.height}")
    o, d = pixels_to_rays(camera, pixel)
    return Ray(o[0], d[0])


def project_points(camera: Camera, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised projection, ``(pixels, z_depths)``. Points behind the camera give garbage pixels."""
    X = np.asarray(points, dtype=float).reshape(-1, 3)
    W = camera.world_to_cam
    Xc = X @ W[:3, :3].T + W[:3, 3]
    z = Xc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        h = Xc @ camera.intrinsics.T
        uv = h[:, :2] / h[:, 2:3] - 0.5
    return uv, z


def project(camera: Camera, point) -> tuple[np.ndarray, float]:
    uv, z = project_points(camera, point)
    if not z[0] > BEHIND_DEPTH_TOL:
        raise BehindCamera(f"point depth {z[0]:.3g} is not in front of the camera")
    return uv[0], float(z[0])


def triangulate_rays(o_r, d_r, o_s, d_s):
    """Batched midpoint triangulation.

    Returns ``(points, t_r, t_s, angles, gaps, status)`` where status is 0 for a
    valid result, 1 for near-parallel rays and 2 for a foot behind an origin.
    """
    o_r, d_r, o_s, d_s = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (o_r, d_r, o_s, d_s))
    b = np.sum(d_r * d_s, axis=1)
    sin = np.linalg.norm(np.cross(d_r, d_s), axis=1)
    w0 = o_r - o_s
    d = np.sum(d_r * w0, axis=1)
    e = np.sum(d_s * w0, axis=1)
    denom = np.where(sin < PARALLEL_SIN_TOL, 1.0, sin**2)
    t_r = (b * e - d) / denom
    t_s = (e - b * d) / denom
    p_r = o_r + t_r[:, None] * d_r
    p_s = o_s + t_s[:, None] * d_s
    points = 0.5 * (p_r + p_s)
    gaps = np.linalg.norm(p_r - p_s, axis=1)
    angles = np.arctan2(sin, b)
    status = np.zeros(len(b), dtype=int)
    status[(t_r <= 0) | (t_s <= 0)] = 2
    status[sin < PARALLEL_SIN_TOL] = 1
    return points, t_r, t_s, angles, gaps, status


def triangulate(ray_r: Ray, ray_s: Ray) -> TriangulationResult:
    """Midpoint of the common perpendicular between two rays."""
    pts, t_r, t_s, ang, gap, status = triangulate_rays(
        ray_r.origin, ray_r.direction, ray_s.origin, ray_s.direction
    )
    if status[0] == 1:
        raise DegenerateParallel("rays are parallel")
    if status[0] == 2:
        raise BehindCamera(f"triangulated depths ({t_r[0]:.3g}, {t_s[0]:.3g}) not positive")
    return TriangulationResult(pts[0], float(t_r[0]), float(t_s[0]), float(ang[0]), float(gap[0]))


def skew(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])


def relative_pose(cam_r: Camera, cam_s: Camera) -> tuple[np.ndarray, np.ndarray]:
    """``(R, t)`` with ``x_s = R x_r + t`` in camera coordinates."""
    T = cam_s.world_to_cam @ cam_r.cam_to_world
    return T[:3, :3], T[:3, 3]


def fundamental_matrix(cam_r: Camera, cam_s: Camera) -> np.ndarray:
    R, t = relative_pose(cam_r, cam_s)
    if np.linalg.norm(t) < 1e-9:
        raise DegenerateBaseline("camera centres coincide")
    F = np.linalg.inv(cam_s.intrinsics).T @ skew(t) @ R @ np.linalg.inv(cam_r.intrinsics)
    return F / F.flat[np.argmax(np.abs(F))]


def homogeneous_pixels(p) -> np.ndarray:
    """Pixel indices ``(u, v)`` to the homogeneous image points ``(u + 0.5, v + 0.5, 1)``
    that the intrinsics act on. 3-vectors pass through unchanged."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    if p.shape[1] == 2:
        p = np.column_stack([p + 0.5, np.ones(len(p))])
    return p


def sampson_distances(F, p_r, p_s) -> np.ndarray:
    """Batched Sampson distance.

    3-vectors are used as homogeneous image points; 2-vectors are pixel
    indices and go through :func:`homogeneous_pixels`. Ill-conditioned entries
    come back as NaN.
    """
    pr, ps = homogeneous_pixels(p_r), homogeneous_pixels(p_s)
    Fpr = pr @ F.T
    Ftps = ps @ F
    num = np.sum(ps * Fpr, axis=1) ** 2
    den = Fpr[:, 0] ** 2 + Fpr[:, 1] ** 2 + Ftps[:, 0] ** 2 + Ftps[:, 1] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den < SAMPSON_DENOM_TOL, np.nan, num / den)


def sampson_distance(F, p_r, p_s) -> float:
    d = sampson_distances(F, p_r, p_s)[0]
    if np.isnan(d):
        raise IllConditioned("epipolar lines have zero gradient at both points")
    return float(d)


def reproject(cam_r: Camera, cam_s: Camera, pixel_r, rendered_depth: float) -> np.ndarray:
    """Lift ``pixel_r`` to ``rendered_depth`` along its unit ray and project into ``cam_s``."""
    o, d = pixels_to_rays(cam_r, pixel_r)
    uv, _ = project(cam_s, o[0] + rendered_depth * d[0])
    return uv


# camera file io


def write_cameras(path, cameras: dict[int, Camera]) -> None:
    lines = ["# view_id K(9, row-major) cam_to_world(16, row-major) width height"]
    for vid in sorted(cameras):
        c = cameras[vid]
        vals = [f"{x:.17g}" for x in np.concatenate([c.intrinsics.ravel(), c.cam_to_world.ravel()])]
        lines.append(" ".join([str(vid), *vals, str(c.width), str(c.height)]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_cameras(path) -> dict[int, Camera]:
    cams: dict[int, Camera] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) != 28:
            raise ParseError(lineno, f"expected 28 fields, got {len(tok)}")
        try:
            vid = int(tok[0])
            vals = np.array([float(x) for x in tok[1:26]])
            w, h = int(tok[26]), int(tok[27])
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None
        if vid in cams:
            raise ParseError(lineno, f"duplicate view id {vid}")
        try:
            cams[vid] = Camera(vals[:9].reshape(3, 3), vals[9:].reshape(4, 4), w, h)
        except InvalidCamera as exc:
            raise ParseError(lineno, str(exc)) from None
    return cams


def baseline_angles(cameras: Iterable[Camera]) -> np.ndarray:
    """Angles (radians) between optical axes of consecutive cameras."""
    cams = list(cameras)
    out = []
    for a, b in zip(cams, cams[1:]):
        out.append(math.acos(float(np.clip(a.forward @ b.forward, -1, 1))))
    return np.array(out)
