"""Zero-level-set extraction, surface sampling and point-cloud metrics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from skimage import measure

from .errors import EmptyCloud, EmptyMesh, InvalidInput

DEGENERATE_AREA = 1e-12


@dataclass
class Mesh:
    vertices: np.ndarray  # (V, 3)
    triangles: np.ndarray  # (T, 3) int

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles) and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise InvalidInput("triangle index out of range")

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    @property
    def area(self) -> float:
        return float(self.triangle_areas().sum())


@dataclass
class MetricsReport:
    fscore: float
    accuracy: float
    completeness: float
    precision: float
    recall: float
    tau: float
    n_pred: int
    n_gt: int

    def row(self) -> str:
        return (f"F-score {self.fscore:.3f}  Acc. {self.accuracy:.3f}  Comp. {self.completeness:.3f}  "
                f"Prec. {self.precision:.3f}  Recall {self.recall:.3f}  (tau={self.tau:.4g})")

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n")

    @classmethod
    def from_json(cls, path) -> "MetricsReport":
        return cls(**json.loads(Path(path).read_text()))


def grid_axes(box_min, box_max, resolution: int):
    """Sample coordinates per axis with a cubic voxel; ``resolution`` counts
    samples along the longest axis."""
    if resolution < 8:
        raise InvalidInput("marching cubes needs resolution >= 8")
    box_min = np.asarray(box_min, dtype=float)
    box_max = np.asarray(box_max, dtype=float)
    ext = box_max - box_min
    voxel = ext.max() / (resolution - 1)
    counts = [max(2, int(math.ceil(e / voxel - 1e-9)) + 1) for e in ext]
    return [box_min[k] + voxel * np.arange(counts[k]) for k in range(3)], voxel


def marching_cubes_grid(sdf_fn, box_min, box_max, resolution: int, chunk: int = 262144) -> Mesh:
    """Extract the zero level set of ``sdf_fn`` (numpy in, numpy out) on a regular grid."""
    axes, voxel = grid_axes(box_min, box_max, resolution)
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
    vals = np.concatenate([np.asarray(sdf_fn(pts[i : i + chunk]), dtype=float) for i in range(0, len(pts), chunk)])
    vol = vals.reshape(X.shape)
    if not (vol.min() < 0 < vol.max()):
        raise EmptyMesh("no sign change in the sampled grid")
    verts, faces, _, _ = measure.marching_cubes(vol, level=0.0, spacing=(voxel, voxel, voxel))
    verts = verts + np.array([a[0] for a in axes])
    mesh = Mesh(verts, faces)
    keep = mesh.triangle_areas() > DEGENERATE_AREA
    if not keep.any():
        raise EmptyMesh("all extracted triangles are degenerate")
    return Mesh(mesh.vertices, mesh.triangles[keep])


def marching_cubes(source, box_min, box_max, resolution: int = 256) -> Mesh:
    """Mesh a trained :class:`SdfField` or any callable SDF."""
    if callable(source) and not hasattr(source, "sdf_and_feature"):
        return marching_cubes_grid(source, box_min, box_max, resolution)
    import torch

    dtype = next(source.parameters()).dtype

    @torch.no_grad()
    def fn(p):
        return source.sdf(torch.as_tensor(p, dtype=dtype)).numpy()

    return marching_cubes_grid(fn, box_min, box_max, resolution, chunk=65536)


def sample_points(mesh: Mesh, n: int, seed: int = 0) -> np.ndarray:
    """Area-weighted uniform samples on the mesh surface."""
    areas = mesh.triangle_areas() if len(mesh.triangles) else np.zeros(0)
    if len(areas) == 0 or areas.sum() <= 0:
        raise EmptyMesh("cannot sample an empty mesh")
    rng = np.random.default_rng(seed)
    tri = rng.choice(len(areas), size=n, p=areas / areas.sum())
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    a, b, c = (mesh.vertices[mesh.triangles[tri, k]] for k in range(3))
    return (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c


def evaluate(pred, gt, tau: float) -> MetricsReport:
    """Accuracy/completeness (mean nearest distances) and precision/recall/F at ``tau``."""
    pred = np.asarray(pred, dtype=float).reshape(-1, 3)
    gt = np.asarray(gt, dtype=float).reshape(-1, 3)
    if len(pred) == 0 or len(gt) == 0:
        raise EmptyCloud("both point clouds must be non-empty")
    if not tau > 0:
        raise InvalidInput("tau must be positive")
    d_pred, _ = cKDTree(gt).query(pred)
    d_gt, _ = cKDTree(pred).query(gt)
    precision = float(np.mean(d_pred < tau))
    recall = float(np.mean(d_gt < tau))
    f = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return MetricsReport(f, float(d_pred.mean()), float(d_gt.mean()), precision, recall, float(tau), len(pred),
                         len(gt))


def crop_points(points, box_min, box_max, pad: float = 0.0) -> np.ndarray:
    p = np.asarray(points)
    inside = np.all((p >= np.asarray(box_min) - pad) & (p <= np.asarray(box_max) + pad), axis=1)
    return p[inside]


# mesh io


def write_ply(path, mesh: Mesh) -> None:
    """Binary little-endian PLY with float32 vertices and int32 faces."""
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(mesh.vertices)}\nproperty float x\nproperty float y\nproperty float z\n"
        f"element face {len(mesh.triangles)}\nproperty list uchar int vertex_indices\nend_header\n"
    )
    faces = np.zeros(len(mesh.triangles), dtype=[("n", "u1"), ("idx", "<i4", (3,))])
    faces["n"] = 3
    faces["idx"] = mesh.triangles
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(mesh.vertices.astype("<f4").tobytes())
        fh.write(faces.tobytes())


def read_ply(path) -> Mesh:
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise InvalidInput("not a PLY file")
        nv = nf = 0
        while True:
            line = fh.readline().strip()
            if line.startswith(b"format") and b"binary_little_endian" not in line:
                raise InvalidInput("only binary little-endian PLY is supported")
            if line.startswith(b"element vertex"):
                nv = int(line.split()[-1])
            elif line.startswith(b"element face"):
                nf = int(line.split()[-1])
            elif line == b"end_header":
                break
            elif not line:
                raise InvalidInput("truncated PLY header")
        verts = np.frombuffer(fh.read(12 * nv), dtype="<f4").reshape(nv, 3)
        faces = np.frombuffer(fh.read(13 * nf), dtype=[("n", "u1"), ("idx", "<i4", (3,))])
    return Mesh(verts.astype(float), faces["idx"].astype(np.int64))


def write_obj(path, mesh: Mesh) -> None:
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f}\n")
        for t in mesh.triangles + 1:
            fh.write(f"f {t[0]} {t[1]} {t[2]}\n")


def read_mesh(path) -> Mesh:
    path = Path(path)
    if path.suffix.lower() == ".ply":
        return read_ply(path)
    verts, faces = [], []
    for line in path.read_text().splitlines():
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "v":
            verts.append([float(x) for x in tok[1:4]])
        elif tok[0] == "f":
            faces.append([int(x.split("/")[0]) - 1 for x in tok[1:4]])
    return Mesh(np.array(verts), np.array(faces))
