import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from sparsesdf import meshing, pipeline, synthetic
from sparsesdf.errors import EmptyCloud, EmptyMesh, InvalidInput
from sparsesdf.field import FieldConfig, SdfField
from sparsesdf.meshing import Mesh


def sphere(p):
    return np.linalg.norm(p, axis=1) - 1.0


def unit_square():
    return Mesh([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[0, 1, 2], [0, 2, 3]])


def test_sphere_vertices_within_voxel_bound():
    mesh = meshing.marching_cubes(sphere, [-1.5] * 3, [1.5] * 3, 64)
    voxel = 3.0 / 63
    r = np.linalg.norm(mesh.vertices, axis=1)
    assert np.max(np.abs(r - 1.0)) < 1.5 * voxel
    assert mesh.area == pytest.approx(4 * math.pi, rel=0.02)


def test_constant_field_empty():
    with pytest.raises(EmptyMesh):
        meshing.marching_cubes(lambda p: np.ones(len(p)), [-1] * 3, [1] * 3, 16)


def test_plane_area():
    # grid nodes avoid z = 0 so no vertex lands exactly on the iso-value
    mesh = meshing.marching_cubes(lambda p: p[:, 2], [-1, -1, -0.97], [1, 1, 1.03], 64)
    assert mesh.area == pytest.approx(4.0, rel=0.02)
    np.testing.assert_allclose(mesh.vertices[:, 2], 0.0, atol=1e-6)  # float32 interpolation


def test_resolution_floor():
    with pytest.raises(InvalidInput):
        meshing.marching_cubes(sphere, [-1.5] * 3, [1.5] * 3, 7)


def test_no_degenerate_triangles():
    mesh = meshing.marching_cubes(sphere, [-1.5] * 3, [1.5] * 3, 32)
    assert np.all(mesh.triangle_areas() > meshing.DEGENERATE_AREA)
    assert mesh.triangles.min() >= 0 and mesh.triangles.max() < len(mesh.vertices)


def test_field_mesh_vertices_near_zero_level():
    fld = SdfField(FieldConfig(sdf_hidden=32, sdf_layers=3, color_hidden=16, color_layers=2, feature_dim=4))
    lo, hi = np.full(3, -1.2), np.full(3, 1.2)
    res = 48
    mesh = meshing.marching_cubes(fld, lo, hi, res)
    voxel = 2.4 / (res - 1)
    with torch.no_grad():
        s = fld.sdf(torch.as_tensor(mesh.vertices, dtype=torch.float32)).numpy()
    assert np.max(np.abs(s)) < 2 * math.sqrt(3) * voxel


def test_sample_square_mean():
    pts = meshing.sample_points(unit_square(), 10_000, seed=0)
    np.testing.assert_allclose(pts.mean(0), [0.5, 0.5, 0], atol=0.02)


def test_sample_single_triangle_inside():
    tri = Mesh([[0, 0, 0], [2, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    pts = meshing.sample_points(tri, 2000, seed=3)
    x, y = pts[:, 0], pts[:, 1]
    assert np.all(x >= -1e-12) and np.all(y >= -1e-12) and np.all(x / 2 + y <= 1 + 1e-12)
    np.testing.assert_array_equal(pts[:, 2], 0.0)


def test_sample_deterministic():
    a = meshing.sample_points(unit_square(), 500, seed=7)
    b = meshing.sample_points(unit_square(), 500, seed=7)
    np.testing.assert_array_equal(a, b)


def test_sample_empty_mesh():
    with pytest.raises(EmptyMesh):
        meshing.sample_points(Mesh(np.zeros((0, 3)), np.zeros((0, 3))), 10)


def test_sample_area_weighting():
    # a big and a small triangle; sample counts follow their areas
    m = Mesh([[0, 0, 0], [3, 0, 0], [0, 3, 0], [10, 0, 0], [11, 0, 0], [10, 1, 0]], [[0, 1, 2], [3, 4, 5]])
    pts = meshing.sample_points(m, 20_000, seed=1)
    frac_small = np.mean(pts[:, 0] >= 10)
    assert frac_small == pytest.approx(0.5 / 5.0, abs=0.01)


def test_evaluate_identical():
    pts = meshing.sample_points(meshing.marching_cubes(sphere, [-1.5] * 3, [1.5] * 3, 24), 3000)
    r = meshing.evaluate(pts, pts, 0.01)
    assert (r.fscore, r.precision, r.recall, r.accuracy, r.completeness) == (1.0, 1.0, 1.0, 0.0, 0.0)


def test_evaluate_translated():
    tau = 0.05
    gt = np.random.default_rng(0).uniform(-1, 1, (300, 2))
    gt = np.column_stack([gt, np.zeros(300)])
    pred = gt + [0, 0, 2 * tau]
    r = meshing.evaluate(pred, gt, tau)
    assert (r.precision, r.recall, r.fscore) == (0.0, 0.0, 0.0)
    assert r.accuracy == pytest.approx(2 * tau) and r.completeness == pytest.approx(2 * tau)


def test_evaluate_half_split():
    gt = np.column_stack([np.arange(100.0), np.zeros(100), np.zeros(100)])
    far = gt + [0, 0, 10.0]
    pred = np.vstack([gt, far])
    r = meshing.evaluate(pred, gt, 0.5)
    assert r.precision == 0.5 and r.recall == 1.0
    assert r.fscore == pytest.approx(2 / 3)


def test_evaluate_errors():
    with pytest.raises(EmptyCloud):
        meshing.evaluate(np.zeros((0, 3)), np.zeros((3, 3)), 0.1)
    with pytest.raises(InvalidInput):
        meshing.evaluate(np.zeros((3, 3)), np.zeros((3, 3)), 0.0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), t1=st.floats(0.01, 0.5), t2=st.floats(0.01, 0.5))
def test_evaluate_symmetry_and_monotone(seed, t1, t2):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(200, 3)), rng.normal(size=(150, 3))
    ab, ba = meshing.evaluate(a, b, t1), meshing.evaluate(b, a, t1)
    assert ab.accuracy == pytest.approx(ba.completeness)
    assert ab.precision == pytest.approx(ba.recall)
    lo, hi = sorted((t1, t2))
    assert meshing.evaluate(a, b, lo).fscore <= meshing.evaluate(a, b, hi).fscore
    assert 0 <= ab.fscore <= 1


def test_report_json_round_trip(tmp_path):
    r = meshing.MetricsReport(0.8, 0.01, 0.02, 0.9, 0.72, 0.05, 100, 120)
    r.to_json(tmp_path / "m.json")
    assert meshing.MetricsReport.from_json(tmp_path / "m.json") == r
    assert r.row().startswith("F-score 0.800  Acc. 0.010  Comp. 0.020  Prec. 0.900  Recall 0.720")


@pytest.mark.parametrize("suffix", [".ply", ".obj"])
def test_mesh_io_round_trip(tmp_path, suffix):
    mesh = meshing.marching_cubes(sphere, [-1.5] * 3, [1.5] * 3, 16)
    path = tmp_path / f"m{suffix}"
    (meshing.write_ply if suffix == ".ply" else meshing.write_obj)(path, mesh)
    back = meshing.read_mesh(path)
    np.testing.assert_array_equal(back.triangles, mesh.triangles)
    np.testing.assert_allclose(back.vertices, mesh.vertices, atol=1e-6)


def test_crop_points():
    p = np.array([[0, 0, 0], [2, 0, 0], [0.5, 0.5, 0.5]])
    np.testing.assert_array_equal(meshing.crop_points(p, [0, 0, 0], [1, 1, 1]), p[[0, 2]])


def test_gt_cloud_keeps_walls_on_the_box():
    scene = synthetic.build_scene("empty-room")
    cloud = pipeline.gt_cloud(scene, 48, 4000)
    assert len(cloud) == 4000
    for ax in range(3):
        assert np.sum(np.abs(cloud[:, ax] - scene.room_min[ax]) < 1e-3) > 100


def test_ground_truth_mesh_scores_perfectly():
    scene = synthetic.build_scene("room-two-chairs")
    mesh = synthetic.ground_truth_mesh(scene, 96, pipeline.MESH_MARGIN)
    rep = pipeline.evaluate_mesh(mesh, scene, n_points=20000, gt_resolution=96)
    assert rep.fscore > 0.99
