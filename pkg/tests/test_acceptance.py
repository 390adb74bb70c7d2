"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Criteria 3 to 5 train full-size fields for 20k iterations per run and only
execute when SPARSESDF_RUN_E2E=1. scripts/run_e2e.py and
scripts/run_ablation.py run the same protocol at reduced scale.
"""

import math
import os
import statistics
import time

import numpy as np
import pytest

from sparsesdf import dataset, geometry, gradcheck, meshing, pipeline, priors, synthetic
from sparsesdf.train import TrainConfig, ablation_config, fast_field_config

RUN_E2E = os.environ.get("SPARSESDF_RUN_E2E") == "1"
E2E_REASON = "end-to-end training at full settings; set SPARSESDF_RUN_E2E=1 to run"

# pinned tolerances
GRAD_REL = 1e-3
GRAD_PROBES = 100
GRAD_SECONDS = 300.0
TRI_ERR = 1e-4
SAMPSON_EXACT = 1e-9
GEOM_SECONDS = 60.0
F_TARGET = 0.80
F_FLOOR = 0.70
E2E_SECONDS = 3600.0
E2E_CORES = 8
ABLATION_GAP = 0.05
MONO_GAP = 0.10
EPI_RATIO = 0.5
SPHERE_VOXELS = 1.5


def test_criterion_1_gradients(acceptance):
    t0 = time.perf_counter()
    reports = gradcheck.check_all(gradcheck.GradcheckConfig(probes=GRAD_PROBES, tolerance=GRAD_REL))
    seconds = time.perf_counter() - t0
    worst = max(reports, key=lambda r: r.max_rel_error)
    ok = all(r.passed and r.probes >= GRAD_PROBES for r in reports) and seconds < GRAD_SECONDS
    acceptance(1, ok, f"{len(reports)} terms x {GRAD_PROBES} probes, worst {worst.term} "
                      f"rel {worst.max_rel_error:.2e} (< {GRAD_REL:g}), {seconds:.0f}s (< {GRAD_SECONDS:.0f}s)")
    for r in reports:
        assert r.passed, r.row()
    assert seconds < GRAD_SECONDS


def test_criterion_2_geometry_oracles(acceptance):
    t0 = time.perf_counter()
    scene = synthetic.build_scene("room-two-chairs")
    cams = dict(enumerate(synthetic.make_camera_rig(scene, 10)))
    tri_err, sampson = 0.0, 0.0
    for s in (1, 2, 3, 8, 9):
        b = synthetic.generate_matches(scene, cams[0], cams[s], 1000, seed=s, ref_view=0, src_view=s)
        o_r, d_r = geometry.pixels_to_rays(cams[0], b.pixel_r)
        o_s, d_s = geometry.pixels_to_rays(cams[s], b.pixel_s)
        X, _, _, _, _, status = geometry.triangulate_rays(o_r, d_r, o_s, d_s)
        t, _ = synthetic.sphere_trace(scene, o_r, d_r)
        truth = o_r + t[:, None] * d_r
        assert np.all(status == 0)
        tri_err = max(tri_err, float(np.max(np.linalg.norm(X - truth, axis=1))))
        F = geometry.fundamental_matrix(cams[0], cams[s])
        sampson = max(sampson, float(np.max(geometry.sampson_distances(F, b.pixel_r, b.pixel_s))))
    # a correspondence exactly on its epipolar line
    F = np.array([[0, 0, 0], [0, 0, -1], [0, 1, 0.0]])
    assert geometry.sampson_distances(F, [[-0.5, -0.5]], [[3.0, -0.5]])[0] == 0.0
    w0 = float(priors.epipolar_weights(F, [[-0.5, -0.5]], [[3.0, -0.5]])[0])
    b = synthetic.generate_matches(scene, cams[0], cams[1], 500, seed=4, ref_view=0, src_view=1)
    same = priors.MatchBlock(0, 1, b.pixel_r, b.pixel_r, b.uncertainty)
    s_identical = priors.angular_score(same, {0: cams[0], 1: cams[0]})
    seconds = time.perf_counter() - t0
    ok = tri_err < TRI_ERR and sampson < SAMPSON_EXACT and w0 == 0.25 and s_identical == 0.0 and seconds < GEOM_SECONDS
    acceptance(2, ok, f"triangulation {tri_err:.1e} m, Sampson {sampson:.1e} px, w(0) = {w0}, "
                      f"S(identical) = {s_identical}, {seconds:.1f}s")
    assert tri_err < TRI_ERR
    assert sampson < SAMPSON_EXACT
    assert w0 == 0.25
    assert s_identical == 0.0
    assert seconds < GEOM_SECONDS


# end-to-end runs shared by criteria 3 to 5


_RUNS: dict = {}


def _e2e_data():
    if "data" not in _RUNS:
        _RUNS["data"] = dataset.synthesize("room-two-chairs", 10, noise_px=0.5, outlier_rate=0.1, seed=0)
    return _RUNS["data"]


def _e2e_run(mode: str, seed: int) -> pipeline.ExperimentResult:
    key = (mode, seed)
    if key not in _RUNS:
        cfg = ablation_config(TrainConfig(iterations=20000, seed=seed), mode)
        _RUNS[key] = pipeline.run_experiment(_e2e_data(), cfg, fast_field_config())
    return _RUNS[key]


@pytest.mark.slow
def test_criterion_3_end_to_end(acceptance):
    if not RUN_E2E:
        acceptance(3, None, E2E_REASON)
        pytest.skip(E2E_REASON)
    res = _e2e_run("full", 0)
    f = res.report.fscore
    cores = os.cpu_count() or 1
    timed = cores >= E2E_CORES
    ok = f >= F_FLOOR and (not timed or res.total_seconds <= E2E_SECONDS)
    note = "target met" if f >= F_TARGET else f"below target {F_TARGET}, report floor {F_FLOOR}"
    timing = (f"{res.total_seconds / 60:.1f} min" if timed
              else f"{res.total_seconds / 60:.1f} min on {cores} cores (budget applies to {E2E_CORES})")
    acceptance(3, ok, f"F-score {f:.3f} at tau {res.report.tau:.4f} ({note}), {timing}")
    assert f >= F_FLOOR, res.report.row()
    if timed:
        assert res.total_seconds <= E2E_SECONDS


@pytest.mark.slow
def test_criterion_4_ablation_direction(acceptance):
    if not RUN_E2E:
        acceptance(4, None, E2E_REASON)
        pytest.skip(E2E_REASON)
    seeds = (0, 1, 2)
    modes = ("full", "normal-only", "rgb-only", "no-epipolar", "no-angular")
    F = {m: [_e2e_run(m, s).report.fscore for s in seeds] for m in modes}
    mean = {m: statistics.fmean(v) for m, v in F.items()}
    # run-to-run spread pooled over the strategy variants
    sigma = math.sqrt(statistics.fmean([statistics.variance(F[m]) for m in ("full", "no-epipolar", "no-angular")]))
    loss_ok = mean["full"] - mean["normal-only"] >= ABLATION_GAP and \
        mean["normal-only"] - mean["rgb-only"] >= ABLATION_GAP
    strat_ok = all(mean["full"] - mean[m] >= -sigma for m in ("no-epipolar", "no-angular"))
    detail = ", ".join(f"{m} {mean[m]:.3f}" for m in modes) + f", sigma {sigma:.3f}"
    acceptance(4, loss_ok and strat_ok, detail)
    assert loss_ok, detail
    assert strat_ok, detail


@pytest.mark.slow
def test_criterion_5_monocular_failure(acceptance):
    if not RUN_E2E:
        acceptance(5, None, E2E_REASON)
        pytest.skip(E2E_REASON)
    full = _e2e_run("full", 0).report.fscore
    mono = _e2e_run("mono-baseline", 0).report.fscore
    ok = full - mono >= MONO_GAP
    acceptance(5, ok, f"inter-image {full:.3f} vs monocular {mono:.3f}, gap {full - mono:.3f} (>= {MONO_GAP})")
    assert ok


def test_criterion_6_epipolar_robustness(acceptance):
    scene = synthetic.build_scene("room-two-chairs")
    cams = dict(enumerate(synthetic.make_camera_rig(scene, 10)))
    ratios = []
    for seed in range(3):
        errs, wts = [], []
        for s in (1, 2, 9):
            b = synthetic.generate_matches(scene, cams[0], cams[s], 2000, noise_px=0.5, outlier_rate=0.3,
                                           seed=seed, ref_view=0, src_view=s)
            p = priors.build_pair_priors(cams, b)
            o, d = geometry.pixels_to_rays(cams[0], b.pixel_r)
            t, _ = synthetic.sphere_trace(scene, o, d)
            v = p.valid
            errs.append(np.abs(p.tri_depth[v] - t[v]))
            wts.append(p.epi_weight[v])
        e, w = np.concatenate(errs), np.concatenate(wts)
        ratios.append(float((w @ e) / w.sum() / e.mean()))
    ok = max(ratios) <= EPI_RATIO
    acceptance(6, ok, "weighted/unweighted depth-prior error " + ", ".join(f"{r:.3f}" for r in ratios)
               + f" over 3 seeds (<= {EPI_RATIO})")
    assert ok


def _baseline_rig(theta_deg: float, n: int, seed: int = 0):
    """Reference camera plus one source rotated by ``theta_deg`` about the look-at point."""
    target = np.array([5.0, 0.0, 0.0])
    K = geometry.intrinsics_from_fov(160, 120, 60)
    ref = geometry.Camera(K, geometry.look_at([0.0, 0.0, 0.0], target), 160, 120)
    a = math.radians(theta_deg)
    R = np.array([[math.cos(a), -math.sin(a), 0], [math.sin(a), math.cos(a), 0], [0, 0, 1]])
    eye = target + R @ (np.zeros(3) - target)
    src = geometry.Camera(K, geometry.look_at(eye, target), 160, 120)
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.full(n, 5.0), rng.uniform(-1, 1, n), rng.uniform(-1, 1, n)])
    pr, _ = geometry.project_points(ref, X)
    ps, _ = geometry.project_points(src, X)
    return ref, src, pr, ps


def test_criterion_7_angular_filter(acceptance):
    ref, near_cam, pr2, ps2 = _baseline_rig(2.0, 100, seed=1)
    _, wide_cam, pr30, ps30 = _baseline_rig(30.0, 100, seed=2)
    cams = {0: ref, 1: near_cam, 2: wide_cam}

    def pair_for(src, pr, ps, n):
        return priors.build_pair_priors(cams, priors.MatchBlock(0, src, pr[:n], ps[:n], np.zeros(n)))

    equal = [pair_for(1, pr2, ps2, 100), pair_for(2, pr30, ps30, 100)]
    pick_filtered = priors.select_source_view(0, equal, priors.DEFAULT_EPSILON)
    unequal = [pair_for(1, pr2, ps2, 100), pair_for(2, pr30, ps30, 60)]
    pick_count = priors.select_source_view(0, unequal, 0.0)
    ok = pick_filtered == 2 and pick_count == 1
    acceptance(7, ok, f"equal counts, eps = 1-cos10: picked {pick_filtered} (S = {equal[0].angular_score:.4f} / "
                      f"{equal[1].angular_score:.4f}); eps = 0, 100 vs 60 matches: picked {pick_count}")
    assert pick_filtered == 2
    assert pick_count == 1


def test_criterion_8_metric_self_consistency(acceptance):
    mesh = meshing.marching_cubes(lambda p: np.linalg.norm(p, axis=1) - 1.0, [-1.5] * 3, [1.5] * 3, 64)
    voxel = 3.0 / 63
    dev = float(np.max(np.abs(np.linalg.norm(mesh.vertices, axis=1) - 1.0)))
    X = meshing.sample_points(mesh, 20_000, seed=0)
    rep = meshing.evaluate(X, X, 0.01)
    room = pipeline.gt_cloud(synthetic.build_scene("room-two-chairs"), 96, 20_000)
    rep_room = meshing.evaluate(room, room, 0.05)
    ok = (rep.fscore == 1.0 and rep.accuracy == 0.0 and rep.completeness == 0.0 and rep_room.fscore == 1.0
          and rep_room.accuracy == 0.0 and rep_room.completeness == 0.0 and dev < SPHERE_VOXELS * voxel)
    acceptance(8, ok, f"evaluate(X, X): F {rep.fscore}, acc {rep.accuracy}, comp {rep.completeness}; "
                      f"sphere vertex error {dev / voxel:.2f} voxels (< {SPHERE_VOXELS})")
    assert (rep.fscore, rep.accuracy, rep.completeness) == (1.0, 0.0, 0.0)
    assert (rep_room.fscore, rep_room.accuracy, rep_room.completeness) == (1.0, 0.0, 0.0)
    assert dev < SPHERE_VOXELS * voxel
