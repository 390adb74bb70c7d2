import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparsesdf import geometry, priors, synthetic
from sparsesdf.errors import AllUncertain, ParseError, UnknownView
from sparsesdf.priors import MatchBlock, ViewPairPriors


def cams_identity(n=2, w=100, h=80):
    K = geometry.intrinsics_from_fov(w, h, 60)
    return {i: geometry.Camera(K, np.eye(4), w, h) for i in range(n)}


def pair(ref, src, S, H):
    m = MatchBlock(ref, src, np.zeros((H, 2)), np.zeros((H, 2)), np.zeros(H))
    return ViewPairPriors(ref, src, m, angular_score=S)


def test_load_empty(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text("")
    ms = priors.load_matches(p, cams_identity())
    assert len(ms) == 0 and ms.dropped == 0


def test_load_single_row_round_trip(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text("0 1 1\n10.25 20.5 30.125 40.0 0.375\n")
    ms = priors.load_matches(p, cams_identity())
    (m,) = list(ms.get(0, 1))
    np.testing.assert_array_equal(m.pixel_r, [10.25, 20.5])
    np.testing.assert_array_equal(m.pixel_s, [30.125, 40.0])
    assert m.uncertainty == 0.375


def test_load_drops_out_of_bounds(tmp_path, caplog):
    rows = [f"{i}.0 5.0 {i + 1}.0 6.0 0.1" for i in range(9)] + ["100.0 5.0 1.0 1.0 0.1"]
    p = tmp_path / "m.txt"
    p.write_text("0 1 10\n" + "\n".join(rows) + "\n")
    ms = priors.load_matches(p, cams_identity())
    assert len(ms.get(0, 1)) == 9
    assert ms.dropped == 1
    assert "dropped 1" in caplog.text


def test_load_errors(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text("0 1 2\n1 2 3 4 0.5\n1 2 3 x 0.5\n")
    with pytest.raises(ParseError) as exc:
        priors.load_matches(p, cams_identity())
    assert exc.value.line == 3
    p.write_text("0 5 1\n1 2 3 4 0.5\n")
    with pytest.raises(UnknownView):
        priors.load_matches(p, cams_identity())
    p.write_text("0 1 3\n1 2 3 4 0.5\n")
    with pytest.raises(ParseError):
        priors.load_matches(p, cams_identity())


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    b = MatchBlock(0, 1, rng.uniform(0, 80, (20, 2)), rng.uniform(0, 80, (20, 2)), rng.uniform(0, 1, 20))
    p = tmp_path / "m.txt"
    priors.save_matches(p, [b])
    back = priors.load_matches(p, cams_identity()).get(0, 1)
    np.testing.assert_allclose(back.pixel_r, b.pixel_r, atol=1e-6)
    np.testing.assert_allclose(back.uncertainty, b.uncertainty, atol=1e-6)
    np.testing.assert_allclose(priors.load_matches(p, cams_identity()).get(1, 0).pixel_r, b.pixel_s, atol=1e-6)


def test_angular_identical_views_zero():
    cams = cams_identity()
    px = np.array([[10.0, 20.0], [50.0, 60.0], [70.0, 5.0]])
    b = MatchBlock(0, 1, px, px, np.array([0.0, 0.2, 0.9]))
    assert priors.angular_score(b, cams) == pytest.approx(0.0, abs=1e-12)


def _axis_camera(forward, w=101, h=101):
    """Camera whose principal ray is ``forward``; its centre pixel index is 50."""
    K = np.array([[50.0, 0, 50.5], [0, 50.0, 50.5], [0, 0, 1]])
    up = np.array([0, 0, 1.0]) if abs(forward[2]) < 0.9 else np.array([0, 1.0, 0])
    T = geometry.look_at([0, 0, 0], forward, up)
    return geometry.Camera(K, T, w, h)


def test_angular_orthogonal_mean_directions():
    cams = {0: _axis_camera([1.0, 0, 0]), 1: _axis_camera([0, 1.0, 0])}
    b = MatchBlock(0, 1, [[50.0, 50.0]], [[50.0, 50.0]], [0.0])
    assert priors.angular_score(b, cams) == pytest.approx(1.0, abs=1e-12)


def test_angular_hand_two_match_fixture():
    cams = {0: _axis_camera([1.0, 0, 0]), 1: _axis_camera([0, 1.0, 0])}
    # pixel (100, 50) sits 50 px right of the centre -> camera dir (1, 0, 1)/sqrt2
    pr = np.array([[50.0, 50.0], [100.0, 50.0]])
    ps = np.array([[50.0, 50.0], [50.0, 50.0]])
    u = np.array([0.0, 0.5])
    o, d_r = geometry.pixels_to_rays(cams[0], pr)
    # hand sums: d_r0 = x, d_r1 = (x + right)/sqrt2; right of a +x looking camera with z up is -y
    np.testing.assert_allclose(d_r[1], np.array([1, -1, 0]) / math.sqrt(2), atol=1e-12)
    a = np.array([1, 0, 0]) + 0.5 * np.array([1, -1, 0]) / math.sqrt(2)
    b = 1.5 * np.array([0, 1, 0])
    expected = 1 - a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    assert priors.angular_score(MatchBlock(0, 1, pr, ps, u), cams) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(1.2527, abs=1e-4)  # 1 + 0.35355 / sqrt(1.9571)


def test_angular_all_uncertain():
    b = MatchBlock(0, 1, [[1.0, 1.0]], [[2.0, 2.0]], [1.0])
    with pytest.raises(AllUncertain):
        priors.angular_score(b, cams_identity())


@settings(max_examples=50, deadline=None)
@given(k=st.floats(0.01, 1.0), seed=st.integers(0, 1000))
def test_angular_scale_invariant_in_certainty(k, seed):
    rng = np.random.default_rng(seed)
    cams = {0: _axis_camera([1.0, 0, 0]), 1: _axis_camera([1.0, 1.0, 0.2])}
    pr, ps = rng.uniform(0, 100, (6, 2)), rng.uniform(0, 100, (6, 2))
    c = rng.uniform(0.05, 1.0, 6)  # certainties 1 - u
    s1 = priors.angular_score(MatchBlock(0, 1, pr, ps, 1 - c), cams)
    s2 = priors.angular_score(MatchBlock(0, 1, pr, ps, 1 - k * c), cams)
    assert s1 == pytest.approx(s2, abs=1e-12)


def test_select_filter_beats_count():
    assert priors.select_source_view(0, [pair(0, 1, 0.001, 500), pair(0, 2, 0.1, 300)], 0.01) == 2


def test_select_none_below_threshold():
    assert priors.select_source_view(0, [pair(0, 1, 0.001, 500), pair(0, 2, 0.005, 300)], 0.01) is None


def test_select_tie_break_by_score_then_id():
    assert priors.select_source_view(0, [pair(0, 1, 0.05, 300), pair(0, 2, 0.2, 300)], 0.01) == 2
    assert priors.select_source_view(0, [pair(0, 4, 0.2, 300), pair(0, 3, 0.2, 300)], 0.01) == 3


def test_select_boundary_is_strict():
    assert priors.select_source_view(0, [pair(0, 1, 0.01, 500)], 0.01) is None


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 2), st.integers(1, 5)), min_size=1, max_size=6), st.randoms())
def test_select_order_invariant(specs, rnd):
    pairs = [pair(0, i + 1, S, H) for i, (S, H) in enumerate(specs)]
    a = priors.select_source_view(0, pairs, 0.01)
    rnd.shuffle(pairs)
    assert priors.select_source_view(0, pairs, 0.01) == a


def _F_translation():
    return np.array([[0, 0, 0], [0, 0, -1], [0, 1, 0.0]])


def test_epipolar_weight_values():
    F = _F_translation()
    # points given as pixel indices; the homogeneous lift adds 0.5, so v = -0.5 lies on the epipolar line
    w0 = priors.epipolar_weights(F, [[-0.5, -0.5]], [[3.0, -0.5]], gamma=10)
    assert w0[0] == 0.25
    far = priors.epipolar_weights(F, [[-0.5, -0.5]], [[3.0, 1e6]], gamma=10)
    assert far[0] < 1e-300 + 1e-12
    # sampson = y^2 / 2 = 2  ->  y = 2
    w = priors.epipolar_weights(F, [[-0.5, -0.5]], [[0.0, 1.5]], gamma=1)
    assert w[0] == pytest.approx(0.5 * (1 - 1 / (1 + math.exp(-2))), rel=1e-12)
    assert w[0] == pytest.approx(0.0596, abs=1e-4)


def test_epipolar_weight_ill_conditioned_is_zero():
    assert priors.epipolar_weights(np.zeros((3, 3)), [[1.0, 1.0]], [[2.0, 2.0]])[0] == 0.0


@settings(max_examples=200, deadline=None)
@given(y1=st.floats(0, 50), y2=st.floats(0, 50), g1=st.floats(0.01, 100), g2=st.floats(0.01, 100))
def test_epipolar_weight_monotone(y1, y2, g1, g2):
    F = _F_translation()
    pr = [[-0.5, -0.5]]
    wa = priors.epipolar_weights(F, pr, [[0.0, y1 - 0.5]], g1)[0]
    assert 0 <= wa <= 0.25
    if y1 < y2:
        wb = priors.epipolar_weights(F, pr, [[0.0, y2 - 0.5]], g1)[0]
        assert wb <= wa
        # strictness is only visible before the sigmoid saturates and above float resolution
        if 0.5 * g1 * y2 * y2 < 30 and 0.5 * g1 * (y2 * y2 - y1 * y1) > 1e-9:
            assert wb < wa
    if g1 < g2 and y1 > 0:
        wc = priors.epipolar_weights(F, pr, [[0.0, y1 - 0.5]], g2)[0]
        assert wc <= wa
        if 0.5 * g2 * y1 * y1 < 30 and 0.5 * (g2 - g1) * y1 * y1 > 1e-9:
            assert wc < wa


@pytest.fixture(scope="module")
def rig():
    scene = synthetic.build_scene("room-two-chairs")
    cams = synthetic.make_camera_rig(scene, 10)
    return scene, {i: c for i, c in enumerate(cams)}


def test_oracle_matches_give_exact_priors(rig):
    scene, cams = rig
    for s in (1, 3):
        b = synthetic.generate_matches(scene, cams[0], cams[s], 300, seed=s, ref_view=0, src_view=s)
        p = priors.build_pair_priors(cams, b)
        o, d = geometry.pixels_to_rays(cams[0], b.pixel_r)
        t, _ = synthetic.sphere_trace(scene, o, d)
        assert p.valid.all()
        assert np.max(np.abs(p.tri_depth - t)) < 1e-4
        assert np.max(np.abs(p.epi_weight - 0.25)) < 1e-9


def test_self_match_identical_cameras_invalid():
    cams = cams_identity()
    b = MatchBlock(0, 1, [[10.0, 10.0]], [[10.0, 10.0]], [0.0])
    p = priors.triangulated_depth_priors(cams, ViewPairPriors(0, 1, b))
    assert not p.valid[0]


def test_build_all_priors_both_orientations(rig):
    scene, cams = rig
    ms = priors.MatchSet()
    ms.add(synthetic.generate_matches(scene, cams[0], cams[1], 100, seed=0, ref_view=0, src_view=1))
    allp = priors.build_all_priors({0: cams[0], 1: cams[1]}, ms)
    assert set(allp) == {(0, 1), (1, 0)}
    assert allp[(0, 1)].angular_score == pytest.approx(allp[(1, 0)].angular_score, rel=1e-12)
    src = priors.select_all_sources([0, 1], allp, priors.DEFAULT_EPSILON)
    assert src == {0: 1, 1: 0}


def test_default_constants():
    assert priors.DEFAULT_EPSILON == pytest.approx(1 - math.cos(math.radians(10)))
    assert priors.DEFAULT_EPSILON == pytest.approx(0.0152, abs=1e-4)
    assert priors.DEFAULT_GAMMA == 10.0
