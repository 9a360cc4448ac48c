import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as nps
from scipy import ndimage

from vcube.assembly import select_input_cameras
from vcube.errors import EmptyDepth, TooFewViews
from vcube.geometry import CameraModel
from vcube.synth_world import SyntheticScene, render_scene
from vcube.view_depth import (FeatureView, HypothesisSet, InputView, ProjectedDepthSet, build_cost_volume,
                              build_per_view_mesh, cost_to_probability, decimate_depth, expected_depth,
                              extract_features, feature_view, fuse_initial_depth, predict_depth, project_meshes,
                              raw_cost_volume)

import oracles

SMALL = CameraModel(60.0, 60.0, 15.5, 11.5, 32, 24)


@pytest.fixture(scope="module")
def plane_setup(spec):
    """Noiseless textured plane seen by the four cameras picked for a face-to-face viewer."""
    scene = SyntheticScene.panel(yaw=0.25, pitch=0.15)
    vp = np.array([0.0, 1.2, -1.0])
    virt = CameraModel.look_at(vp, (0.0, 1.05, 1.0), 1400, 1400, 1280, 960)
    views = []
    for i in select_input_cameras(spec, vp):
        r = render_scene(scene, spec.cameras[i], include_room=False)
        m = r.figure_mask
        views.append(InputView(np.rint(r.color).astype(np.uint8), np.where(m, r.depth, 0.0), m, spec.cameras[i], i))
    truth = render_scene(scene, virt.resampled(4), include_room=False)
    interior = ndimage.binary_erosion(truth.figure_mask, iterations=2)
    return scene, virt, views, truth, interior


# ---------------------------------------------------------------- per-view mesh

def test_constant_plane_mesh_is_watertight():
    m = build_per_view_mesh(np.full(SMALL.shape, 1.5), SMALL)
    assert m.culled == 0
    assert len(m.faces) == 2 * 23 * 31 and len(m.vertices) == 24 * 32


def test_step_edge_quads_are_culled():
    d = np.full(SMALL.shape, 1.0)
    d[:, 16:] = 1.5
    m = build_per_view_mesh(d, SMALL)
    assert m.culled == 2 * 23  # one column of quads straddles the step
    z = m.vertices[m.faces][..., 2]
    assert np.all(z.max(1) - z.min(1) <= 0.05)


def test_empty_depth_raises():
    with pytest.raises(EmptyDepth):
        build_per_view_mesh(np.zeros(SMALL.shape), SMALL)


def _quad_scan(depth, thresh):
    """Brute-force count of kept triangles and of distinct vertices they use."""
    H, W = depth.shape
    kept, used = 0, set()
    for y in range(H - 1):
        for x in range(W - 1):
            a, b, d, e = (y, x), (y, x + 1), (y + 1, x), (y + 1, x + 1)
            for tri in ((a, d, b), (b, d, e)):
                z = [depth[p] for p in tri]
                if min(z) > 0 and max(z) - min(z) <= thresh:
                    kept += 1
                    used.update(tri)
    return kept, len(used)


def test_noisy_sphere_mesh_matches_quad_scan(rng):
    cam = CameraModel.look_at((0.0, 0.0, -1.0), (0.0, 0.0, 0.0), 80.0, 80.0, 40, 30)
    head = SyntheticScene.default(seat=(0.0, 0.0, 0.0), animate=False).parts[0]
    r = render_scene(SyntheticScene((head,)), cam, include_room=False)
    depth = np.where(r.depth > 0, r.depth + rng.normal(0, 0.02, r.depth.shape), 0.0)
    depth[rng.random(depth.shape) < 0.05] = 0.0
    m = build_per_view_mesh(depth, cam)
    kept, nverts = _quad_scan(depth, 0.05)
    assert len(m.faces) == kept and len(m.vertices) == nverts


# ---------------------------------------------------------------- initial fusion

def test_fusion_averages_visible_views():
    d = np.zeros((2, 3, 3))
    d[0] = 1.0
    d[1] = 1.2
    d[1, 0, 0] = 0.0
    fused, union = fuse_initial_depth(ProjectedDepthSet(d))
    assert np.isclose(fused[1, 1], 1.1) and fused[0, 0] == 1.0 and union.all()


def test_fusion_fills_holes_by_diffusion():
    d = np.zeros((1, 5, 5))
    d[0, 0, :] = 2.0
    fused, union = fuse_initial_depth(ProjectedDepthSet(d))
    assert union.sum() == 5 and np.allclose(fused, 2.0)


def test_fused_plane_matches_analytic_depth(plane_setup):
    _, virt, views, truth, interior = plane_setup
    vq = virt.resampled(4)
    meshes, cams = [], []
    for v in views:
        d, c = decimate_depth(v.depth, v.cam)
        meshes.append(build_per_view_mesh(d, c))
        cams.append(c)
    fused, union = fuse_initial_depth(project_meshes(meshes, cams, vq))
    m = interior & union
    assert m.sum() > 1000
    assert np.abs(fused - truth.depth)[m].max() <= 1e-3


def test_projected_masks_follow_positive_depth(plane_setup):
    _, virt, views, _, _ = plane_setup
    d, c = decimate_depth(views[0].depth, views[0].cam)
    p = project_meshes([build_per_view_mesh(d, c)], [c], virt.resampled(4))
    assert np.array_equal(p.masks, p.depths > 0)


# ---------------------------------------------------------------- features

def test_constant_image_has_zero_gradients():
    f = extract_features(np.full((10, 12, 3), 77, np.uint8))
    assert f.shape == (10, 12, 5) and np.all(f[..., 3:] == 0)
    assert np.allclose(f[..., :3], 77 / 255)


def test_vertical_step_peaks_on_edge_column():
    img = np.zeros((10, 12, 3), np.uint8)
    img[:, 6:] = 200
    f = extract_features(img)
    row = f[5, :, 3]
    assert set(np.flatnonzero(row == row.max())) <= {5, 6}
    assert np.all(f[..., 4] == 0)


def test_features_are_shift_equivariant(rng):
    img = rng.integers(0, 256, (30, 40, 3)).astype(np.uint8)
    a = extract_features(img)
    b = extract_features(np.roll(img, (3, 5), axis=(0, 1)))
    assert np.allclose(np.roll(a, (3, 5), axis=(0, 1))[6:-3, 8:-3], b[6:-3, 8:-3], atol=1e-12)


# ---------------------------------------------------------------- hypotheses and cost

def test_hypothesis_range():
    h = HypothesisSet(np.full((2, 2), 1.0), 0.05, 16)
    assert h.offsets[0] == -0.05 and h.offsets[-1] == 0.05
    assert np.allclose(np.diff(h.offsets), h.spacing) and np.isclose(h.spacing, 0.1 / 15)
    with pytest.raises(ValueError):
        HypothesisSet(np.ones((2, 2)), 0.05, 1)


def test_too_few_views():
    fv = FeatureView(np.zeros((24, 32, 5)), np.ones((24, 32), bool), SMALL)
    with pytest.raises(TooFewViews):
        raw_cost_volume([fv], HypothesisSet(np.ones(SMALL.shape)), SMALL)


def test_identical_constant_views_give_zero_cost():
    cams = [CameraModel.look_at((x, 0.0, -1.0), (0.0, 0.0, 0.0), 60.0, 60.0, 32, 24) for x in (-0.1, 0.0, 0.1)]
    views = [FeatureView(extract_features(np.full((24, 32, 3), 120, np.uint8)), np.ones((24, 32), bool), c)
             for c in cams]
    V = build_cost_volume(views, HypothesisSet(np.full((24, 32), 1.0), 0.05, 8), cams[1])
    fin = np.isfinite(V)
    assert fin.any() and np.all(np.abs(V[fin]) <= 1e-24)  # bilinear weights sum to 1 only up to rounding


def test_true_depth_slice_beats_far_slices(plane_setup):
    _, virt, views, truth, interior = plane_setup
    vq = virt.resampled(4)
    hyp = HypothesisSet(np.where(truth.figure_mask, truth.depth, 1.0), 0.05, 17)
    raw = raw_cost_volume([feature_view(v) for v in views], hyp, vq)
    ok = interior & np.isfinite(raw[..., 8])
    wins = (raw[..., 8] < raw[..., 0]) & (raw[..., 8] < raw[..., 16])
    assert wins[ok].mean() >= 0.95


def _bilinear(feat, valid, u, v):
    h, w = valid.shape
    if not (0 <= u <= w - 1 and 0 <= v <= h - 1):
        return None
    x0, y0 = int(np.floor(u)), int(np.floor(v))
    ax, ay = u - x0, v - y0
    acc = np.zeros(feat.shape[2])
    for dy, wy in ((0, 1 - ay), (1, ay)):
        for dx, wx in ((0, 1 - ax), (1, ax)):
            if wy * wx == 0:
                continue
            if not valid[y0 + dy, x0 + dx]:
                return None
            acc += wy * wx * feat[y0 + dy, x0 + dx]
    return acc


def test_cost_matches_bruteforce_with_an_occluded_view(rng):
    virt = CameraModel.look_at((0.0, 0.0, -1.0), (0.0, 0.0, 0.0), 60.0, 60.0, 32, 24)
    cams = [CameraModel.look_at((x, y, -1.0), (0.0, 0.0, 0.0), 60.0, 60.0, 32, 24)
            for x, y in ((-0.15, 0.0), (0.15, 0.05), (0.0, -0.15))]
    views = []
    for k, c in enumerate(cams):
        valid = np.ones((24, 32), bool)
        if k == 2:
            valid[:, :16] = False  # view 2 misses the left half
        views.append(FeatureView(rng.random((24, 32, 5)), valid, c))
    hyp = HypothesisSet(rng.uniform(0.9, 1.1, (24, 32)), 0.05, 5)
    V = raw_cost_volume(views, hyp, virt)
    inv = virt.extrinsics.inverse()
    for _ in range(200):
        y, x, k = rng.integers(24), rng.integers(32), rng.integers(5)
        p = inv.apply(virt.rays_camera_frame(np.array([x, y], float)) * hyp.depths[y, x, k])
        samples = []
        for v in views:
            (u, vv), z = v.cam.project_points(p)
            s = _bilinear(v.features, v.valid, u, vv) if z > 0 else None
            if s is not None:
                samples.append(s)
        ref = oracles.variance_cost(samples) if len(samples) >= 2 else np.inf
        assert V[y, x, k] == pytest.approx(ref, rel=1e-9, abs=1e-12)


# ---------------------------------------------------------------- probability and expectation

def test_equal_costs_give_uniform_probability():
    P = cost_to_probability(np.full((3, 4, 8), 0.7))
    assert np.allclose(P, 1 / 8)


def test_single_finite_cost_is_one_hot():
    V = np.full((1, 1, 6), np.inf)
    V[0, 0, 2] = 0.0
    P = cost_to_probability(V)
    assert P[0, 0].tolist() == [0, 0, 1, 0, 0, 0]


def test_all_infinite_costs_give_uniform():
    assert np.allclose(cost_to_probability(np.full((2, 2, 4), np.inf)), 0.25)


@given(nps.arrays(np.float64, (4, 5, 7), elements=st.one_of(st.floats(0, 10), st.just(np.inf))),
       st.floats(1e-4, 1.0))
def test_probability_normalized_and_nonnegative(V, tau):
    P = cost_to_probability(V, tau)
    assert np.all(P >= 0)
    assert np.abs(P.sum(-1) - 1).max() <= 1e-6


def test_one_hot_gives_hypothesis_depth():
    h = HypothesisSet(np.array([[1.0, 2.0]]), 0.05, 5)
    P = np.zeros((1, 2, 5))
    P[0, 0, 1] = P[0, 1, 4] = 1.0
    assert np.allclose(expected_depth(P, h), [[0.975, 2.05]])


def test_uniform_gives_initial_depth():
    h = HypothesisSet(np.array([[1.0, 2.0]]), 0.05, 16)
    assert np.allclose(expected_depth(np.full((1, 2, 16), 1 / 16), h), h.initial, atol=1e-12)


@given(st.integers(0, 2**31))
def test_expected_depth_within_hypothesis_range(seed):
    r = np.random.default_rng(seed)
    h = HypothesisSet(r.uniform(0.5, 3, (3, 4)), 0.05, 16)
    P = r.random((3, 4, 16)) * 1.3  # not normalized: the clamp must still hold
    d = expected_depth(P, h)
    assert np.all(d >= h.initial - h.delta) and np.all(d <= h.initial + h.delta)


def test_softmin_converges_to_argmin(rng):
    V = np.stack([rng.permutation(12) + rng.uniform(0, 0.25, 12) for _ in range(500)]).reshape(20, 25, 12)
    P = cost_to_probability(V, 1e-4)
    assert np.array_equal(P.argmax(-1), np.array([oracles.argmin_lowest(c) for c in V.reshape(-1, 12)]).reshape(20, 25))


# ---------------------------------------------------------------- full chain

def test_full_chain_is_deterministic(plane_setup):
    _, virt, views, _, _ = plane_setup
    a = predict_depth(views, virt)
    b = predict_depth(views, virt)
    assert a.refined.tobytes() == b.refined.tobytes()


def test_zero_noise_refinement_within_two_spacings(plane_setup):
    _, virt, views, truth, interior = plane_setup
    res = predict_depth(views, virt)
    m = interior & res.union
    spacing = res.hypotheses.spacing
    assert np.mean(np.abs(res.refined - truth.depth)[m] <= 2 * spacing) >= 0.95


def test_refined_cost_volume_nonnegative(plane_setup):
    _, virt, views, _, _ = plane_setup
    res = predict_depth(views, virt)
    fin = np.isfinite(res.cost)
    assert np.all(res.cost[fin] >= 0)
    defined = fin.any(-1)
    assert np.abs(res.prob.sum(-1) - 1)[defined].max() <= 1e-6
