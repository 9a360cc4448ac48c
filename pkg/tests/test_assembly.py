import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as nps

from vcube.assembly import (AssemblyLayout, CubeSpec, PlacedCube, camera_angles, cube_to_global,
                            global_footprint, global_to_cube, select_input_cameras, validate_layout,
                            viewpoint_transfer)
from vcube.errors import UnknownCube
from vcube.geometry import RigidTransform

import oracles

points = nps.arrays(np.float64, 3, elements=st.floats(-3.0, 3.0))


def single(T, spec):
    return AssemblyLayout((PlacedCube(0, spec, T),))


def test_identity_placement_leaves_points(spec):
    lay = single(RigidTransform.identity(), spec)
    assert np.array_equal(cube_to_global(lay, 0, [0.3, 1.0, 0.2]), [0.3, 1.0, 0.2])


def test_half_turn_plus_shift(spec):
    T = RigidTransform.from_yaw(math.pi, (2.0, 0.0, 0.0))
    lay = single(T, spec)
    got = cube_to_global(lay, 0, [0.0, 1.0, 0.5])
    ref = oracles.apply_homogeneous(oracles.homogeneous(oracles.yaw_matrix(math.pi), [2.0, 0.0, 0.0]), [0.0, 1.0, 0.5])
    assert np.allclose(got, ref, atol=1e-12)
    assert np.allclose(got, [2.0, 1.0, -0.5], atol=1e-12)


def test_unknown_cube_raises(face_layout):
    with pytest.raises(UnknownCube):
        cube_to_global(face_layout, 7, [0, 0, 0])
    with pytest.raises(UnknownCube):
        viewpoint_transfer(face_layout, 0, 9, [0, 0, 0])


def test_face_to_face_seats_outside_opposite_footprint(face_layout):
    for a, b in ((0, 1), (1, 0)):
        seat = cube_to_global(face_layout, a, face_layout.cube(a).spec.seat)
        poly = global_footprint(face_layout.cube(b))
        assert not oracles.point_in_polygon(seat[[0, 2]], poly)


def test_transfer_to_self_is_identity(face_layout):
    p = np.array([0.1, 1.3, 0.9])
    assert np.allclose(viewpoint_transfer(face_layout, 0, 0, p), p, atol=0)


def test_face_to_face_transfer_lands_in_front_of_sender_screen(face_layout):
    seat = face_layout.cube(0).spec.seat
    got = viewpoint_transfer(face_layout, 1, 0, seat)
    # receiver at identity, sender at a half turn: hand-built M_s^-1 M_r
    ms = oracles.homogeneous(oracles.yaw_matrix(math.pi), [0.0, 0.0, 0.0])
    inv = oracles.homogeneous(ms[:3, :3].T, [0.0, 0.0, 0.0])
    ref = oracles.apply_homogeneous(inv, seat)
    assert np.allclose(got, ref, atol=1e-12)
    assert got[2] < 0  # behind the sender's front wall, i.e. in the remote room
    assert np.allclose(got, [0.0, 1.2, -1.0], atol=1e-12)


@pytest.mark.parametrize("topology", ["face-to-face", "round-table", "side-by-side"])
@given(p=points)
def test_transfer_round_trip(topology, p):
    lay = AssemblyLayout.build(topology)
    a, b = lay.ids[0], lay.ids[1]
    back = viewpoint_transfer(lay, b, a, viewpoint_transfer(lay, a, b, p))
    assert np.abs(back - p).max() <= 1e-9
    assert np.abs(global_to_cube(lay, b, cube_to_global(lay, b, p)) - p).max() <= 1e-9


def test_camera_at_viewpoint_ranks_first(spec):
    for i, cam in enumerate(spec.cameras):
        assert select_input_cameras(spec, cam.center)[0] == i


def test_symmetric_viewpoint_gives_mirrored_selection(spec):
    mirror = {0: 2, 1: 1, 2: 0, 3: 5, 4: 4, 5: 3}
    ang = camera_angles(spec, (0.0, 1.3, -1.0))
    for a, b in mirror.items():
        assert abs(ang[a] - ang[b]) < 1e-12
    sel = set(select_input_cameras(spec, (0.0, 1.3, -1.0)))
    assert {mirror[i] for i in sel} == sel


def test_selection_matches_bruteforce_sort(spec, rng):
    centers = [c.center for c in spec.cameras]
    for _ in range(100):
        vp = rng.uniform([-1.0, 0.5, -2.5], [1.0, 2.0, -0.3])
        assert select_input_cameras(spec, vp) == oracles.camera_order_bruteforce(centers, spec.seat, vp)


def test_selection_independent_of_camera_listing_order(spec, rng):
    perm = rng.permutation(6)
    shuffled = CubeSpec(spec.screens, [spec.cameras[i] for i in perm], spec.seat)
    for _ in range(20):
        vp = rng.uniform([-1.0, 0.5, -2.5], [1.0, 2.0, -0.3])
        a = [int(perm[i]) for i in select_input_cameras(shuffled, vp, 6)]
        b = select_input_cameras(spec, vp, 6)
        # same angular ordering; ties resolved by id within each list
        ang = camera_angles(spec, vp)
        assert np.allclose(np.sort(ang[a]), ang[b], atol=1e-12)


def test_disjoint_cubes_are_valid(spec):
    lay = AssemblyLayout((PlacedCube(0, spec, RigidTransform.identity()),
                          PlacedCube(1, spec, RigidTransform(np.eye(3), (5.0, 0.0, 0.0)))))
    assert validate_layout(lay) == []


def test_coincident_cubes_flag_seat_overlap(spec):
    lay = AssemblyLayout((PlacedCube(0, spec, RigidTransform.identity()),
                          PlacedCube(1, spec, RigidTransform.identity())))
    rules = {(v.rule, v.cube_a, v.cube_b) for v in validate_layout(lay)}
    assert ("seat-overlap", 0, 1) in rules and ("seat-overlap", 1, 0) in rules


def test_side_by_side_overlap_is_valid():
    lay = AssemblyLayout.side_by_side(0.4)
    a, b = lay.cube(0), lay.cube(1)
    pa, pb = global_footprint(a), global_footprint(b)
    assert pa[:, 0].max() > pb[:, 0].min()  # footprints do overlap
    for x, other in ((a, b), (b, a)):
        seat = x.to_global.apply(x.spec.seat)[[0, 2]]
        assert not oracles.point_in_polygon(seat, global_footprint(other))
    assert validate_layout(lay) == []


def test_tilted_or_lifted_cubes_are_invalid(spec):
    tilt = RigidTransform.from_rotvec((0.1, 0.0, 0.0), (5.0, 0.0, 0.0))
    lift = RigidTransform(np.eye(3), (5.0, 0.3, 0.0))
    for T, rule in ((tilt, "floor-yaw-only"), (lift, "floor-shared")):
        lay = AssemblyLayout((PlacedCube(0, spec, RigidTransform.identity()), PlacedCube(1, spec, T)))
        assert rule in {v.rule for v in validate_layout(lay)}


def test_default_topologies_are_valid():
    for t in ("face-to-face", "round-table", "side-by-side"):
        assert validate_layout(AssemblyLayout.build(t)) == []


def test_cube_spec_invariants(spec):
    hw = spec.floor_width / 2
    assert -hw < spec.seat[0] < hw and 0 < spec.seat[2] < spec.floor_depth
    for cam in spec.cameras:
        assert cam.optical_axis @ (spec.seat - cam.center) > 0
    front = spec.screens["front"]
    assert abs(front.bottom_left[1] - 0.7) < 1e-12


def test_cube_spec_dict_round_trip(spec):
    back = CubeSpec.from_dict(spec.to_dict())
    assert np.array_equal(back.seat, spec.seat)
    for a, b in zip(back.cameras, spec.cameras):
        assert np.array_equal(a.P, b.P)
