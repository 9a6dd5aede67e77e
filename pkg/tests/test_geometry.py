import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from echolocate.geometry import (
    BoundaryPlane,
    Direction,
    RoomScene,
    angle_between,
    direction_of,
    first_order_images,
    floor_path_oracle,
    label_from_normal,
    mirror_point,
    room_boundaries,
    unit_vector,
)
from oracles import floor_angles

coord = st.floats(-50, 50, allow_nan=False)
vectors = st.tuples(coord, coord, coord).map(np.array)
nonzero_vectors = vectors.filter(lambda v: np.linalg.norm(v) > 1e-3)


@st.composite
def planes(draw):
    n = draw(nonzero_vectors)
    return BoundaryPlane(draw(vectors), n)


@st.composite
def scenes(draw):
    dims = np.array([draw(st.floats(3, 10)), draw(st.floats(3, 10)), draw(st.floats(2, 4))])
    frac = st.floats(0.05, 0.95)
    src = dims * np.array([draw(frac) for _ in range(3)])
    arr = dims * np.array([draw(frac) for _ in range(3)])
    assume(math.hypot(*(src - arr)[:2]) > 0.05)
    return RoomScene(dims, src, arr)


class TestDirections:
    @pytest.mark.parametrize(
        "v, az, el",
        [
            ((1, 0, 0), 0.0, 0.0),
            ((0, 0, 1), 0.0, 90.0),
            ((0, 0, -3), 0.0, -90.0),
            ((4, 0, 0.5), 0.0, 7.125016348901757),
            ((0, -1, 0), 270.0, 0.0),
        ],
    )
    def test_direction_of_examples(self, v, az, el):
        d = direction_of(v)
        assert d.azimuth == pytest.approx(az, abs=1e-9)
        assert d.elevation == pytest.approx(el, abs=1e-9)

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            direction_of((0, 0, 0))

    @pytest.mark.parametrize("el", [-90.5, 91.0])
    def test_elevation_range_enforced(self, el):
        with pytest.raises(ValueError):
            Direction(0.0, el)

    def test_azimuth_wraps(self):
        assert Direction(-90.0, 0.0).azimuth == pytest.approx(270.0)
        assert Direction(720.0, 0.0).azimuth == 0.0
        assert 0.0 <= Direction(-1e-17, 0.0).azimuth < 360.0

    @given(nonzero_vectors)
    def test_round_trip(self, v):
        u = v / np.linalg.norm(v)
        d = direction_of(v)
        assert 0.0 <= d.azimuth < 360.0 and -90.0 <= d.elevation <= 90.0
        assert np.allclose(unit_vector(d), u, atol=1e-9)

    @given(st.floats(0, 359.999), st.floats(-89.9, 89.9))
    def test_inverse_round_trip(self, az, el):
        d = direction_of(unit_vector(Direction(az, el)))
        assert angle_between(d, Direction(az, el)) < 1e-6

    def test_angle_between(self):
        assert angle_between((1, 0, 0), (0, 1, 0)) == pytest.approx(90.0)
        assert angle_between(Direction(0, 0), Direction(180, 0)) == pytest.approx(180.0)
        assert angle_between((1, 1, 0), (2, 2, 0)) == pytest.approx(0.0, abs=1e-12)
        assert angle_between((0, 0, 1), (0, math.sin(1e-9), math.cos(1e-9))) == pytest.approx(math.degrees(1e-9), rel=1e-6)


class TestMirror:
    def test_floor_example(self):
        floor = BoundaryPlane((0, 0, -1.5), (0, 0, 1), "floor")
        assert np.allclose(mirror_point((2, 0, 0.5), floor), (2, 0, -3.5))

    def test_point_on_plane_fixed(self):
        plane = BoundaryPlane((1, 2, 3), (1, 1, 0))
        p = np.array([1.0, 2.0, 7.0])
        assert np.allclose(mirror_point(p, plane), p)

    @given(vectors, planes())
    def test_involution(self, p, plane):
        q = mirror_point(mirror_point(p, plane), plane)
        assert np.allclose(q, p, atol=1e-9 * (1 + np.abs(p).max() + np.abs(plane.point).max()))

    @given(vectors, planes())
    def test_midpoint_on_plane_and_offset_along_normal(self, p, plane):
        q = mirror_point(p, plane)
        scale = 1 + np.abs(p).max() + np.abs(plane.point).max()
        assert abs(plane.signed_distance(0.5 * (p + q))) < 1e-9 * scale
        assert np.linalg.norm(np.cross(p - q, plane.normal)) < 1e-9 * scale

    @given(planes())
    def test_plane_invariants(self, plane):
        assert abs(np.linalg.norm(plane.normal) - 1) < 1e-12
        assert plane.distance_to_origin >= 0

    def test_bad_plane(self):
        with pytest.raises(ValueError):
            BoundaryPlane((0, 0, 0), (0, 0, 0))
        with pytest.raises(ValueError):
            BoundaryPlane((0, 0, 0), (0, 0, 1), "roof")


class TestScene:
    def test_positions_must_be_inside(self):
        with pytest.raises(ValueError):
            RoomScene((4, 5, 2.6), (4.5, 1, 1), (1, 1, 1))
        with pytest.raises(ValueError):
            RoomScene((4, 5, 2.6), (1, 1, 0), (1, 1, 1))
        with pytest.raises(ValueError):
            RoomScene((4, 5, 2.6), (1, 1, 1), (1, 1, 1), reflection_coeffs=(0.5,) * 5)

    def test_dict_round_trip(self, reference_scene):
        again = RoomScene.from_dict(reference_scene.to_dict())
        assert again == reference_scene
        assert again.meta == reference_scene.meta

    def test_boundaries_point_inward(self, reference_scene):
        centre = reference_scene.dims / 2
        for plane in room_boundaries(reference_scene):
            assert plane.signed_distance(centre) > 0
            assert plane.signed_distance(reference_scene.source_pos) > 0

    def test_array_frame_boundaries(self, reference_scene):
        planes = {p.label: p for p in room_boundaries(reference_scene, "array")}
        assert planes["floor"].distance_to_origin == pytest.approx(1.5)
        assert planes["ceiling"].distance_to_origin == pytest.approx(1.1)
        assert planes["wall-x"].distance_to_origin == pytest.approx(2.0)
        assert planes["wall+y"].distance_to_origin == pytest.approx(3.0)
        with pytest.raises(ValueError):
            room_boundaries(reference_scene, "world")


class TestFirstOrderImages:
    def test_reference_room(self, reference_scene):
        images = {label: p for p, label in first_order_images(reference_scene)}
        assert np.allclose(images["floor"], (3, 3, -1.5))
        assert np.allclose(images["ceiling"], (3, 3, 3.7))
        assert np.allclose(images["wall-x"], (-3, 3, 1.5))
        assert np.allclose(images["wall+x"], (5, 3, 1.5))
        assert np.allclose(images["wall-y"], (3, -3, 1.5))
        assert np.allclose(images["wall+y"], (3, 7, 1.5))

    def test_cube_centre_equidistant(self):
        scene = RoomScene((4, 4, 4), (2, 2, 2), (1, 1, 1))
        dists = [np.linalg.norm(p - scene.source_pos) for p, _ in first_order_images(scene)]
        assert np.allclose(dists, 4.0)

    @given(scenes())
    @settings(max_examples=50)
    def test_images_outside_room(self, scene):
        images = first_order_images(scene)
        assert len(images) == 6
        for (p, _), plane in zip(images, room_boundaries(scene)):
            assert np.any(p < 0) or np.any(p > scene.dims)
            assert np.allclose(p, mirror_point(scene.source_pos, plane))

    @given(scenes())
    @settings(max_examples=50)
    def test_image_farther_than_boundary(self, scene):
        for (p, _), plane in zip(first_order_images(scene), room_boundaries(scene)):
            assert np.linalg.norm(p - scene.array_pos) >= plane.signed_distance(scene.array_pos) - 1e-12


class TestFloorPathOracle:
    @pytest.mark.parametrize(
        "zs, a1, a2, dt",
        [
            (1.5, 0.0, 56.310, 4.681e-3),
            (2.0, 14.036, 60.255, 5.742e-3),
        ],
    )
    def test_examples(self, zs, a1, a2, dt):
        scene = RoomScene((6, 6, 3), (3.0, 1.0, zs), (1.0, 1.0, 1.5))
        o = floor_path_oracle(scene)
        assert o.alpha1 == pytest.approx(a1, abs=5e-4)
        assert o.alpha2 == pytest.approx(a2, abs=5e-4)
        assert o.dt == pytest.approx(dt, abs=5e-7)
        assert o.h == 1.5

    def test_exact_values(self):
        scene = RoomScene((6, 6, 3), (3.0, 1.0, 1.5), (1.0, 1.0, 1.5))
        o = floor_path_oracle(scene)
        assert o.alpha2 == pytest.approx(math.degrees(math.atan(1.5)), abs=1e-12)
        assert o.dt == pytest.approx((math.sqrt(13) - 2) / 343, abs=1e-15)

    def test_source_near_floor(self):
        scene = RoomScene((6, 6, 3), (3.0, 1.0, 1e-9), (1.0, 1.0, 1.5))
        o = floor_path_oracle(scene)
        assert o.alpha1 == pytest.approx(-o.alpha2, abs=1e-6)
        assert o.dt == pytest.approx(0.0, abs=1e-9)

    @given(scenes())
    def test_matches_independent_trig(self, scene):
        o = floor_path_oracle(scene)
        rel = scene.source_pos - scene.array_pos
        a1, a2, dt = floor_angles(scene.array_pos[2], scene.source_pos[2], math.hypot(rel[0], rel[1]))
        assert o.alpha1 == pytest.approx(a1, abs=1e-9)
        assert o.alpha2 == pytest.approx(a2, abs=1e-9)
        assert o.dt == pytest.approx(dt, abs=1e-12)
        assert o.alpha2 > o.alpha1 and o.alpha2 > 0 and o.dt > 0

    @given(scenes())
    def test_projection_identity(self, scene):
        o = floor_path_oracle(scene)
        d_direct = np.linalg.norm(scene.source_pos - scene.array_pos)
        d_image = d_direct + scene.sound_speed * o.dt
        lhs = d_image * math.cos(math.radians(o.alpha2))
        rhs = d_direct * math.cos(math.radians(o.alpha1))
        assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-12)


@pytest.mark.parametrize(
    "normal, label",
    [((0, 0, 1), "floor"), ((0, 0.2, -1), "ceiling"), ((1, 0, 0), "wall-x"), ((-1, 0.1, 0), "wall+x"),
     ((0, 1, 0.3), "wall-y"), ((0.2, -1, 0), "wall+y")],
)
def test_label_from_normal(normal, label):
    assert label_from_normal(normal) == label
