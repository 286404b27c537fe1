"""Geometry tests: hand-computed cases plus seeded round-trip and raster oracles."""

import math

import numpy as np
import pytest

from mono3dt.geometry import (
    Box2D,
    Box3D,
    BoxBehindCamera,
    CameraIntrinsics,
    CameraPose,
    GeometryError,
    NonPositiveDepth,
    PointBehindCamera,
    alpha_to_theta,
    backproject,
    bev_intersection_area,
    box3d_corners,
    camera_heading,
    iou_2d,
    iou_3d,
    normalize_angle,
    project_box,
    project_point,
    theta_to_alpha,
)

from conftest import (
    default_intrinsics,
    monte_carlo_iou_3d,
    random_pose,
    raster_bev_intersection,
    raster_iou_2d,
)


def simple_intrinsics(f=100.0):
    # principal point at the corner keeps the trivial cases literal
    return CameraIntrinsics(f, f, 0.0, 0.0, 2000.0, 2000.0)


class TestProjection:
    def test_principal_ray_point(self):
        pix, depth = project_point([0, 0, 10], CameraPose.identity(), simple_intrinsics())
        assert np.allclose(pix, [0.0, 0.0])
        assert depth == pytest.approx(10.0)

    def test_offset_point(self):
        pix, depth = project_point([1, 0, 10], CameraPose.identity(), simple_intrinsics())
        assert np.allclose(pix, [10.0, 0.0])
        assert depth == pytest.approx(10.0)

    def test_point_behind_camera(self):
        with pytest.raises(PointBehindCamera):
            project_point([0, 0, -1.0], CameraPose.identity(), simple_intrinsics())

    def test_round_trip_seeded(self):
        rng = np.random.default_rng(7)
        intr = default_intrinsics()
        for _ in range(1000):
            pose = random_pose(rng)
            p_cam = np.array([rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(0.5, 80)])
            p_world = pose.camera_to_world(p_cam)
            pix, depth = project_point(p_world, pose, intr)
            back = backproject(pix, depth, pose, intr)
            assert np.max(np.abs(back - p_world)) < 1e-6


class TestBackprojection:
    def test_optical_axis(self):
        intr = simple_intrinsics()
        p = backproject([0, 0], 5.0, CameraPose.identity(), intr)
        assert np.allclose(p, [0, 0, 5])

    def test_inverse_of_projection_example(self):
        p = backproject([10, 0], 10.0, CameraPose.identity(), simple_intrinsics())
        assert np.allclose(p, [1, 0, 10])

    def test_nonpositive_depth(self):
        with pytest.raises(NonPositiveDepth):
            backproject([0, 0], 0.0, CameraPose.identity(), simple_intrinsics())


class TestOrientationConversion:
    def test_zero_at_image_center(self):
        intr = default_intrinsics()
        assert alpha_to_theta(0.0, intr.image_width / 2.0, intr) == pytest.approx(0.0)

    def test_quarter_turn_offset(self):
        intr = default_intrinsics()
        # x_hat equal to the focal length contributes arctan(1) = pi/4
        x_c = intr.image_width / 2.0 + intr.focal_x
        assert alpha_to_theta(math.pi / 2.0, x_c, intr) == pytest.approx(3 * math.pi / 4)
        assert theta_to_alpha(3 * math.pi / 4, x_c, intr) == pytest.approx(math.pi / 2)

    def test_round_trip_seeded(self):
        rng = np.random.default_rng(11)
        intr = default_intrinsics()
        for _ in range(1000):
            theta_l = rng.uniform(0, 2 * math.pi)
            x_c = rng.uniform(0, intr.image_width)
            theta = alpha_to_theta(theta_l, x_c, intr)
            assert 0.0 <= theta < 2 * math.pi
            back = theta_to_alpha(theta, x_c, intr)
            diff = abs(normalize_angle(back - theta_l))
            assert min(diff, 2 * math.pi - diff) < 1e-9


class TestBoxCorners:
    def test_unit_cube(self):
        corners = box3d_corners(Box3D([0, 0, 0], [1, 1, 1], 0.0))
        expected = {(sx / 2, sy / 2, sz / 2) for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)}
        got = {tuple(np.round(c, 12)) for c in corners}
        assert got == expected

    def test_quarter_turn_maps_corner(self):
        box = Box3D([0, 0, 0], [2, 1, 1], math.pi / 2)
        corners = box3d_corners(box)
        # the (l/2, w/2, .) offset rotates onto (-w/2, l/2, .)
        assert any(np.allclose(c[:2], [-0.5, 1.0]) for c in corners)

    def test_edge_lengths_match_dimensions(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            dims = rng.uniform(0.5, 6.0, size=3)
            box = Box3D(rng.normal(size=3), dims, rng.uniform(0, 2 * math.pi))
            corners = box3d_corners(box)
            assert np.max(np.abs(corners.mean(axis=0) - box.center)) < 1e-9
            # 12 edges: bottom ring, top ring, verticals
            ring = [(0, 1), (1, 2), (2, 3), (3, 0)]
            edges = []
            for i, j in ring:
                edges.append(np.linalg.norm(corners[i] - corners[j]))
                edges.append(np.linalg.norm(corners[i + 4] - corners[j + 4]))
            for i in range(4):
                edges.append(np.linalg.norm(corners[i] - corners[i + 4]))
            expected = sorted([dims[0]] * 4 + [dims[1]] * 4 + [dims[2]] * 4)
            assert np.allclose(sorted(edges), expected, atol=1e-9)
            # volume from edge lengths
            l = np.linalg.norm(corners[0] - corners[3])
            w = np.linalg.norm(corners[0] - corners[1])
            h = np.linalg.norm(corners[0] - corners[4])
            assert abs(l * w * h - box.volume) < 1e-9


class TestProjectBox:
    def test_symmetric_about_principal_point(self):
        intr = default_intrinsics()
        box = Box3D([0, 0, 20], [2, 2, 2], 0.0)
        b = project_box(box, CameraPose.identity(), intr)
        cx, cy = b.center
        assert cx == pytest.approx(intr.principal_x)
        assert cy == pytest.approx(intr.principal_y)

    def test_clipped_to_image(self):
        intr = default_intrinsics()
        # large nearby box spills past the image border
        box = Box3D([0, 0, 3], [20, 20, 2], 0.0)
        b = project_box(box, CameraPose.identity(), intr)
        assert b.x_min >= 0.0 and b.y_min >= 0.0
        assert b.x_max <= intr.image_width and b.y_max <= intr.image_height

    def test_all_corners_behind(self):
        with pytest.raises(BoxBehindCamera):
            project_box(Box3D([0, 0, -10], [1, 1, 1], 0.0), CameraPose.identity(), default_intrinsics())

    def test_hull_matches_cornerwise_projection(self):
        rng = np.random.default_rng(5)
        intr = default_intrinsics()
        done = 0
        while done < 200:
            pose = random_pose(rng)
            center = pose.camera_to_world([rng.uniform(-8, 8), rng.uniform(-4, 4), rng.uniform(8, 60)])
            box = Box3D(center, rng.uniform(0.5, 4.0, size=3), rng.uniform(0, 2 * math.pi))
            corners = box3d_corners(box)
            pix = []
            behind = False
            for c in corners:
                try:
                    p, _ = project_point(c, pose, intr)
                except PointBehindCamera:
                    behind = True
                    break
                pix.append(p)
            if behind:
                continue
            pix = np.array(pix)
            expected = Box2D(
                min(max(pix[:, 0].min(), 0), intr.image_width),
                min(max(pix[:, 1].min(), 0), intr.image_height),
                min(max(pix[:, 0].max(), 0), intr.image_width),
                min(max(pix[:, 1].max(), 0), intr.image_height),
            )
            got = project_box(box, pose, intr)
            assert np.allclose(got.as_tuple(), expected.as_tuple(), atol=1e-9)
            done += 1


class TestIou2d:
    def test_identical(self):
        b = Box2D(1, 2, 5, 9)
        assert iou_2d(b, b) == pytest.approx(1.0)

    def test_disjoint(self):
        assert iou_2d(Box2D(0, 0, 1, 1), Box2D(2, 2, 3, 3)) == 0.0

    def test_one_third_overlap(self):
        a = Box2D(0, 0, 2, 2)
        b = Box2D(1, 0, 3, 2)
        assert iou_2d(a, b) == pytest.approx(1.0 / 3.0)
        assert raster_iou_2d(a, b) == pytest.approx(1.0 / 3.0, abs=1e-2)

    def test_symmetry_and_bounds_seeded(self):
        rng = np.random.default_rng(13)
        for _ in range(200):
            x0, x1 = sorted(rng.uniform(0, 10, 2))
            y0, y1 = sorted(rng.uniform(0, 10, 2))
            u0, u1 = sorted(rng.uniform(0, 10, 2))
            v0, v1 = sorted(rng.uniform(0, 10, 2))
            a = Box2D(x0, y0, x1, y1)
            b = Box2D(u0, v0, u1, v1)
            val = iou_2d(a, b)
            assert 0.0 <= val <= 1.0
            assert val == pytest.approx(iou_2d(b, a), abs=0)


class TestBevIntersection:
    def test_coincident(self):
        box = Box3D([1, 2, 0], [4, 2, 1.5], 0.7)
        assert bev_intersection_area(box, box) == pytest.approx(8.0, abs=1e-9)

    def test_square_quarter_turn(self):
        a = Box3D([0, 0, 0], [2, 2, 1], 0.0)
        b = Box3D([0, 0, 0], [2, 2, 1], math.pi / 2)
        assert bev_intersection_area(a, b) == pytest.approx(4.0, abs=1e-9)

    def test_against_raster_oracle(self):
        rng = np.random.default_rng(17)
        for _ in range(40):
            a = Box3D(
                [rng.uniform(-2, 2), rng.uniform(-2, 2), 0],
                [rng.uniform(1, 5), rng.uniform(1, 5), 1.0],
                rng.uniform(0, 2 * math.pi),
            )
            b = Box3D(
                [rng.uniform(-2, 2), rng.uniform(-2, 2), 0],
                [rng.uniform(1, 5), rng.uniform(1, 5), 1.0],
                rng.uniform(0, 2 * math.pi),
            )
            got = bev_intersection_area(a, b)
            ref = raster_bev_intersection(a, b)
            assert got == pytest.approx(bev_intersection_area(b, a), abs=1e-9)
            scale = max(ref, 1e-3)
            assert abs(got - ref) / scale < 2e-2  # raster oracle resolution limit

    def test_rigid_transform_invariance(self):
        rng = np.random.default_rng(19)
        for _ in range(50):
            a = Box3D(rng.uniform(-3, 3, 3), rng.uniform(1, 4, 3), rng.uniform(0, 2 * math.pi))
            b = Box3D(rng.uniform(-3, 3, 3), rng.uniform(1, 4, 3), rng.uniform(0, 2 * math.pi))
            base = bev_intersection_area(a, b)
            phi = rng.uniform(0, 2 * math.pi)
            shift = rng.uniform(-10, 10, 2)
            c, s = math.cos(phi), math.sin(phi)
            rot = np.array([[c, -s], [s, c]])

            def moved(box):
                new_xy = rot @ box.center[:2] + shift
                return Box3D(
                    [new_xy[0], new_xy[1], box.center[2]], box.dimensions, box.yaw + phi
                )

            assert abs(bev_intersection_area(moved(a), moved(b)) - base) < 1e-9


class TestIou3d:
    def test_identical(self):
        box = Box3D([3, -1, 2], [4.2, 1.8, 1.5], 1.1)
        assert iou_3d(box, box) == pytest.approx(1.0)

    def test_far_apart(self):
        a = Box3D([0, 0, 0], [1, 1, 1], 0.3)
        b = Box3D([100, 0, 0], [1, 1, 1], 1.2)
        assert iou_3d(a, b) == 0.0

    def test_axis_aligned_offset_cubes(self):
        a = Box3D([0, 0, 0], [1, 1, 1], 0.0)
        b = Box3D([0.5, 0, 0], [1, 1, 1], 0.0)
        assert iou_3d(a, b) == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_against_monte_carlo(self, mc_samples):
        rng = np.random.default_rng(23)
        for _ in range(60):
            a = Box3D(
                [rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-0.5, 0.5)],
                rng.uniform(0.8, 4.0, 3),
                rng.uniform(0, 2 * math.pi),
            )
            b = Box3D(
                [rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-0.5, 0.5)],
                rng.uniform(0.8, 4.0, 3),
                rng.uniform(0, 2 * math.pi),
            )
            got = iou_3d(a, b)
            assert 0.0 <= got <= 1.0
            assert got == pytest.approx(iou_3d(b, a), abs=1e-12)
            assert abs(got - monte_carlo_iou_3d(a, b, mc_samples)) < 1e-2


class TestCameraHeading:
    def test_heading_round_trip(self):
        rng = np.random.default_rng(29)
        for _ in range(50):
            psi = rng.uniform(0, 2 * math.pi)
            f = np.array([math.cos(psi), math.sin(psi), 0.0])
            right = np.array([math.sin(psi), -math.cos(psi), 0.0])
            down = np.array([0.0, 0.0, -1.0])
            rot = np.stack([right, down, f])
            pose = CameraPose(rot, rng.normal(size=3))
            assert abs(normalize_angle(camera_heading(pose) - psi)) < 1e-9 or (
                abs(normalize_angle(camera_heading(pose) - psi) - 2 * math.pi) < 1e-9
            )


class TestValidation:
    def test_bad_intrinsics(self):
        with pytest.raises(GeometryError):
            CameraIntrinsics(-1, 100, 0, 0, 100, 100)

    def test_bad_rotation(self):
        with pytest.raises(GeometryError):
            CameraPose(np.eye(3) * 2.0, np.zeros(3))

    def test_bad_box(self):
        with pytest.raises(GeometryError):
            Box3D([0, 0, 0], [0, 1, 1], 0.0)
        with pytest.raises(GeometryError):
            Box2D(1, 0, 0, 1)

    def test_yaw_normalized(self):
        assert Box3D([0, 0, 0], [1, 1, 1], -math.pi).yaw == pytest.approx(math.pi)
        assert 0.0 <= Box3D([0, 0, 0], [1, 1, 1], 7 * math.pi).yaw < 2 * math.pi
