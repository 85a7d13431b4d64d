"""Camera model: every expected value below is hand-computed.

Distortion example: fx=fy=1000, cx=640, cy=360, k1=0.1, point (0.2,0,1):
normalised x=0.2, r2=0.04, radial = 1 + 0.1*0.04 = 1.004,
u = 1000 * 0.2 * 1.004 + 640 = 840.8.
"""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_rotvec
from mocapkit.cameras import (
    CameraExtrinsics,
    CameraIntrinsics,
    camera_depth,
    project_point,
    rodrigues,
    rotvec_from_matrix,
    undistort_point,
)
from mocapkit.errors import NonPositiveDepth, ValidationError


class TestRodrigues:
    def test_zero_vector_is_identity(self):
        assert np.allclose(rodrigues([0.0, 0.0, 0.0]), np.eye(3))

    def test_half_turn_about_z(self):
        assert np.allclose(rodrigues([0.0, 0.0, np.pi]), np.diag([-1.0, -1.0, 1.0]),
                           atol=1e-12)

    def test_roundtrip_random(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            v = random_rotvec(rng)
            assert np.abs(rotvec_from_matrix(rodrigues(v)) - v).max() < 1e-10

    @given(st.integers(0, 2**32 - 1))
    def test_orthonormal_det_plus_one(self, seed):
        rng = np.random.default_rng(seed)
        R = rodrigues(rng.normal(scale=2.0, size=3))
        assert np.abs(R.T @ R - np.eye(3)).max() < 1e-10
        assert abs(np.linalg.det(R) - 1.0) < 1e-10


class TestProjectPoint:
    def test_optical_axis(self):
        intr = CameraIntrinsics(fx=1, fy=1, cx=0, cy=0, width=1, height=1)
        assert np.allclose(project_point(intr, CameraExtrinsics(), (0, 0, 1)), (0, 0))

    def test_linear_pinhole(self):
        intr = CameraIntrinsics(fx=1000, fy=1000, cx=640, cy=360, width=1280, height=720)
        px = project_point(intr, CameraExtrinsics(), (0.1, 0, 1))
        assert np.allclose(px, (740.0, 360.0))

    def test_radial_distortion(self, webcam_intrinsics):
        px = project_point(webcam_intrinsics, CameraExtrinsics(), (0.2, 0, 1))
        assert np.allclose(px, (840.8, 360.0), atol=1e-9)

    def test_behind_camera_raises(self):
        intr = CameraIntrinsics(fx=1, fy=1, cx=0, cy=0, width=1, height=1)
        with pytest.raises(NonPositiveDepth):
            project_point(intr, CameraExtrinsics(), (0, 0, -1))

    def test_rigid_equivariance(self):
        # moving world point and camera pose by the same rigid map leaves
        # the pixel unchanged
        rng = np.random.default_rng(7)
        intr = CameraIntrinsics(fx=900, fy=910, cx=630, cy=350,
                                dist=[-0.1, 0.02, 1e-3, -2e-3, 0.01],
                                width=1280, height=720)
        for _ in range(40):
            extr = CameraExtrinsics(rotvec=random_rotvec(rng, 1.0),
                                    tvec=rng.normal(size=3))
            R_c, t_c = rodrigues(extr.rotvec), extr.tvec
            # sample a point the camera actually sees (bounded view angle)
            xy = rng.uniform(-0.5, 0.5, 2)
            z = rng.uniform(0.5, 3.0)
            pt = R_c.T @ (np.array([xy[0] * z, xy[1] * z, z]) - t_c)
            g_R = rodrigues(random_rotvec(rng, 1.0))
            g_t = rng.normal(size=3)
            pt2 = g_R @ pt + g_t
            R2 = R_c @ g_R.T
            extr2 = CameraExtrinsics(rotvec=rotvec_from_matrix(R2),
                                     tvec=t_c - R2 @ g_t)
            a = project_point(intr, extr, pt)
            b = project_point(intr, extr2, pt2)
            assert np.abs(a - b).max() < 1e-9


class TestUndistort:
    def test_zero_distortion_linear_inverse(self):
        intr = CameraIntrinsics(fx=1000, fy=1000, cx=640, cy=360, width=1280, height=720)
        assert np.allclose(undistort_point(intr, (740, 360)), (0.1, 0.0))

    def test_inverts_known_distortion(self, webcam_intrinsics):
        assert np.allclose(undistort_point(webcam_intrinsics, (840.8, 360.0)),
                           (0.2, 0.0), atol=1e-6)

    def test_roundtrip_inside_half_radius(self):
        intr = CameraIntrinsics(fx=800, fy=820, cx=640, cy=360,
                                dist=[-0.2, 0.05, 1e-3, -1e-3, 0.01],
                                width=1280, height=720)
        rng = np.random.default_rng(3)
        for _ in range(50):
            xy = rng.uniform(-0.5, 0.5, 2)
            if np.linalg.norm(xy) >= 0.5:
                continue
            px = project_point(intr, CameraExtrinsics(), (*xy, 1.0))
            back = undistort_point(intr, px)
            assert np.abs(back - xy).max() < 1e-8

    def test_project_undistort_reproject_identity(self):
        intr = CameraIntrinsics(fx=950, fy=940, cx=630, cy=355,
                                dist=[-0.15, 0.03, 5e-4, -6e-4, 0.004],
                                width=1280, height=720)
        rng = np.random.default_rng(11)
        for _ in range(50):
            z = rng.uniform(0.1, 10.0)
            xy = rng.uniform(-0.45, 0.45, 2)
            px = project_point(intr, CameraExtrinsics(), (xy[0] * z, xy[1] * z, z))
            norm = undistort_point(intr, px)
            px2 = project_point(intr, CameraExtrinsics(), (*norm, 1.0))
            assert np.abs(px2 - px).max() < 1e-6


class TestCameraDepth:
    def test_identity(self):
        assert camera_depth(CameraExtrinsics(), (0, 0, 2)) == pytest.approx(2.0)

    def test_translation(self):
        assert camera_depth(CameraExtrinsics(tvec=[0, 0, -1]), (0, 0, 2)) == pytest.approx(1.0)

    def test_half_turn_sign_flip(self):
        extr = CameraExtrinsics(rotvec=[0, np.pi, 0])
        assert camera_depth(extr, (0, 0, 2)) == pytest.approx(-2.0)


class TestInvariants:
    def test_intrinsics_validation(self):
        with pytest.raises(ValidationError):
            CameraIntrinsics(fx=-1, fy=1, cx=0, cy=0, width=10, height=10)
        with pytest.raises(ValidationError):
            CameraIntrinsics(fx=1, fy=1, cx=20, cy=0, width=10, height=10)
        with pytest.raises(ValidationError):
            CameraIntrinsics(fx=1, fy=1, cx=0, cy=0, width=10, height=10,
                             dist=[0.0, 0.0, 0.0])
