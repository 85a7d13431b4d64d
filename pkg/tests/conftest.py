import hypothesis
import numpy as np
import pytest

from mocapkit.cameras import Camera, CameraExtrinsics, CameraIntrinsics, CameraRig

hypothesis.settings.register_profile(
    "default", max_examples=50, deadline=None,
    suppress_health_check=[hypothesis.HealthCheck.too_slow],
)
hypothesis.settings.load_profile("default")


@pytest.fixture
def unit_rig():
    """Two unit-focal cameras: A at the origin, B shifted one unit left."""
    intr = CameraIntrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0, width=1, height=1)
    return CameraRig(cameras=[
        Camera("A", intr, CameraExtrinsics()),
        Camera("B", intr, CameraExtrinsics(tvec=[-1.0, 0.0, 0.0])),
    ], unit_scale=1000.0)


@pytest.fixture
def webcam_intrinsics():
    return CameraIntrinsics(fx=1000.0, fy=1000.0, cx=640.0, cy=360.0,
                            dist=[0.1, 0.0, 0.0, 0.0, 0.0],
                            width=1280, height=720)


def random_rotvec(rng, max_angle=np.pi - 1e-6):
    v = rng.normal(size=3)
    v /= np.linalg.norm(v)
    return v * rng.uniform(0.0, max_angle)
