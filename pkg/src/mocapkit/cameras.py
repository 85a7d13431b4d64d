"""Pinhole camera model with 5-coefficient radial/tangential distortion.

Conventions used throughout the package:

World -> camera:   X_cam = R @ X_world + t
Rotation storage:  axis-angle vector (radians); R = rodrigues(rotvec)
Projection:        perspective divide, then distortion, then pixels
                     x = X_cam.x / X_cam.z,  y = X_cam.y / X_cam.z
                     r2 = x^2 + y^2
                     radial = 1 + k1 r2 + k2 r2^2 + k3 r2^3
                     xd = x*radial + 2 p1 x y + p2 (r2 + 2 x^2)
                     yd = y*radial + p1 (r2 + 2 y^2) + 2 p2 x y
                     u = fx*xd + cx,  v = fy*yd + cy
Image frame:       origin top-left, u right, v down, units pixels.

Distortion coefficients are ordered [k1, k2, p1, p2, k3]; files with any
other coefficient count are rejected rather than coerced.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoConvergence, NonPositiveDepth, ValidationError

_EPS_ROT = 1e-12


def _as_vec(x, n, name) -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(-1)
    if v.shape != (n,):
        raise ValidationError(f"{name} must have {n} components, got shape {np.shape(x)}")
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"{name} contains non-finite values")
    return v


@dataclass
class CameraIntrinsics:
    """Focal lengths/principal point in pixels plus [k1,k2,p1,p2,k3] distortion."""

    fx: float
    fy: float
    cx: float
    cy: float
    dist: np.ndarray = field(default_factory=lambda: np.zeros(5))
    width: int = 1920
    height: int = 1080

    def __post_init__(self):
        self.dist = _as_vec(self.dist, 5, "dist")
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"focal lengths must be positive (fx={self.fx}, fy={self.fy})")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError(
                f"principal point ({self.cx}, {self.cy}) outside sensor "
                f"{self.width}x{self.height}"
            )

    @property
    def f_mean(self) -> float:
        return 0.5 * (self.fx + self.fy)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass
class CameraExtrinsics:
    """World->camera pose: X_cam = R(rotvec) @ X_world + tvec."""

    rotvec: np.ndarray = field(default_factory=lambda: np.zeros(3))
    tvec: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotvec = _as_vec(self.rotvec, 3, "rotvec")
        self.tvec = _as_vec(self.tvec, 3, "tvec")

    def rotation(self) -> np.ndarray:
        return rodrigues(self.rotvec)

    def center(self) -> np.ndarray:
        """Camera center in world coordinates (-R^T t)."""
        return -self.rotation().T @ self.tvec


@dataclass
class Camera:
    name: str
    intrinsics: CameraIntrinsics
    extrinsics: CameraExtrinsics


@dataclass
class CameraRig:
    """Ordered calibrated cameras; camera 0 is the reference frame.

    unit_scale converts world units to millimetres (e.g. 1000.0 when the
    world unit is metres, 1.0 when calibration was done in millimetres).
    """

    cameras: list[Camera]
    unit_scale: float = 1.0

    def __post_init__(self):
        names = [c.name for c in self.cameras]
        if len(set(names)) != len(names):
            raise ValidationError(f"camera names not unique: {names}")
        if self.unit_scale <= 0:
            raise ValidationError("unit_scale must be positive")

    def __len__(self) -> int:
        return len(self.cameras)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.cameras]

    def camera(self, name: str) -> Camera:
        for c in self.cameras:
            if c.name == name:
                return c
        raise KeyError(name)


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(v) @ p == v x p."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def rodrigues(rotvec) -> np.ndarray:
    """Axis-angle vector -> 3x3 rotation matrix. The zero vector maps to I."""
    v = _as_vec(rotvec, 3, "rotvec")
    theta = float(np.linalg.norm(v))
    if theta < _EPS_ROT:
        return np.eye(3)
    k = skew(v / theta)
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def rodrigues_many(rotvecs: np.ndarray) -> np.ndarray:
    """Vectorised rodrigues: (n,3) rotation vectors -> (n,3,3) matrices."""
    v = np.asarray(rotvecs, dtype=float).reshape(-1, 3)
    n = v.shape[0]
    theta = np.linalg.norm(v, axis=1)
    out = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    nz = theta >= _EPS_ROT
    if np.any(nz):
        axis = v[nz] / theta[nz, None]
        k = np.zeros((nz.sum(), 3, 3))
        k[:, 0, 1] = -axis[:, 2]
        k[:, 0, 2] = axis[:, 1]
        k[:, 1, 0] = axis[:, 2]
        k[:, 1, 2] = -axis[:, 0]
        k[:, 2, 0] = -axis[:, 1]
        k[:, 2, 1] = axis[:, 0]
        s = np.sin(theta[nz])[:, None, None]
        c = (1.0 - np.cos(theta[nz]))[:, None, None]
        out[nz] = np.eye(3) + s * k + c * (k @ k)
    return out


def rotvec_from_matrix(R: np.ndarray) -> np.ndarray:
    """Inverse of rodrigues, via quaternion extraction (stable near pi).

    Returns the canonical vector with norm in [0, pi].
    """
    R = np.asarray(R, dtype=float)
    # largest-pivot quaternion extraction
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([
            0.25 * s,
            (R[2, 1] - R[1, 2]) / s,
            (R[0, 2] - R[2, 0]) / s,
            (R[1, 0] - R[0, 1]) / s,
        ])
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(R[i, i] - R[j, j] - R[k, k] + 1.0, 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    half = np.arccos(np.clip(q[0], -1.0, 1.0))
    sin_half = np.sin(half)
    if sin_half < 1e-12:
        return np.zeros(3)
    return (2.0 * half) * q[1:] / sin_half


def distort_normalized(dist: np.ndarray, xy: np.ndarray) -> np.ndarray:
    """Apply the distortion polynomial to normalised coords (n,2) -> (n,2)."""
    k1, k2, p1, p2, k3 = dist
    x, y = xy[..., 0], xy[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    return np.stack([xd, yd], axis=-1)


def project_points(intr: CameraIntrinsics, extr: CameraExtrinsics,
                   world_pts: np.ndarray) -> np.ndarray:
    """Project (n,3) world points to (n,2) pixels; raises on z_cam <= 0."""
    pts = np.asarray(world_pts, dtype=float).reshape(-1, 3)
    cam = pts @ extr.rotation().T + extr.tvec
    z = cam[:, 2]
    if np.any(z <= 0):
        raise NonPositiveDepth(f"{int(np.sum(z <= 0))} point(s) at non-positive depth")
    xy = cam[:, :2] / z[:, None]
    xyd = distort_normalized(intr.dist, xy)
    return xyd * np.array([intr.fx, intr.fy]) + np.array([intr.cx, intr.cy])


def project_point(intr: CameraIntrinsics, extr: CameraExtrinsics, world_pt) -> np.ndarray:
    """Project one world point to a pixel 2-vector."""
    return project_points(intr, extr, _as_vec(world_pt, 3, "world_pt"))[0]


def undistort_points(intr: CameraIntrinsics, pixels: np.ndarray,
                     max_iter: int = 50, tol: float = 1e-9) -> np.ndarray:
    """Pixels (n,2) -> normalised coords (n,2), inverting the distortion.

    Fixed-point iteration starting from the distorted normalised coords;
    raises NoConvergence if any point still moves more than `tol` after
    `max_iter` rounds (extreme distortion / far-corner pixels).
    """
    px = np.asarray(pixels, dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(px)):
        raise ValidationError("pixels contain non-finite values")
    k1, k2, p1, p2, k3 = intr.dist
    xd = (px[:, 0] - intr.cx) / intr.fx
    yd = (px[:, 1] - intr.cy) / intr.fy
    if not np.any(intr.dist):
        return np.stack([xd, yd], axis=-1)
    x, y = xd.copy(), yd.copy()
    for _ in range(max_iter):
        r2 = x * x + y * y
        radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
        x_new = (xd - dx) / radial
        y_new = (yd - dy) / radial
        step = np.max(np.hypot(x_new - x, y_new - y))
        x, y = x_new, y_new
        if step < tol:
            return np.stack([x, y], axis=-1)
    raise NoConvergence(f"undistortion did not converge in {max_iter} iterations")


def undistort_point(intr: CameraIntrinsics, pixel) -> np.ndarray:
    return undistort_points(intr, _as_vec(pixel, 2, "pixel"))[0]


def camera_depth(extr: CameraExtrinsics, world_pt) -> float:
    """z-component of the point in the camera frame (may be negative)."""
    p = _as_vec(world_pt, 3, "world_pt")
    return float(extr.rotation()[2] @ p + extr.tvec[2])
