"""Joint refinement of camera parameters and board poses.

The residual for one corner observation is the 2-vector

    project(intr_c, extr_c, R_f @ b + t_f) - pixel_obs

where b is the corner's board-plane coordinate (z = 0), (R_f, t_f) the
board->world pose of frame f, and camera 0's pose is pinned to the
identity (gauge fixing). Parameters are packed as

    [intr_0..intr_{C-1} (9 each: fx fy cx cy k1 k2 p1 p2 k3),
     extr_1..extr_{C-1} (6 each: rotvec, tvec),
     pose_0..pose_{F-1}  (6 each: rotvec, tvec)]

jacobian() is analytic (chain rule through the distortion polynomial and
the axis-angle map) and is validated against central finite differences
of residuals() by the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cameras import rodrigues, rodrigues_many, skew

_HUGE = 1e30


def _rotation_point_jacobian(rotvec: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """d(R(v) @ p)/dv for one rotation vector and (n,3) points -> (n,3,3).

    Closed form: -R [p]x (v v^T + (R^T - I)[v]x) / |v|^2, with the |v|->0
    limit -[p]x.
    """
    v = np.asarray(rotvec, dtype=float)
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    theta2 = float(v @ v)
    R = rodrigues(v)
    if theta2 < 1e-16:
        A = np.eye(3)
    else:
        A = (np.outer(v, v) + (R.T - np.eye(3)) @ skew(v)) / theta2
    skew_p = np.zeros((pts.shape[0], 3, 3))
    skew_p[:, 0, 1] = -pts[:, 2]
    skew_p[:, 0, 2] = pts[:, 1]
    skew_p[:, 1, 0] = pts[:, 2]
    skew_p[:, 1, 2] = -pts[:, 0]
    skew_p[:, 2, 0] = -pts[:, 1]
    skew_p[:, 2, 1] = pts[:, 0]
    return np.einsum("ij,njk,kl->nil", -R, skew_p, A)


@dataclass
class BundleProblem:
    """Observation tables plus parameter packing for the joint refinement."""

    n_cams: int
    n_frames: int
    cam_idx: np.ndarray      # (N,) int
    frame_idx: np.ndarray    # (N,) int
    board_pts: np.ndarray    # (N,3) board-plane coords, z = 0
    pixels: np.ndarray       # (N,2) observed pixels

    def __post_init__(self):
        self.cam_idx = np.asarray(self.cam_idx, dtype=int)
        self.frame_idx = np.asarray(self.frame_idx, dtype=int)
        self.board_pts = np.asarray(self.board_pts, dtype=float).reshape(-1, 3)
        self.pixels = np.asarray(self.pixels, dtype=float).reshape(-1, 2)
        self.n_obs = self.pixels.shape[0]

    # -- packing ----------------------------------------------------------

    @property
    def n_params(self) -> int:
        return 9 * self.n_cams + 6 * (self.n_cams - 1) + 6 * self.n_frames

    def intr_cols(self, c: int) -> slice:
        return slice(9 * c, 9 * c + 9)

    def extr_cols(self, c: int) -> slice:
        if c == 0:
            raise ValueError("camera 0 pose is gauge-fixed")
        base = 9 * self.n_cams + 6 * (c - 1)
        return slice(base, base + 6)

    def pose_cols(self, f: int) -> slice:
        base = 9 * self.n_cams + 6 * (self.n_cams - 1) + 6 * f
        return slice(base, base + 6)

    def pack(self, intr9: np.ndarray, extr6: np.ndarray, pose6: np.ndarray) -> np.ndarray:
        """intr9 (C,9), extr6 (C,6) with row 0 ignored, pose6 (F,6) -> flat."""
        x = np.empty(self.n_params)
        x[: 9 * self.n_cams] = np.asarray(intr9, float).reshape(-1)
        x[9 * self.n_cams: 9 * self.n_cams + 6 * (self.n_cams - 1)] = (
            np.asarray(extr6, float)[1:].reshape(-1)
        )
        x[self.pose_cols(0).start:] = np.asarray(pose6, float).reshape(-1)
        return x

    def unpack(self, x: np.ndarray):
        """-> (intr9 (C,9), extr6 (C,6) with zero row 0, pose6 (F,6))."""
        intr9 = x[: 9 * self.n_cams].reshape(self.n_cams, 9)
        extr6 = np.zeros((self.n_cams, 6))
        extr6[1:] = x[9 * self.n_cams: 9 * self.n_cams + 6 * (self.n_cams - 1)].reshape(-1, 6)
        pose6 = x[self.pose_cols(0).start:].reshape(self.n_frames, 6)
        return intr9, extr6, pose6

    # -- geometry shared by residuals and jacobian -------------------------

    def _forward(self, x: np.ndarray):
        intr9, extr6, pose6 = self.unpack(x)
        R_cam = rodrigues_many(extr6[:, :3])
        R_pose = rodrigues_many(pose6[:, :3])
        Rf = R_pose[self.frame_idx]
        tf = pose6[self.frame_idx, 3:]
        world = np.einsum("nij,nj->ni", Rf, self.board_pts) + tf
        Rc = R_cam[self.cam_idx]
        tc = extr6[self.cam_idx, 3:]
        cam = np.einsum("nij,nj->ni", Rc, world) + tc
        return intr9, extr6, pose6, R_cam, world, cam

    def residuals(self, x: np.ndarray) -> np.ndarray:
        """Flattened (2N,) reprojection residuals; +-inf for points at z<=0."""
        intr9, _, _, _, _, cam = self._forward(x)
        z = cam[:, 2]
        bad = z <= 1e-12
        z_safe = np.where(bad, 1.0, z)
        xy = cam[:, :2] / z_safe[:, None]
        par = intr9[self.cam_idx]
        xd, yd = _distort(par[:, 4:], xy)
        u = par[:, 0] * xd + par[:, 2]
        v = par[:, 1] * yd + par[:, 3]
        res = np.stack([u, v], axis=1) - self.pixels
        res[bad] = _HUGE
        return res.reshape(-1)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """Dense (2N, n_params) analytic Jacobian of residuals()."""
        intr9, extr6, pose6, R_cam, world, cam = self._forward(x)
        N = self.n_obs
        par = intr9[self.cam_idx]
        fx, fy = par[:, 0], par[:, 1]
        dist = par[:, 4:]
        z = cam[:, 2]
        xy = cam[:, :2] / z[:, None]
        xn, yn = xy[:, 0], xy[:, 1]

        xd, yd = _distort(dist, xy)
        d_xy, d_dist = _distort_jacobians(dist, xy)

        # pixels wrt normalised coords: diag(fx,fy) @ d_xy -> (N,2,2)
        duv_dxy = d_xy * np.stack([fx, fy], axis=1)[:, :, None]
        # normalised coords wrt camera-frame point -> (N,2,3)
        dxy_dcam = np.zeros((N, 2, 3))
        inv_z = 1.0 / z
        dxy_dcam[:, 0, 0] = inv_z
        dxy_dcam[:, 0, 2] = -xn * inv_z
        dxy_dcam[:, 1, 1] = inv_z
        dxy_dcam[:, 1, 2] = -yn * inv_z
        G = duv_dxy @ dxy_dcam  # (N,2,3) pixels wrt camera-frame point

        J = np.zeros((2 * N, self.n_params))
        rows = (2 * np.arange(N))[:, None, None] + np.array([0, 1])[None, :, None]

        # intrinsics block (N,2,9): [fx fy cx cy | dist*5]
        d_intr = np.zeros((N, 2, 9))
        d_intr[:, 0, 0] = xd
        d_intr[:, 1, 1] = yd
        d_intr[:, 0, 2] = 1.0
        d_intr[:, 1, 3] = 1.0
        d_intr[:, :, 4:] = d_dist * np.stack([fx, fy], axis=1)[:, :, None]
        cols = (9 * self.cam_idx)[:, None, None] + np.arange(9)[None, None, :]
        J[rows, cols] = d_intr

        # extrinsics block for cameras >= 1
        for c in range(1, self.n_cams):
            sel = np.flatnonzero(self.cam_idx == c)
            if sel.size == 0:
                continue
            drot = _rotation_point_jacobian(extr6[c, :3], world[sel])
            blk = np.concatenate([G[sel] @ drot, G[sel]], axis=2)  # (n,2,6)
            cs = self.extr_cols(c)
            J[rows[sel], np.arange(cs.start, cs.stop)[None, None, :]] = blk

        # board-pose block
        for f in range(self.n_frames):
            sel = np.flatnonzero(self.frame_idx == f)
            if sel.size == 0:
                continue
            Rc = R_cam[self.cam_idx[sel]]
            drot = _rotation_point_jacobian(pose6[f, :3], self.board_pts[sel])
            GR = G[sel] @ Rc  # (n,2,3) pixels wrt world point
            blk = np.concatenate([GR @ drot, GR], axis=2)
            cs = self.pose_cols(f)
            J[rows[sel], np.arange(cs.start, cs.stop)[None, None, :]] = blk
        return J

    # -- error reporting ---------------------------------------------------

    def pixel_errors(self, x: np.ndarray) -> np.ndarray:
        """Per-observation reprojection distance in pixels (N,)."""
        r = self.residuals(x).reshape(-1, 2)
        return np.hypot(r[:, 0], r[:, 1])

    def rms(self, x: np.ndarray) -> float:
        e = self.pixel_errors(x)
        return float(np.sqrt(np.mean(e * e)))


def huber_cost(errors: np.ndarray, delta: float) -> float:
    """Sum of Huber losses of per-observation pixel distances."""
    e = np.abs(errors)
    quad = e <= delta
    return float(np.sum(0.5 * e[quad] ** 2) + np.sum(delta * (e[~quad] - 0.5 * delta)))


def huber_weights(errors: np.ndarray, delta: float) -> np.ndarray:
    """IRLS weights: 1 inside the quadratic zone, delta/|e| outside."""
    e = np.abs(errors)
    w = np.ones_like(e)
    out = e > delta
    w[out] = delta / e[out]
    return w


@dataclass
class LMResult:
    params: np.ndarray
    cost: float
    n_iter: int
    converged: bool
    cost_history: list = field(default_factory=list)


def levenberg_marquardt(problem: BundleProblem, x0: np.ndarray,
                        huber_delta: float = 2.0,
                        init_damping: float = 1e-3,
                        max_iterations: int = 200,
                        rel_tol: float = 1e-10) -> LMResult:
    """Damped Gauss-Newton on the robustified reprojection cost.

    Damping is multiplicative on diag(J^T W J): x10 on a rejected step,
    /10 on an accepted one. Every trial step (accepted or rejected)
    counts toward max_iterations. Stops when an accepted step improves
    the cost by less than rel_tol relatively.
    """
    x = np.asarray(x0, dtype=float).copy()
    errs = problem.pixel_errors(x)
    cost = huber_cost(errs, huber_delta)
    lam = init_damping
    history = [cost]
    converged = False
    it = 0
    J = None
    while it < max_iterations:
        if J is None:
            J = problem.jacobian(x)
            w = np.repeat(np.sqrt(huber_weights(errs, huber_delta)), 2)
            Jw = J * w[:, None]
            rw = problem.residuals(x) * w
            A = Jw.T @ Jw
            g = Jw.T @ rw
            diag = np.maximum(np.diag(A), 1e-12)
        it += 1
        H = A + lam * np.diag(diag)
        try:
            delta = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        x_try = x + delta
        errs_try = problem.pixel_errors(x_try)
        cost_try = huber_cost(errs_try, huber_delta)
        if cost_try < cost:
            rel_drop = (cost - cost_try) / max(cost, 1e-300)
            x, errs, cost = x_try, errs_try, cost_try
            history.append(cost)
            lam = max(lam / 10.0, 1e-14)
            J = None
            if rel_drop < rel_tol:
                converged = True
                break
        else:
            lam *= 10.0
            if lam > 1e14:
                converged = True  # no further progress possible
                break
    return LMResult(params=x, cost=cost, n_iter=it, converged=converged,
                    cost_history=history)


# -- distortion helpers (vectorised over observations) ---------------------

def _distort(dist: np.ndarray, xy: np.ndarray):
    """dist (N,5) per-observation coefficients, xy (N,2) -> (xd, yd)."""
    k1, k2, p1, p2, k3 = dist.T
    x, y = xy[:, 0], xy[:, 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    return xd, yd


def _distort_jacobians(dist: np.ndarray, xy: np.ndarray):
    """-> (d(xd,yd)/d(x,y) as (N,2,2), d(xd,yd)/d(k1,k2,p1,p2,k3) as (N,2,5))."""
    k1, k2, p1, p2, k3 = dist.T
    x, y = xy[:, 0], xy[:, 1]
    r2 = x * x + y * y
    r4 = r2 * r2
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    g = k1 + 2.0 * k2 * r2 + 3.0 * k3 * r4

    d_xy = np.empty((xy.shape[0], 2, 2))
    d_xy[:, 0, 0] = radial + 2.0 * x * x * g + 2.0 * p1 * y + 6.0 * p2 * x
    d_xy[:, 0, 1] = 2.0 * x * y * g + 2.0 * p1 * x + 2.0 * p2 * y
    d_xy[:, 1, 0] = d_xy[:, 0, 1]
    d_xy[:, 1, 1] = radial + 2.0 * y * y * g + 6.0 * p1 * y + 2.0 * p2 * x

    d_dist = np.empty((xy.shape[0], 2, 5))
    d_dist[:, 0, 0] = x * r2
    d_dist[:, 0, 1] = x * r4
    d_dist[:, 0, 2] = 2.0 * x * y
    d_dist[:, 0, 3] = r2 + 2.0 * x * x
    d_dist[:, 0, 4] = x * r4 * r2
    d_dist[:, 1, 0] = y * r2
    d_dist[:, 1, 1] = y * r4
    d_dist[:, 1, 2] = r2 + 2.0 * y * y
    d_dist[:, 1, 3] = 2.0 * x * y
    d_dist[:, 1, 4] = y * r4 * r2
    return d_xy, d_dist
