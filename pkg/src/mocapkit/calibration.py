"""Multi-camera rig estimation from planar calibration-board corners.

Pipeline: per-frame board->image homographies, closed-form intrinsics per
camera from the absolute-conic constraints, board poses by homography
decomposition, relative camera poses averaged over shared frames, a
spanning tree rooted at camera 0, then a global robust bundle adjustment
over all intrinsics, distortions, extrinsics and board poses.

Corner observations arrive pre-detected (CSV or in memory); image
detection of the board is out of scope. World units of the recovered rig
are millimetres (the board squares are given in mm), so unit_scale = 1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bundle import BundleProblem, levenberg_marquardt
from .cameras import (
    Camera,
    CameraExtrinsics,
    CameraIntrinsics,
    CameraRig,
    rodrigues,
    rotvec_from_matrix,
)
from .errors import (
    DegenerateConfiguration,
    DisconnectedRig,
    InsufficientViews,
    NoConvergence,
    RankDeficient,
    ValidationError,
)

CORNER_CSV_HEADER = ["camera", "frame", "corner_id", "x_px", "y_px"]


@dataclass
class BoardSpec:
    """Checkerboard/ChArUco layout; corner ids run row-major over the
    (squares_x-1) x (squares_y-1) interior corners, corner (col,row) at
    (col*square_length_mm, row*square_length_mm, 0) in the board plane."""

    squares_x: int = 10
    squares_y: int = 7
    square_length_mm: float = 25.0
    marker_length_mm: float = 18.75

    def __post_init__(self):
        if self.squares_x < 3 or self.squares_y < 3:
            raise ValidationError("board needs at least 3x3 squares")
        if not (0 < self.marker_length_mm <= self.square_length_mm):
            raise ValidationError("marker edge must be in (0, square edge]")

    @property
    def n_corners(self) -> int:
        return (self.squares_x - 1) * (self.squares_y - 1)

    def corner_coords(self) -> np.ndarray:
        """(n_corners, 2) board-plane coordinates in millimetres."""
        cols = self.squares_x - 1
        ids = np.arange(self.n_corners)
        return np.stack([ids % cols, ids // cols], axis=1) * self.square_length_mm


@dataclass
class CornerObservation:
    camera: str
    frame: int
    corner_id: int
    pixel: np.ndarray

    def __post_init__(self):
        self.pixel = np.asarray(self.pixel, dtype=float).reshape(2)


@dataclass
class CalibrateOptions:
    image_size: tuple[int, int] = (1920, 1080)
    huber_delta_px: float = 2.0
    init_damping: float = 1e-3
    max_iterations: int = 200
    rel_tol: float = 1e-10
    max_rms_px: float = 10.0


@dataclass
class CalibrationResult:
    rig: CameraRig
    rms_error_px: float
    per_camera_error_px: list[float]
    n_iterations: int = 0

    def __post_init__(self):
        if not np.isfinite(self.rms_error_px) or self.rms_error_px < 0:
            raise ValidationError(f"invalid rms error {self.rms_error_px}")


# -- homography -------------------------------------------------------------

def _hartley_normalize(pts: np.ndarray):
    centroid = pts.mean(axis=0)
    d = np.linalg.norm(pts - centroid, axis=1).mean()
    if d < 1e-12:
        raise DegenerateConfiguration("all points coincide")
    s = np.sqrt(2.0) / d
    T = np.array([[s, 0, -s * centroid[0]], [0, s, -s * centroid[1]], [0, 0, 1.0]])
    return (pts - centroid) * s, T


def _collinear(pts: np.ndarray) -> bool:
    c = pts - pts.mean(axis=0)
    s = np.linalg.svd(c, compute_uv=False)
    return s[1] <= 1e-9 * max(s[0], 1.0)


def estimate_homography(board_pts, image_pts) -> np.ndarray:
    """Normalised DLT; returns H (board->image) scaled so H[2,2] = 1."""
    bp = np.asarray(board_pts, dtype=float).reshape(-1, 2)
    ip = np.asarray(image_pts, dtype=float).reshape(-1, 2)
    if bp.shape != ip.shape:
        raise ValidationError("board/image point counts differ")
    n = bp.shape[0]
    if n < 4:
        raise DegenerateConfiguration(f"need >= 4 correspondences, got {n}")
    if _collinear(bp) or _collinear(ip):
        raise DegenerateConfiguration("correspondences are collinear")
    bn, Tb = _hartley_normalize(bp)
    im, Ti = _hartley_normalize(ip)
    A = np.zeros((2 * n, 9))
    A[0::2, 0:2] = -bn
    A[0::2, 2] = -1.0
    A[0::2, 6:8] = im[:, 0:1] * bn
    A[0::2, 8] = im[:, 0]
    A[1::2, 3:5] = -bn
    A[1::2, 5] = -1.0
    A[1::2, 6:8] = im[:, 1:2] * bn
    A[1::2, 8] = im[:, 1]
    _, _, vt = np.linalg.svd(A)
    H = np.linalg.inv(Ti) @ vt[-1].reshape(3, 3) @ Tb
    if abs(H[2, 2]) < 1e-14:
        raise DegenerateConfiguration("homography has vanishing scale (h33 = 0)")
    return H / H[2, 2]


# -- Zhang closed-form intrinsics -------------------------------------------

def _conic_row(H: np.ndarray, i: int, j: int) -> np.ndarray:
    h_i, h_j = H[:, i], H[:, j]
    return np.array([
        h_i[0] * h_j[0],
        h_i[0] * h_j[1] + h_i[1] * h_j[0],
        h_i[1] * h_j[1],
        h_i[2] * h_j[0] + h_i[0] * h_j[2],
        h_i[2] * h_j[1] + h_i[1] * h_j[2],
        h_i[2] * h_j[2],
    ])


def zhang_intrinsics_init(homographies, image_size: tuple[int, int] = (1920, 1080)
                          ) -> CameraIntrinsics:
    """Closed-form fx, fy, cx, cy from >= 3 planar homographies.

    Solves the absolute-conic system V b = 0; distortion starts at zero.
    """
    hs = list(homographies)
    if len(hs) < 3:
        raise InsufficientViews(f"need >= 3 board views, got {len(hs)}")
    V = np.zeros((2 * len(hs), 6))
    for k, H in enumerate(hs):
        V[2 * k] = _conic_row(H, 0, 1)
        V[2 * k + 1] = _conic_row(H, 0, 0) - _conic_row(H, 1, 1)
    _, s, vt = np.linalg.svd(V)
    if s[4] <= 1e-9 * s[0]:
        raise RankDeficient("board orientations do not constrain the conic "
                            "(parallel or repeated poses)")
    b11, b12, b22, b13, b23, b33 = vt[-1]
    if b11 < 0:
        b11, b12, b22, b13, b23, b33 = -b11, -b12, -b22, -b13, -b23, -b33
    den = b11 * b22 - b12 * b12
    if b11 <= 0 or den <= 0:
        raise RankDeficient("absolute conic not positive definite")
    v0 = (b12 * b13 - b11 * b23) / den
    lam = b33 - (b13 * b13 + v0 * (b12 * b13 - b11 * b23)) / b11
    if lam <= 0 or lam / b11 <= 0:
        raise RankDeficient("absolute conic not positive definite")
    alpha = np.sqrt(lam / b11)
    beta = np.sqrt(lam * b11 / den)
    gamma = -b12 * alpha * alpha * beta / lam
    u0 = gamma * v0 / beta - b13 * alpha * alpha / lam
    return CameraIntrinsics(fx=float(alpha), fy=float(beta), cx=float(u0), cy=float(v0),
                            dist=np.zeros(5), width=image_size[0], height=image_size[1])


def board_pose_from_homography(H: np.ndarray, intr: CameraIntrinsics):
    """Decompose a board->image homography into a board->camera pose."""
    Kinv = np.linalg.inv(intr.matrix())
    M = Kinv @ H
    n1, n2 = np.linalg.norm(M[:, 0]), np.linalg.norm(M[:, 1])
    lam = 0.5 * (n1 + n2)
    if lam < 1e-12:
        raise DegenerateConfiguration("homography decomposition degenerate")
    M = M / lam
    if M[2, 2] < 0:  # board must sit in front of the camera
        M = -M
    r1, r2, t = M[:, 0], M[:, 1], M[:, 2]
    Q = np.stack([r1, r2, np.cross(r1, r2)], axis=1)
    u, _, vt = np.linalg.svd(Q)
    R = u @ vt
    if np.linalg.det(R) < 0:
        u[:, -1] *= -1
        R = u @ vt
    return rotvec_from_matrix(R), t


# -- rotation averaging ------------------------------------------------------

def _rotvec_to_quat(v: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(v)
    if theta < 1e-12:
        return np.array([1.0, 0.0, 0.0, 0.0])
    axis = v / theta
    return np.concatenate([[np.cos(theta / 2)], np.sin(theta / 2) * axis])


def _quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    q = q / np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    half = np.arccos(np.clip(q[0], -1.0, 1.0))
    s = np.sin(half)
    if s < 1e-12:
        return np.zeros(3)
    return 2.0 * half * q[1:] / s


def average_rotations(rotvecs) -> np.ndarray:
    """Quaternion eigen-method mean of a set of rotation vectors."""
    quats = np.stack([_rotvec_to_quat(v) for v in rotvecs])
    M = quats.T @ quats
    w, vecs = np.linalg.eigh(M)
    return _quat_to_rotvec(vecs[:, -1])


# -- full rig estimation ------------------------------------------------------

def _compose(Ra, ta, Rb, tb):
    """(Ra,ta) after (Rb,tb): X -> Ra(Rb X + tb) + ta."""
    return Ra @ Rb, Ra @ tb + ta


def calibrate_rig(board: BoardSpec, observations, opts: CalibrateOptions | None = None
                  ) -> CalibrationResult:
    """Estimate a full CameraRig from corner observations.

    Deterministic: observations are sorted internally by
    (camera name, frame, corner id). Raises DisconnectedRig when some
    camera never co-observes the board with the rest, InsufficientViews
    when a camera lacks 3 usable frames (>= 4 non-collinear corners), and
    NoConvergence when the refinement hits its iteration cap with the RMS
    still above opts.max_rms_px.
    """
    opts = opts or CalibrateOptions()
    obs = sorted(observations, key=lambda o: (o.camera, o.frame, o.corner_id))
    if not obs:
        raise ValidationError("no corner observations")
    board_xy = board.corner_coords()
    for o in obs:
        if not (0 <= o.corner_id < board.n_corners):
            raise ValidationError(f"corner id {o.corner_id} invalid for this board")
    seen = set()
    for o in obs:
        key = (o.camera, o.frame, o.corner_id)
        if key in seen:
            raise ValidationError(f"duplicate observation {key}")
        seen.add(key)

    cam_names = sorted({o.camera for o in obs})
    if len(cam_names) < 2:
        raise InsufficientViews("rig calibration needs >= 2 cameras")
    cam_of = {n: i for i, n in enumerate(cam_names)}
    frames = sorted({o.frame for o in obs})
    frame_of = {f: i for i, f in enumerate(frames)}

    # group corners per (camera, frame)
    groups: dict[tuple[int, int], list[CornerObservation]] = {}
    for o in obs:
        groups.setdefault((cam_of[o.camera], frame_of[o.frame]), []).append(o)

    # per-view homographies (usable views only)
    homogs: dict[tuple[int, int], np.ndarray] = {}
    for key, rows in groups.items():
        if len(rows) < 4:
            continue
        bp = board_xy[[r.corner_id for r in rows]]
        ip = np.stack([r.pixel for r in rows])
        try:
            homogs[key] = estimate_homography(bp, ip)
        except DegenerateConfiguration:
            continue  # e.g. a single visible board row; skip for init

    # closed-form intrinsics per camera
    intrinsics: list[CameraIntrinsics] = []
    for c, name in enumerate(cam_names):
        hs = [homogs[k] for k in sorted(homogs) if k[0] == c]
        if len(hs) < 3:
            raise InsufficientViews(
                f"camera '{name}' has {len(hs)} usable board view(s); need >= 3"
            )
        intrinsics.append(zhang_intrinsics_init(hs, image_size=opts.image_size))

    # board->camera poses for usable views
    view_pose = {k: board_pose_from_homography(H, intrinsics[k[0]])
                 for k, H in sorted(homogs.items())}

    # co-visibility graph and pairwise relative poses
    frames_of_cam: dict[int, set[int]] = {c: set() for c in range(len(cam_names))}
    for (c, f) in view_pose:
        frames_of_cam[c].add(f)
    shared: dict[tuple[int, int], list[int]] = {}
    for a in range(len(cam_names)):
        for b in range(a + 1, len(cam_names)):
            common = sorted(frames_of_cam[a] & frames_of_cam[b])
            if common:
                shared[(a, b)] = common

    # BFS spanning tree from camera 0, best-connected edges first
    extr = [None] * len(cam_names)
    extr[0] = (np.eye(3), np.zeros(3))
    visited = {0}
    frontier = [0]
    while frontier:
        nxt = []
        for a in frontier:
            neighbors = []
            for (i, j), common in shared.items():
                if i == a and j not in visited:
                    neighbors.append((len(common), j))
                elif j == a and i not in visited:
                    neighbors.append((len(common), i))
            for _, b in sorted(neighbors, key=lambda t: (-t[0], t[1])):
                if b in visited:
                    continue
                common = shared.get((min(a, b), max(a, b)))
                # X_b = T(b<-a) X_a, so extr_b = T(b<-a) o T(a<-world)
                rel_R, rel_t = _average_relative_pose(view_pose, b, a, common)
                Ra, ta = extr[a]
                extr[b] = _compose(rel_R, rel_t, Ra, ta)
                visited.add(b)
                nxt.append(b)
        frontier = nxt
    if len(visited) < len(cam_names):
        missing = [cam_names[c] for c in range(len(cam_names)) if c not in visited]
        raise DisconnectedRig(
            f"camera(s) {missing} never co-observe the board with the rest"
        )

    # initial board poses in the world (= camera 0) frame
    pose_init = np.zeros((len(frames), 6))
    lonely = []
    for f in range(len(frames)):
        cams_seeing = [c for c in range(len(cam_names)) if (c, f) in view_pose]
        if not cams_seeing:
            lonely.append(f)
            continue
        c = max(cams_seeing, key=lambda c: (len(groups[(c, f)]), -c))
        rv, tv = view_pose[(c, f)]
        Rc, tc = extr[c]
        Rw = Rc.T @ rodrigues(rv)
        tw = Rc.T @ (tv - tc)
        pose_init[f, :3] = rotvec_from_matrix(Rw)
        pose_init[f, 3:] = tw
    usable_frames = [f for f in range(len(frames)) if f not in set(lonely)]
    frame_remap = {f: i for i, f in enumerate(usable_frames)}

    # assemble the bundle (observations of un-initialisable frames dropped)
    cam_idx, frm_idx, bpts, pix = [], [], [], []
    for (c, f), rows in sorted(groups.items()):
        if f not in frame_remap:
            continue
        for r in rows:
            cam_idx.append(c)
            frm_idx.append(frame_remap[f])
            bpts.append([board_xy[r.corner_id][0], board_xy[r.corner_id][1], 0.0])
            pix.append(r.pixel)
    problem = BundleProblem(
        n_cams=len(cam_names), n_frames=len(usable_frames),
        cam_idx=np.array(cam_idx), frame_idx=np.array(frm_idx),
        board_pts=np.array(bpts), pixels=np.array(pix),
    )
    intr9 = np.stack([
        np.concatenate([[i.fx, i.fy, i.cx, i.cy], i.dist]) for i in intrinsics
    ])
    extr6 = np.zeros((len(cam_names), 6))
    for c in range(1, len(cam_names)):
        Rc, tc = extr[c]
        extr6[c, :3] = rotvec_from_matrix(Rc)
        extr6[c, 3:] = tc
    x0 = problem.pack(intr9, extr6, pose_init[usable_frames])

    fit = levenberg_marquardt(
        problem, x0,
        huber_delta=opts.huber_delta_px,
        init_damping=opts.init_damping,
        max_iterations=opts.max_iterations,
        rel_tol=opts.rel_tol,
    )
    errors = problem.pixel_errors(fit.params)
    rms = float(np.sqrt(np.mean(errors ** 2)))
    if not fit.converged and rms > opts.max_rms_px:
        raise NoConvergence(
            f"bundle adjustment hit {opts.max_iterations} iterations with "
            f"RMS {rms:.3f} px (limit {opts.max_rms_px}); check footage quality"
        )

    intr9_f, extr6_f, _ = problem.unpack(fit.params)
    cameras = []
    per_cam = []
    for c, name in enumerate(cam_names):
        fx, fy, cx, cy = intr9_f[c, :4]
        cameras.append(Camera(
            name=name,
            intrinsics=CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy,
                                        dist=intr9_f[c, 4:].copy(),
                                        width=opts.image_size[0],
                                        height=opts.image_size[1]),
            extrinsics=CameraExtrinsics(rotvec=extr6_f[c, :3].copy(),
                                        tvec=extr6_f[c, 3:].copy()),
        ))
        e = errors[problem.cam_idx == c]
        per_cam.append(float(np.sqrt(np.mean(e ** 2))) if e.size else 0.0)
    rig = CameraRig(cameras=cameras, unit_scale=1.0)
    return CalibrationResult(rig=rig, rms_error_px=rms,
                             per_camera_error_px=per_cam, n_iterations=fit.n_iter)


def _average_relative_pose(view_pose, a: int, b: int, common_frames):
    """Mean transform camera b -> camera a over their shared board views."""
    rots, trans = [], []
    for f in common_frames:
        rva, tva = view_pose[(a, f)]
        rvb, tvb = view_pose[(b, f)]
        Ra, Rb = rodrigues(rva), rodrigues(rvb)
        R_ab = Ra @ Rb.T
        t_ab = tva - R_ab @ tvb
        rots.append(rotvec_from_matrix(R_ab))
        trans.append(t_ab)
    return rodrigues(average_rotations(rots)), np.mean(trans, axis=0)


# -- corner CSV ---------------------------------------------------------------

def read_corner_csv(path) -> list[CornerObservation]:
    """Corner observations from CSV with header camera,frame,corner_id,x_px,y_px."""
    path = Path(path)
    out = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CORNER_CSV_HEADER:
            raise ValidationError(
                f"{path}: expected header {','.join(CORNER_CSV_HEADER)}"
            )
        for row in reader:
            if not row:
                continue
            cam, frame, cid, x, y = row
            out.append(CornerObservation(camera=cam, frame=int(frame),
                                         corner_id=int(cid),
                                         pixel=(float(x), float(y))))
    return out


def write_corner_csv(observations, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(CORNER_CSV_HEADER)]
    for o in observations:
        lines.append(f"{o.camera},{o.frame},{o.corner_id},"
                     f"{float(o.pixel[0])!r},{float(o.pixel[1])!r}")
    path.write_text("\n".join(lines) + "\n")
