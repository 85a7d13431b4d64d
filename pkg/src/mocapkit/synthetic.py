"""Ground-truth scene generation: rigs, trajectories, detections, LED traces.

Everything is a pure function of (parameters, seed), so fixtures are
bit-reproducible. Pixel noise is injected in image space only: that is
where real detector error lives, while the 3D ground truth stays exact.

The generated rig is expressed in camera 0's frame (camera 0 has
identity extrinsics), world units are metres (unit_scale = 1000), and
the cameras all look at the focus point (0, 0, radius).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .calibration import BoardSpec, CornerObservation
from .cameras import (
    Camera,
    CameraExtrinsics,
    CameraIntrinsics,
    CameraRig,
    project_points,
    rodrigues,
    rotvec_from_matrix,
)
from .errors import OverlappingTrials, ValidationError
from .sync import IntensityTrace
from .trajectory import Trajectory3D
from .triangulate import Detections2D


def min_jerk_trajectory(D, T: float, fps: float, start=(0.0, 0.0, 0.0),
                        landmark_id: int = 0) -> Trajectory3D:
    """Quintic point-to-point path x(tau) = start + D*(10 tau^3 - 15 tau^4 + 6 tau^5).

    The classical smoothness reference: zero velocity/acceleration at both
    ends and squared-jerk integral 720 |D|^2 / T^5.
    """
    if T <= 0:
        raise ValidationError("T must be positive")
    if fps < 8.0 / T:
        raise ValidationError(f"fps {fps} too low: need >= 8 samples over T={T}s")
    D = np.asarray(D, dtype=float).reshape(3)
    start = np.asarray(start, dtype=float).reshape(3)
    n = int(round(T * fps)) + 1
    t = np.arange(n) / fps
    tau = np.clip(t / T, 0.0, 1.0)
    s = 10.0 * tau**3 - 15.0 * tau**4 + 6.0 * tau**5
    return Trajectory3D(landmark_id=landmark_id, t=t,
                        p=start + np.outer(s, D), source_fps=fps)


def _look_at(position: np.ndarray, target: np.ndarray):
    """World->camera extrinsics for a camera at `position` aimed at `target`
    (image y axis pointing roughly down, world +y treated as down)."""
    fwd = target - position
    fwd = fwd / np.linalg.norm(fwd)
    down = np.array([0.0, 1.0, 0.0])
    right = np.cross(down, fwd)
    nr = np.linalg.norm(right)
    if nr < 1e-9:  # looking straight up/down: pick an arbitrary right
        right = np.array([1.0, 0.0, 0.0])
    else:
        right = right / nr
    cam_down = np.cross(fwd, right)
    R = np.stack([right, cam_down, fwd])
    return R, -R @ position


def make_rig(n_cams: int, radius: float, target=(0.0, 0.0, 0.0)) -> CameraRig:
    """Cameras on a circular arc of `radius` around `target`, all aimed at it.

    Webcam-like intrinsics (1920x1080, f ~ 1000 px, mild distortion). The
    result is re-expressed in camera 0's frame, so in rig coordinates the
    aim point sits at (0, 0, radius) and camera 0 is the identity.
    """
    if n_cams < 2:
        raise ValidationError("a rig needs >= 2 cameras")
    target = np.asarray(target, dtype=float).reshape(3)
    spread = np.radians(100.0)
    poses = []
    for k in range(n_cams):
        phi = spread * (k / (n_cams - 1) - 0.5)
        height = 0.0 if k == 0 else 0.15 * radius * ((k % 3) - 1)
        pos = target - radius * np.array([np.sin(phi), 0.0, np.cos(phi)])
        pos[1] += height
        poses.append(_look_at(pos, target))
    R0, t0 = poses[0]
    cameras = []
    letters = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    for k, (R, t) in enumerate(poses):
        if k == 0:
            rotvec, tvec = np.zeros(3), np.zeros(3)
        else:
            Rk = R @ R0.T
            rotvec, tvec = rotvec_from_matrix(Rk), t - Rk @ t0
        intr = CameraIntrinsics(
            fx=1000.0 + 8.0 * k, fy=995.0 + 6.0 * k,
            cx=960.0 + 3.0 * k, cy=540.0 - 2.0 * k,
            dist=[-0.06 + 0.01 * k, 0.015, 5e-4, -4e-4, 0.002],
            width=1920, height=1080,
        )
        cameras.append(Camera(name=letters[k], intrinsics=intr,
                              extrinsics=CameraExtrinsics(rotvec=rotvec, tvec=tvec)))
    return CameraRig(cameras=cameras, unit_scale=1000.0)


def hand_pose(open_hand: bool = True, scale: float = 0.09) -> np.ndarray:
    """Stylised 21-landmark hand cloud (metres), wrist at the origin.

    The open hand fans the fingers with a slight arch (so its hull is a
    dome, not a degenerate plane); the fist curls everything into a
    compact cluster.
    """
    pts = np.zeros((21, 3))
    finger_dirs = np.radians([-60.0, -25.0, 0.0, 22.0, 45.0])
    if open_hand:
        lengths = (0.35, 0.62, 0.82, 1.0)      # fingers extended, cupped palm
        arch = (0.05, 0.15, 0.25, 0.32)
        shrink = 1.0
    else:
        lengths = (0.30, 0.40, 0.44, 0.40)     # tips curled back toward the palm
        arch = (0.0, 0.06, 0.10, 0.06)
        shrink = 0.55
    for f, base in enumerate((1, 5, 9, 13, 17)):
        d = np.array([np.sin(finger_dirs[f]), 0.0, np.cos(finger_dirs[f])])
        for j in range(4):
            pts[base + j] = lengths[j] * scale * d
            pts[base + j, 1] = -arch[j] * scale
    return pts * shrink


@dataclass
class SyntheticScene:
    rig: CameraRig
    trajectories: dict[int, Trajectory3D]
    noise_px: float = 0.0
    seed: int = 0
    board: BoardSpec | None = None
    board_poses: list = field(default_factory=list)  # (rotvec, tvec) board->world
    dropout: dict[str, frozenset] = field(default_factory=dict)
    start_frames: dict[str, int] = field(default_factory=dict)
    schema_id: str = "hand21"


def make_board_poses(n_poses: int, rig: CameraRig, board: BoardSpec,
                     focus, seed: int = 0,
                     tilt_deg: float = 30.0, dist_jitter: float = 0.2) -> list:
    """Board->world poses sweeping tilt within +-tilt_deg and moving the
    board toward each camera in turn (distance varied +-dist_jitter),
    echoing a handheld calibration recording."""
    rng = np.random.default_rng(seed)
    focus = np.asarray(focus, dtype=float).reshape(3)
    centers = np.stack([c.extrinsics.center() for c in rig.cameras])
    mean_dir = centers.mean(axis=0) - focus
    mean_dir /= np.linalg.norm(mean_dir)
    # base orientation: board normal toward the cameras
    bx = np.cross(np.array([0.0, 1.0, 0.0]), mean_dir)
    bx /= np.linalg.norm(bx)
    by = np.cross(mean_dir, bx)
    R_base = np.stack([bx, by, mean_dir], axis=1)
    half_extent = 0.5 * np.array([
        (board.squares_x - 2) * board.square_length_mm,
        (board.squares_y - 2) * board.square_length_mm,
        0.0,
    ]) / rig.unit_scale

    # lateral spread is what pins down the distortion polynomial: sweep
    # the board across the shared view, not just back and forth
    scale = float(np.mean(np.linalg.norm(centers - focus, axis=1)))
    poses = []
    for i in range(n_poses):
        cam = rig.cameras[i % len(rig)]
        toward = cam.extrinsics.center() - focus
        beta = rng.uniform(-dist_jitter, dist_jitter)
        lateral = (rng.uniform(-0.22, 0.22) * scale * bx
                   + rng.uniform(-0.14, 0.14) * scale * by)
        center = focus + beta * toward + lateral
        tilt_axis = bx * np.cos(rng.uniform(0, 2 * np.pi)) + by * np.sin(
            rng.uniform(0, 2 * np.pi))
        tilt = np.radians(rng.uniform(-tilt_deg, tilt_deg))
        roll = rng.uniform(0.0, 2 * np.pi)
        R = rodrigues(tilt_axis * tilt) @ R_base @ rodrigues([0.0, 0.0, roll])
        t = center - R @ half_extent
        poses.append((rotvec_from_matrix(R), t))
    return poses


def make_scene(n_cams: int = 3, radius: float = 0.8, n_frames: int = 120,
               fps: float = 60.0, noise_px: float = 0.0, seed: int = 0,
               n_board_poses: int = 20, board: BoardSpec | None = None,
               displacement=(0.16, 0.08, 0.10), hand_scale: float = 0.07,
               dropout: dict | None = None,
               start_frames: dict | None = None) -> SyntheticScene:
    """Complete scene: arc rig, 21-landmark min-jerk hand path, board sweep."""
    rig = make_rig(n_cams, radius)
    focus = np.array([0.0, 0.0, radius])
    D = np.asarray(displacement, dtype=float)
    T = (n_frames - 1) / fps
    offsets = hand_pose(open_hand=True, scale=hand_scale)
    cloud_center = offsets.mean(axis=0)
    start = focus - 0.5 * D - cloud_center
    path = min_jerk_trajectory(D, T, fps, start=start)
    trajectories = {
        lm: Trajectory3D(landmark_id=lm, t=path.t.copy(),
                         p=path.p + offsets[lm], source_fps=fps)
        for lm in range(offsets.shape[0])
    }
    board = board or BoardSpec()
    board_poses = make_board_poses(n_board_poses, rig, board, focus, seed=seed + 1)
    return SyntheticScene(
        rig=rig, trajectories=trajectories, noise_px=noise_px, seed=seed,
        board=board, board_poses=board_poses,
        dropout={k: frozenset(v) for k, v in (dropout or {}).items()},
        start_frames=dict(start_frames or {}),
    )


def project_scene(scene: SyntheticScene):
    """Project ground truth into every camera.

    Returns ({camera: Detections2D}, [CornerObservation]). Points behind a
    camera or outside the sensor are dropped detections, not failures.
    Detection frame numbers are sample_index + start_frames[camera]
    (per-camera recording offsets for synchronisation fixtures); dropout
    masks name sample indices to omit for one camera.
    """
    rng = np.random.default_rng(scene.seed)
    detections: dict[str, Detections2D] = {}
    landmark_ids = sorted(scene.trajectories)
    for cam in scene.rig.cameras:
        offset = scene.start_frames.get(cam.name, 0)
        dropped = scene.dropout.get(cam.name, frozenset())
        R_cam = rodrigues(cam.extrinsics.rotvec)
        frames, lms, pix = [], [], []
        for lm in landmark_ids:
            traj = scene.trajectories[lm]
            ok = traj.present.copy()
            if dropped:
                ok[[i for i in dropped if 0 <= i < len(traj)]] = False
            idx = np.flatnonzero(ok)
            if idx.size == 0:
                continue
            world = traj.p[idx]
            z = world @ R_cam[2] + cam.extrinsics.tvec[2]
            idx, world = idx[z > 0], world[z > 0]
            if idx.size == 0:
                continue
            pixels = project_points(cam.intrinsics, cam.extrinsics, world)
            if scene.noise_px > 0:
                pixels = pixels + rng.normal(0.0, scene.noise_px, pixels.shape)
            in_frame = ((pixels[:, 0] >= 0) & (pixels[:, 0] < cam.intrinsics.width)
                        & (pixels[:, 1] >= 0) & (pixels[:, 1] < cam.intrinsics.height))
            frames += (idx[in_frame] + offset).tolist()
            lms += [lm] * int(np.count_nonzero(in_frame))
            pix += pixels[in_frame].tolist()
        detections[cam.name] = Detections2D(
            camera=cam.name, landmark_schema=scene.schema_id,
            frames=frames, landmark_ids=lms,
            pixels=np.array(pix) if pix else np.zeros((0, 2)),
            confidence=np.ones(len(frames)),
        )

    corners: list[CornerObservation] = []
    if scene.board is not None and scene.board_poses:
        board_xy = scene.board.corner_coords() / scene.rig.unit_scale
        board_xyz = np.hstack([board_xy, np.zeros((board_xy.shape[0], 1))])
        for cam in scene.rig.cameras:
            R_cam = rodrigues(cam.extrinsics.rotvec)
            for f, (rv, tv) in enumerate(scene.board_poses):
                world = board_xyz @ rodrigues(rv).T + tv
                cam_pts = world @ R_cam.T + cam.extrinsics.tvec
                in_front = cam_pts[:, 2] > 0
                if not np.any(in_front):
                    continue
                pixels = project_points(cam.intrinsics, cam.extrinsics, world[in_front])
                if scene.noise_px > 0:
                    pixels = pixels + rng.normal(0.0, scene.noise_px, pixels.shape)
                for cid, pixel in zip(np.flatnonzero(in_front), pixels):
                    if (0 <= pixel[0] < cam.intrinsics.width
                            and 0 <= pixel[1] < cam.intrinsics.height):
                        corners.append(CornerObservation(
                            camera=cam.name, frame=f, corner_id=int(cid), pixel=pixel))
    return detections, corners


def synth_led_trace(fps: float, on_frame: int, off_frame: int,
                    n_trials: int = 1, gap: int = 30, base_noise: int = 0,
                    high: int = 50, tail: int | None = None,
                    camera: str = "A"):
    """LED intensity trace with known ON spans.

    Trial k spans [on + k*(len+gap), off + k*(len+gap)] where len is the
    first trial's frame count. Returns (IntensityTrace, [(on, off), ...])
    so tests can assert exact recovery.
    """
    if not (0 <= on_frame < off_frame):
        raise ValidationError("need 0 <= on_frame < off_frame")
    if n_trials < 1:
        raise ValidationError("n_trials must be >= 1")
    if n_trials > 1 and gap < 1:
        raise OverlappingTrials(f"gap {gap} would merge adjacent trials")
    length = off_frame - on_frame + 1
    truth = [(on_frame + k * (length + gap), off_frame + k * (length + gap))
             for k in range(n_trials)]
    total = truth[-1][1] + 1 + (tail if tail is not None else max(gap, 5))
    counts = np.full(total, base_noise, dtype=int)
    for on, off in truth:
        counts[on: off + 1] = high
    return IntensityTrace(camera=camera, fps=fps, counts=counts), truth
