"""Multi-view 3D reconstruction of 2D landmark detections.

Each pixel is undistorted to a normalised ray, then the point solves the
homogeneous system x_hat x (P X) = 0 stacked over cameras (two equations
per view, weighted by detection confidence) by SVD. Outliers are handled
with an exhaustive best-pair scan: camera counts stay small (<= ~8), so
scanning all pairs is deterministic and cheap, unlike randomised
sampling.

Reprojection errors are tracked per contributing camera in pixels, and
converted to millimetres with err_px * depth * unit_scale / mean focal
length. When several cameras contribute, the millimetre error is the
mean over the used cameras (the nearest-camera alternative is noted in
the output metadata).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cameras import CameraRig, camera_depth, rodrigues, undistort_point, undistort_points
from .errors import (
    DegenerateGeometry,
    EmptyInput,
    InsufficientViews,
    NonPositiveDepth,
    SchemaMismatch,
    ValidationError,
)

DETECTIONS_CSV_HEADER = ["frame", "landmark_id", "x_px", "y_px", "confidence"]
POINTS3D_CSV_HEADER = ["frame", "landmark_id", "X", "Y", "Z",
                       "n_cams", "reproj_error_px", "reproj_error_mm"]


@dataclass
class Detections2D:
    """Per-camera landmark detections: one row per (frame, landmark)."""

    camera: str
    landmark_schema: str
    frames: np.ndarray
    landmark_ids: np.ndarray
    pixels: np.ndarray       # (n,2)
    confidence: np.ndarray   # (n,)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=int)
        self.landmark_ids = np.asarray(self.landmark_ids, dtype=int)
        self.pixels = np.asarray(self.pixels, dtype=float).reshape(-1, 2)
        self.confidence = np.asarray(self.confidence, dtype=float)
        n = len(self.frames)
        if not (len(self.landmark_ids) == self.pixels.shape[0] == len(self.confidence) == n):
            raise ValidationError("detection column lengths differ")
        if np.any((self.confidence < 0) | (self.confidence > 1)):
            raise ValidationError("confidence must lie in [0, 1]")
        keys = set(zip(self.frames.tolist(), self.landmark_ids.tolist()))
        if len(keys) != n:
            raise ValidationError(
                f"camera '{self.camera}': duplicate (frame, landmark) rows"
            )

    def __len__(self) -> int:
        return len(self.frames)


@dataclass
class Point3DRecord:
    frame: int
    landmark_id: int
    position: np.ndarray | None
    n_cams_used: int
    reproj_error_px: float = math.nan
    reproj_error_mm: float = math.nan

    @property
    def missing(self) -> bool:
        return self.position is None


@dataclass
class TriangulationOptions:
    min_confidence: float = 0.5
    inlier_threshold_px: float = 20.0


class _Solver:
    """Precomputed per-camera geometry shared across many solves.

    Views are tuples (camera, pixel, confidence, normalised_xy) with the
    undistortion already done (vectorised upstream where it matters).
    """

    def __init__(self, rig: CameraRig):
        self.rig = rig
        self.R, self.t, self.P, self.K = {}, {}, {}, {}
        for cam in rig.cameras:
            R = rodrigues(cam.extrinsics.rotvec)
            t = cam.extrinsics.tvec
            self.R[cam.name] = R
            self.t[cam.name] = t
            self.P[cam.name] = np.hstack([R, t[:, None]])
            i = cam.intrinsics
            self.K[cam.name] = (i.fx, i.fy, i.cx, i.cy, tuple(i.dist))

    def view(self, camera: str, pixel, confidence: float):
        pixel = np.asarray(pixel, dtype=float).reshape(2)
        norm = undistort_point(self.rig.camera(camera).intrinsics, pixel)
        return (camera, pixel, confidence, norm)

    def dlt(self, views) -> np.ndarray:
        A = np.empty((2 * len(views), 4))
        for i, (name, _, conf, norm) in enumerate(views):
            P = self.P[name]
            A[2 * i] = conf * (norm[0] * P[2] - P[0])
            A[2 * i + 1] = conf * (norm[1] * P[2] - P[1])
        _, s, vt = np.linalg.svd(A)
        if s[-2] <= 1e-10 * max(s[0], 1e-300):
            raise DegenerateGeometry("triangulation nullspace dimension > 1")
        X = vt[-1]
        if abs(X[3]) < 1e-12 * np.linalg.norm(X[:3]):
            raise DegenerateGeometry("triangulated point at infinity")
        return X[:3] / X[3]

    def reproj_error(self, name: str, pos: np.ndarray, pixel: np.ndarray) -> float:
        cp = self.R[name] @ pos + self.t[name]
        if cp[2] <= 0:
            return math.inf
        x, y = cp[0] / cp[2], cp[1] / cp[2]
        fx, fy, cx, cy, (k1, k2, p1, p2, k3) = self.K[name]
        r2 = x * x + y * y
        rad = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        xd = x * rad + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        yd = y * rad + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
        return math.hypot(fx * xd + cx - pixel[0], fy * yd + cy - pixel[1])

    def errors(self, views, pos) -> dict[str, float]:
        return {name: self.reproj_error(name, pos, pixel)
                for name, pixel, _, _ in views}


def triangulate_point(rig: CameraRig, views):
    """DLT triangulation of one landmark from [(camera, pixel, confidence)].

    Returns (position (3,), {camera: reprojection error px}). Pixel errors
    of views that reproject behind a camera are reported as inf.
    """
    solver = _Solver(rig)
    prepared = [solver.view(name, pixel, conf) for name, pixel, conf in views]
    return _point_core(solver, prepared)


def _point_core(solver: _Solver, views):
    if len(views) < 2:
        raise InsufficientViews(f"triangulation needs >= 2 views, got {len(views)}")
    pos = solver.dlt(views)
    return pos, solver.errors(views, pos)


def triangulate_ransac(rig: CameraRig, views, inlier_threshold_px: float = 20.0):
    """Outlier-robust triangulation via an exhaustive camera-pair scan.

    Every pair is triangulated and scored by its mean reprojection error
    over ALL views; the best pair's inliers (error <= threshold) are then
    re-triangulated together. Returns (position, inlier camera set,
    {camera: error px}); the refined point never has a worse all-inlier
    error than the pair solution it grew from.
    """
    solver = _Solver(rig)
    prepared = [solver.view(name, pixel, conf) for name, pixel, conf in views]
    return _ransac_core(solver, prepared, inlier_threshold_px)


def _ransac_core(solver: _Solver, views, inlier_threshold_px: float):
    if len(views) < 2:
        raise InsufficientViews(f"triangulation needs >= 2 views, got {len(views)}")
    if len(views) == 2:
        pos, errs = _point_core(solver, views)
        return pos, {v[0] for v in views}, errs

    best = None
    for i in range(len(views)):
        for j in range(i + 1, len(views)):
            try:
                pos = solver.dlt([views[i], views[j]])
            except DegenerateGeometry:
                continue
            errs = solver.errors(views, pos)
            score = float(np.mean(list(errs.values())))
            if best is None or score < best[0]:
                best = (score, (i, j), pos, errs)
    if best is None:
        raise DegenerateGeometry("every camera pair is degenerate")
    _, (bi, bj), pair_pos, pair_errs = best

    inliers = {name for name, err in pair_errs.items() if err <= inlier_threshold_px}
    if len(inliers) < 2:
        # not even the winning pair agrees: return its raw solution so the
        # caller sees n_cams_used = 2 with a large error and may drop it
        inliers = {views[bi][0], views[bj][0]}
        return pair_pos, inliers, {n: pair_errs[n] for n in inliers}

    inlier_views = [v for v in views if v[0] in inliers]
    try:
        refined = solver.dlt(inlier_views)
    except DegenerateGeometry:
        refined = pair_pos
    # keep whichever point reprojects better over the inliers, so the
    # refinement can never be worse than the pair it grew from
    mean_ref = float(np.mean(list(solver.errors(inlier_views, refined).values())))
    mean_pair = float(np.mean([pair_errs[n] for n in inliers]))
    if mean_ref > mean_pair:
        refined = pair_pos
    return refined, inliers, solver.errors(inlier_views, refined)


def px_to_mm(rig: CameraRig, camera: str, point, err_px: float) -> float:
    """Pixel error to millimetres at the point's depth for one camera."""
    cam = rig.camera(camera)
    z = camera_depth(cam.extrinsics, point)
    if z <= 0:
        raise NonPositiveDepth(f"point behind camera '{camera}' (z={z})")
    return float(err_px * (z * rig.unit_scale) / cam.intrinsics.f_mean)


def triangulate_trial(rig: CameraRig, detections, opts: TriangulationOptions | None = None
                      ) -> list[Point3DRecord]:
    """Reconstruct every (frame, landmark) of a trial.

    `detections` is a list/dict of per-camera Detections2D sharing one
    landmark schema. Landmarks with fewer than 2 confident views are
    recorded as missing (not zero). Frames span the min..max frame index
    seen in any camera; landmarks are the union of observed ids.
    """
    opts = opts or TriangulationOptions()
    if isinstance(detections, dict):
        dets = [detections[k] for k in sorted(detections)]
    else:
        dets = sorted(detections, key=lambda d: d.camera)
    if not dets or all(len(d) == 0 for d in dets):
        raise EmptyInput("no detections")
    schemas = {d.landmark_schema for d in dets}
    if len(schemas) != 1:
        raise SchemaMismatch(f"detections carry different schemas: {sorted(schemas)}")

    solver = _Solver(rig)
    unit = rig.unit_scale
    # undistort per camera in one vectorised pass
    tables: dict[str, dict[tuple[int, int], tuple]] = {}
    for d in dets:
        if len(d) == 0:
            tables[d.camera] = {}
            continue
        norms = undistort_points(rig.camera(d.camera).intrinsics, d.pixels)
        tables[d.camera] = {
            (int(f), int(l)): (d.camera, d.pixels[i], float(d.confidence[i]), norms[i])
            for i, (f, l) in enumerate(zip(d.frames, d.landmark_ids))
        }
    f_mean = {c.name: c.intrinsics.f_mean for c in rig.cameras}

    all_frames = np.concatenate([d.frames for d in dets if len(d)])
    frame_lo, frame_hi = int(all_frames.min()), int(all_frames.max())
    landmark_ids = sorted({int(l) for d in dets for l in d.landmark_ids})

    records: list[Point3DRecord] = []
    for frame in range(frame_lo, frame_hi + 1):
        for lm in landmark_ids:
            views = []
            for cam_name, table in tables.items():
                hit = table.get((frame, lm))
                if hit is not None and hit[2] >= opts.min_confidence:
                    views.append(hit)
            if len(views) < 2:
                records.append(Point3DRecord(frame=frame, landmark_id=lm,
                                             position=None, n_cams_used=len(views)))
                continue
            try:
                pos, inliers, errs = _ransac_core(solver, views,
                                                  opts.inlier_threshold_px)
            except DegenerateGeometry:
                records.append(Point3DRecord(frame=frame, landmark_id=lm,
                                             position=None, n_cams_used=0))
                continue
            err_px = float(np.mean([errs[n] for n in inliers]))
            mm = []
            for n in inliers:
                z = solver.R[n][2] @ pos + solver.t[n][2]
                mm.append(errs[n] * (z * unit) / f_mean[n] if z > 0 else math.inf)
            records.append(Point3DRecord(
                frame=frame, landmark_id=lm, position=pos,
                n_cams_used=len(inliers), reproj_error_px=err_px,
                reproj_error_mm=float(np.mean(mm)),
            ))
    return records


# -- CSV ----------------------------------------------------------------------

def read_detections_csv(path, camera: str, landmark_schema: str) -> Detections2D:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != DETECTIONS_CSV_HEADER:
            raise ValidationError(
                f"{path}: expected header {','.join(DETECTIONS_CSV_HEADER)}"
            )
        rows = [r for r in reader if r]
    return Detections2D(
        camera=camera, landmark_schema=landmark_schema,
        frames=[int(r[0]) for r in rows],
        landmark_ids=[int(r[1]) for r in rows],
        pixels=[(float(r[2]), float(r[3])) for r in rows] or np.zeros((0, 2)),
        confidence=[float(r[4]) for r in rows],
    )


def write_detections_csv(det: Detections2D, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(DETECTIONS_CSV_HEADER)]
    order = np.lexsort((det.landmark_ids, det.frames))
    for i in order:
        lines.append(f"{det.frames[i]},{det.landmark_ids[i]},"
                     f"{float(det.pixels[i, 0])!r},{float(det.pixels[i, 1])!r},"
                     f"{float(det.confidence[i])!r}")
    path.write_text("\n".join(lines) + "\n")


def write_points3d_csv(records, path) -> None:
    """3D output CSV; missing records keep their row with empty fields."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(POINTS3D_CSV_HEADER)]
    for r in records:
        if r.missing:
            lines.append(f"{r.frame},{r.landmark_id},,,,{r.n_cams_used},,")
        else:
            lines.append(
                f"{r.frame},{r.landmark_id},"
                f"{float(r.position[0])!r},{float(r.position[1])!r},"
                f"{float(r.position[2])!r},{r.n_cams_used},"
                f"{float(r.reproj_error_px)!r},{float(r.reproj_error_mm)!r}"
            )
    path.write_text("\n".join(lines) + "\n")


def read_points3d_csv(path) -> list[Point3DRecord]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != POINTS3D_CSV_HEADER:
            raise ValidationError(
                f"{path}: expected header {','.join(POINTS3D_CSV_HEADER)}"
            )
        records = []
        for row in reader:
            if not row:
                continue
            frame, lm = int(row[0]), int(row[1])
            if row[2] == "":
                records.append(Point3DRecord(frame=frame, landmark_id=lm,
                                             position=None, n_cams_used=int(row[5])))
            else:
                records.append(Point3DRecord(
                    frame=frame, landmark_id=lm,
                    position=np.array([float(row[2]), float(row[3]), float(row[4])]),
                    n_cams_used=int(row[5]),
                    reproj_error_px=float(row[6]),
                    reproj_error_mm=float(row[7]),
                ))
    return records
