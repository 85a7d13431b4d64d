"""Interpretable kinematic features: joint angles, hull volume, apertures.

Features are relative quantities, invariant to rigid motion of the whole
landmark set. The hull is computed over all present landmarks of a frame
(the whole-set hull; coplanar sets give volume 0 rather than an error,
since a flat open hand is a physically meaningful pose).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateVertex, SchemaMismatch, TooFewPoints, ValidationError
from .trajectory import Trajectory3D


@dataclass
class LandmarkSchema:
    id: str
    names: list[str]
    edges: list[tuple[int, int]] = field(default_factory=list)
    angle_triples: list[tuple[int, int, int]] = field(default_factory=list)
    aperture_pairs: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.names)
        for group in (self.edges, self.angle_triples, self.aperture_pairs):
            for tup in group:
                if any(not (0 <= i < n) for i in tup):
                    raise ValidationError(f"schema '{self.id}': index {tup} out of range")

    @property
    def n_landmarks(self) -> int:
        return len(self.names)


_HAND21_NAMES = [
    "WRIST",
    "THUMB_CMC", "THUMB_MCP", "THUMB_IP", "THUMB_TIP",
    "INDEX_FINGER_MCP", "INDEX_FINGER_PIP", "INDEX_FINGER_DIP", "INDEX_FINGER_TIP",
    "MIDDLE_FINGER_MCP", "MIDDLE_FINGER_PIP", "MIDDLE_FINGER_DIP", "MIDDLE_FINGER_TIP",
    "RING_FINGER_MCP", "RING_FINGER_PIP", "RING_FINGER_DIP", "RING_FINGER_TIP",
    "PINKY_MCP", "PINKY_PIP", "PINKY_DIP", "PINKY_TIP",
]

_POSE33_NAMES = [
    "NOSE", "LEFT_EYE_INNER", "LEFT_EYE", "LEFT_EYE_OUTER", "RIGHT_EYE_INNER",
    "RIGHT_EYE", "RIGHT_EYE_OUTER", "LEFT_EAR", "RIGHT_EAR", "MOUTH_LEFT",
    "MOUTH_RIGHT", "LEFT_SHOULDER", "RIGHT_SHOULDER", "LEFT_ELBOW", "RIGHT_ELBOW",
    "LEFT_WRIST", "RIGHT_WRIST", "LEFT_PINKY", "RIGHT_PINKY", "LEFT_INDEX",
    "RIGHT_INDEX", "LEFT_THUMB", "RIGHT_THUMB", "LEFT_HIP", "RIGHT_HIP",
    "LEFT_KNEE", "RIGHT_KNEE", "LEFT_ANKLE", "RIGHT_ANKLE", "LEFT_HEEL",
    "RIGHT_HEEL", "LEFT_FOOT_INDEX", "RIGHT_FOOT_INDEX",
]


def _hand21() -> LandmarkSchema:
    # flexion angle per finger joint: vertex at MCP (from wrist), PIP, DIP;
    # the thumb chain CMC->MCP->IP->TIP is treated like the other fingers
    triples = []
    edges = []
    for base in (1, 5, 9, 13, 17):
        triples += [
            (0, base, base + 1),
            (base, base + 1, base + 2),
            (base + 1, base + 2, base + 3),
        ]
        edges += [(0, base), (base, base + 1), (base + 1, base + 2),
                  (base + 2, base + 3)]
    return LandmarkSchema(
        id="hand21", names=list(_HAND21_NAMES), edges=edges,
        angle_triples=triples,
        aperture_pairs=[(4, 8)],  # thumb tip to index tip
    )


def _pose33() -> LandmarkSchema:
    triples = [
        (11, 13, 15), (12, 14, 16),   # elbows
        (13, 11, 23), (14, 12, 24),   # shoulders
        (23, 25, 27), (24, 26, 28),   # knees
    ]
    edges = [(11, 13), (13, 15), (12, 14), (14, 16), (11, 12),
             (11, 23), (12, 24), (23, 24), (23, 25), (25, 27), (24, 26), (26, 28)]
    return LandmarkSchema(id="pose33", names=list(_POSE33_NAMES), edges=edges,
                          angle_triples=triples)


def _face468() -> LandmarkSchema:
    return LandmarkSchema(id="face468", names=[f"FACE_{i}" for i in range(468)])


SCHEMAS = {s.id: s for s in (_hand21(), _pose33(), _face468())}


def get_schema(schema_id: str) -> LandmarkSchema:
    try:
        return SCHEMAS[schema_id]
    except KeyError:
        raise SchemaMismatch(
            f"unknown landmark schema '{schema_id}'; known: {sorted(SCHEMAS)}"
        ) from None


def joint_angle(a, b, c) -> float:
    """Angle at vertex b between rays b->a and b->c, in degrees [0, 180]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    u, v = a - b, c - b
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu < 1e-12 or nv < 1e-12:
        raise DegenerateVertex("angle endpoint coincides with the vertex")
    cos = np.clip(float(u @ v) / (nu * nv), -1.0, 1.0)
    return float(np.degrees(np.arccos(cos)))


def hull_volume(points) -> float:
    """Volume of the 3D convex hull, by incremental construction.

    Coplanar/collinear point sets return 0.0. Raises TooFewPoints below
    4 points.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if pts.shape[0] < 4:
        raise TooFewPoints(f"hull needs >= 4 points, got {pts.shape[0]}")
    if not np.all(np.isfinite(pts)):
        raise ValidationError("points contain non-finite values")
    scale = float(np.max(np.linalg.norm(pts - pts.mean(axis=0), axis=1)))
    if scale == 0.0:
        return 0.0
    eps = 1e-10 * scale

    seed = _seed_tetrahedron(pts, eps)
    if seed is None:
        return 0.0  # degenerate (coplanar) set
    interior = pts[list(seed)].mean(axis=0)

    def orient(tri):
        a, b, c = pts[tri[0]], pts[tri[1]], pts[tri[2]]
        if np.dot(np.cross(b - a, c - a), interior - a) > 0:
            return (tri[0], tri[2], tri[1])
        return tri

    i0, i1, i2, i3 = seed
    faces = [orient(t) for t in
             [(i0, i1, i2), (i0, i1, i3), (i0, i2, i3), (i1, i2, i3)]]

    def signed_distance(tri, p):
        a = pts[tri[0]]
        n = np.cross(pts[tri[1]] - a, pts[tri[2]] - a)
        nn = np.linalg.norm(n)
        if nn < 1e-300:
            return -np.inf  # degenerate sliver face never sees anything
        return np.dot(n, p - a) / nn

    for idx in range(pts.shape[0]):
        if idx in seed:
            continue
        p = pts[idx]
        visible = [f for f in faces if signed_distance(f, p) > eps]
        if not visible:
            continue
        vis_set = set(visible)
        directed = set()
        for (a, b, c) in visible:
            directed |= {(a, b), (b, c), (c, a)}
        horizon = [(u, v) for (u, v) in directed if (v, u) not in directed]
        faces = [f for f in faces if f not in vis_set]
        faces += [(u, v, idx) for (u, v) in horizon]

    vol = 0.0
    for (a, b, c) in faces:
        vol += float(np.dot(np.cross(pts[b] - interior, pts[c] - interior),
                            pts[a] - interior))
    return abs(vol) / 6.0


def _seed_tetrahedron(pts: np.ndarray, eps: float):
    """Four affinely independent point indices, or None if all coplanar."""
    order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))
    i0 = int(order[0])
    d = np.linalg.norm(pts - pts[i0], axis=1)
    i1 = int(np.argmax(d))
    if d[i1] <= eps:
        return None
    axis = (pts[i1] - pts[i0]) / d[i1]
    cross = np.cross(pts - pts[i0], axis)
    dist_line = np.linalg.norm(cross, axis=1)
    i2 = int(np.argmax(dist_line))
    if dist_line[i2] <= eps:
        return None
    normal = np.cross(pts[i1] - pts[i0], pts[i2] - pts[i0])
    normal /= np.linalg.norm(normal)
    dist_plane = np.abs((pts - pts[i0]) @ normal)
    i3 = int(np.argmax(dist_plane))
    if dist_plane[i3] <= eps:
        return None
    return (i0, i1, i2, i3)


@dataclass
class FeatureTable:
    frames: np.ndarray
    names: list[str]
    values: np.ndarray  # (n_frames, n_features), NaN where missing


def feature_names(schema: LandmarkSchema) -> list[str]:
    names = [f"angle_{schema.names[b]}" for (_, b, _) in schema.angle_triples]
    names.append("hull_volume")
    names += [f"aperture_{schema.names[i]}_{schema.names[j]}"
              for (i, j) in schema.aperture_pairs]
    return names


def feature_table(trajs: dict[int, Trajectory3D], schema: LandmarkSchema) -> FeatureTable:
    """Per-frame feature rows from aligned per-marker trajectories.

    Missing landmarks propagate: angles/apertures touching them are NaN,
    the hull is NaN when fewer than 4 landmarks are present.
    """
    if not trajs:
        raise ValidationError("no trajectories")
    for lm in trajs:
        if not (0 <= lm < schema.n_landmarks):
            raise SchemaMismatch(
                f"landmark id {lm} outside schema '{schema.id}' "
                f"({schema.n_landmarks} landmarks)"
            )
    ref = next(iter(trajs.values()))
    for traj in trajs.values():
        if len(traj) != len(ref) or not np.allclose(traj.t, ref.t, atol=1e-12):
            raise SchemaMismatch("trajectories are not on a common time grid")

    n = len(ref)
    fps = ref.source_fps
    frames = (np.round(ref.t * fps).astype(int) if fps > 0 else np.arange(n))
    pos = np.full((n, schema.n_landmarks, 3), np.nan)
    for lm, traj in trajs.items():
        pos[:, lm, :] = traj.p

    names = feature_names(schema)
    values = np.full((n, len(names)), np.nan)
    for fi in range(n):
        col = 0
        for (a, b, c) in schema.angle_triples:
            trio = pos[fi, [a, b, c]]
            if not np.any(np.isnan(trio)):
                try:
                    values[fi, col] = joint_angle(*trio)
                except DegenerateVertex:
                    pass
            col += 1
        present = pos[fi][~np.any(np.isnan(pos[fi]), axis=1)]
        if present.shape[0] >= 4:
            values[fi, col] = hull_volume(present)
        col += 1
        for (i, j) in schema.aperture_pairs:
            pair = pos[fi, [i, j]]
            if not np.any(np.isnan(pair)):
                values[fi, col] = float(np.linalg.norm(pair[0] - pair[1]))
            col += 1
    return FeatureTable(frames=frames, names=names, values=values)


def write_feature_csv(table: FeatureTable, path) -> None:
    """frame column plus one column per named feature; missing = empty."""
    from pathlib import Path

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(["frame"] + table.names)]
    for fi in range(len(table.frames)):
        cells = [str(int(table.frames[fi]))]
        for v in table.values[fi]:
            cells.append("" if np.isnan(v) else repr(float(v)))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")
