"""Per-marker 3D time series: gap filling, uniform resampling, derivatives.

Missing samples are NaN rows. Interpolation is linear on purpose: spline
fills overshoot near occlusion boundaries. Derivatives are repeated
central differences (one-sided at the ends) with no pre-smoothing; the
smoothness metric downstream documents its noise sensitivity instead of
hiding it behind an implicit filter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContainsGaps, NonUniform, TooShort, ValidationError


@dataclass
class Trajectory3D:
    landmark_id: int
    t: np.ndarray            # (n,) seconds, strictly increasing
    p: np.ndarray            # (n,3), NaN rows where missing
    source_fps: float = 0.0

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.p = np.asarray(self.p, dtype=float).reshape(-1, 3)
        if len(self.t) != len(self.p):
            raise ValidationError("t and p lengths differ")
        if len(self.t) > 1 and np.any(np.diff(self.t) <= 0):
            raise ValidationError("sample times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def present(self) -> np.ndarray:
        return ~np.any(np.isnan(self.p), axis=1)


def interpolate_gaps(traj: Trajectory3D, max_gap_frames: int) -> Trajectory3D:
    """Fill interior missing runs of length <= max_gap_frames linearly.

    Longer runs and leading/trailing gaps stay missing (no extrapolation).
    Idempotent.
    """
    present = traj.present
    p = traj.p.copy()
    idx = np.flatnonzero(present)
    if idx.size >= 2:
        for a, b in zip(idx[:-1], idx[1:]):
            gap = b - a - 1
            if 0 < gap <= max_gap_frames:
                w = (traj.t[a + 1: b] - traj.t[a]) / (traj.t[b] - traj.t[a])
                p[a + 1: b] = traj.p[a] + w[:, None] * (traj.p[b] - traj.p[a])
    return Trajectory3D(landmark_id=traj.landmark_id, t=traj.t.copy(), p=p,
                        source_fps=traj.source_fps)


def resample_uniform(traj: Trajectory3D, dt: float) -> Trajectory3D:
    """Linear resampling onto the grid t[0], t[0]+dt, ...

    Grid samples falling inside unfilled gaps (either neighbour missing)
    come out missing. Raises TooShort with fewer than 2 present samples.
    """
    if dt <= 0:
        raise ValidationError("dt must be positive")
    present = traj.present
    if np.count_nonzero(present) < 2:
        raise TooShort("resampling needs >= 2 present samples")
    t0, t1 = traj.t[0], traj.t[-1]
    n = int(np.floor((t1 - t0) / dt + 1e-9)) + 1
    grid = t0 + dt * np.arange(n)
    seg = np.clip(np.searchsorted(traj.t, grid, side="right") - 1, 0, len(traj) - 2)
    lo, hi = seg, seg + 1
    denom = traj.t[hi] - traj.t[lo]
    w = (grid - traj.t[lo]) / denom
    out = traj.p[lo] + w[:, None] * (traj.p[hi] - traj.p[lo])
    exact_hi = np.isclose(grid, traj.t[hi], rtol=0.0, atol=1e-12)
    out[exact_hi] = traj.p[hi[exact_hi]]
    exact_lo = np.isclose(grid, traj.t[lo], rtol=0.0, atol=1e-12)
    out[exact_lo] = traj.p[lo[exact_lo]]
    return Trajectory3D(landmark_id=traj.landmark_id, t=grid, p=out,
                        source_fps=traj.source_fps)


@dataclass
class Kinematics:
    speed: np.ndarray         # (n,)
    accel_mag: np.ndarray     # (n,)
    jerk: np.ndarray          # (n,3)
    path_length: float
    dt: float


def _check_uniform(traj: Trajectory3D) -> float:
    if len(traj) < 2:
        raise TooShort("need >= 2 samples")
    steps = np.diff(traj.t)
    dt = float(steps[0])
    if np.any(np.abs(steps - dt) > 1e-9 * max(dt, 1.0)):
        raise NonUniform("sampling interval varies")
    return dt


def kinematics(traj: Trajectory3D) -> Kinematics:
    """Speed, acceleration magnitude, jerk vectors and path length.

    Requires uniform sampling and no gaps in the evaluated span.
    Derivatives: np.gradient applied repeatedly (central differences,
    one-sided ends); jerk is the third derivative / dt^3.
    """
    dt = _check_uniform(traj)
    if not np.all(traj.present):
        raise ContainsGaps("series contains missing samples")
    vel = np.gradient(traj.p, dt, axis=0)
    acc = np.gradient(vel, dt, axis=0)
    jerk = np.gradient(acc, dt, axis=0)
    path = float(np.sum(np.linalg.norm(np.diff(traj.p, axis=0), axis=1)))
    return Kinematics(
        speed=np.linalg.norm(vel, axis=1),
        accel_mag=np.linalg.norm(acc, axis=1),
        jerk=jerk,
        path_length=path,
        dt=dt,
    )


def reversal_flags(p: np.ndarray) -> np.ndarray:
    """Boolean mask of direction reversals (NaN-tolerant: NaN never flags).

    Sample i is flagged iff (p[i+1]-p[i]) . (p[i]-p[i-1]) < 0 -- the full
    3D displacement dot product, so the test is invariant to rigid
    motions of the whole series.
    """
    p = np.asarray(p, dtype=float)
    flags = np.zeros(len(p), dtype=bool)
    if len(p) >= 3:
        d = np.diff(p, axis=0)
        with np.errstate(invalid="ignore"):
            dots = np.sum(d[1:] * d[:-1], axis=1)
            flags[1:-1] = dots < 0
    return flags


def detect_reversals(traj: Trajectory3D) -> set[int]:
    """Indices of direction reversals in a uniform, gap-free series."""
    _check_uniform(traj)
    if not np.all(traj.present):
        raise ContainsGaps("series contains missing samples")
    return {int(i) for i in np.flatnonzero(reversal_flags(traj.p))}
