"""Tracking-quality metrics: lag-one correlation, smoothness, 3D error, ICC.

All per-trial values are medians across markers. The correlation runs on
each marker's 3D vector magnitude over a uniform 5 ms grid, pairing each
sample with the next and discarding pairs at direction reversals (both
minimal inter-frame motion and natural reversals would otherwise bias
the value). Smoothness is the log dimensionless jerk

    LDJ = ln( (T^5 / L^2) * integral |d^3 p/dt^3|^2 dt )

with T the window duration and L the path length; the positive-log,
path-length-normalised convention puts simple object manipulations in
the 7-10 band and complex actions in 11-14. Derivatives come unsmoothed
from repeated central differences, so LDJ is sensitive to detection
noise by design; resample/interpolate first.

3D error per trial is the median across markers of per-marker median
millimetre reprojection error; the large-error percentage counts frames
whose median marker error exceeds a body-part threshold (10 mm hands and
faces, 30 mm elbows/shoulders).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ContainsGaps,
    DegenerateVariance,
    DegenerateZeroJerk,
    EmptyInput,
    TooShort,
    ValidationError,
    ZeroPath,
    ZeroVariance,
)
from .trajectory import Trajectory3D, _check_uniform, kinematics, reversal_flags

LARGE_ERROR_MM = {
    "right_hand": 10.0,
    "left_hand": 10.0,
    "face": 10.0,
    "full_body": 30.0,
}

CORRELATION_MODES = ("position", "displacement")


def large_error_threshold_mm(body_part: str) -> float:
    try:
        return LARGE_ERROR_MM[body_part]
    except KeyError:
        raise ValidationError(
            f"unknown body part '{body_part}'; expected one of {sorted(LARGE_ERROR_MM)}"
        ) from None


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y) or len(x) < 2:
        raise ValidationError("pearson needs two equal-length series of >= 2 samples")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    # scale-aware zero test: a constant series leaves only rounding dust
    # of order eps * |value| * sqrt(n) in the centred sum of squares
    tol = 1e-12 * max(float(np.abs(x).max()), float(np.abs(y).max()), 1.0) * math.sqrt(len(x))
    if sx <= tol or sy <= tol:
        raise ZeroVariance("constant series")
    return float((dx @ dy) / (sx * sy))


def marker_interframe_corr(traj: Trajectory3D, mode: str = "position") -> float:
    """Lag-one Pearson of one marker's magnitude series on a uniform grid.

    Pairs touching a direction reversal or a missing sample are skipped.
    Raises ZeroVariance for a stationary marker, TooShort with < 3 usable
    pairs.
    """
    if mode not in CORRELATION_MODES:
        raise ValidationError(f"unknown correlation mode '{mode}'")
    _check_uniform(traj)
    present = traj.present
    flags = reversal_flags(traj.p)
    if mode == "position":
        m = np.linalg.norm(traj.p, axis=1)
        ok = present & ~flags
    else:
        m = np.linalg.norm(np.diff(traj.p, axis=0), axis=1)
        ok = (present[:-1] & present[1:]) & ~(flags[:-1] | flags[1:])
    valid = ok[:-1] & ok[1:]
    if np.count_nonzero(valid) < 3:
        raise TooShort("fewer than 3 usable lag-one pairs")
    i = np.flatnonzero(valid)
    return pearson(m[i], m[i + 1])


@dataclass
class TrialCorrelation:
    value: float
    per_marker: dict[int, float] = field(default_factory=dict)
    n_excluded: int = 0
    mode: str = "position"


def interframe_correlation(trajs, mode: str = "position") -> TrialCorrelation:
    """Median lag-one correlation across markers (stationary ones excluded)."""
    per_marker = {}
    excluded = 0
    for traj in _iter_trajs(trajs):
        try:
            per_marker[traj.landmark_id] = marker_interframe_corr(traj, mode=mode)
        except (ZeroVariance, TooShort):
            excluded += 1
    if not per_marker:
        raise ZeroVariance("no marker produced a defined correlation")
    return TrialCorrelation(value=float(np.median(list(per_marker.values()))),
                            per_marker=per_marker, n_excluded=excluded, mode=mode)


def ldj(traj: Trajectory3D, window: tuple[float, float] | None = None) -> float:
    """Log dimensionless jerk of one marker over a time window.

    window is (t_start, t_end) inclusive in seconds, defaulting to the
    whole trial. Needs >= 8 uniform gap-free samples; raises ZeroPath /
    DegenerateZeroJerk for motionless or constant-velocity spans.
    """
    _check_uniform(traj)
    if window is not None:
        t1, t2 = window
        sel = (traj.t >= t1 - 1e-12) & (traj.t <= t2 + 1e-12)
        traj = Trajectory3D(landmark_id=traj.landmark_id, t=traj.t[sel],
                            p=traj.p[sel], source_fps=traj.source_fps)
    if len(traj) < 8:
        raise TooShort(f"LDJ window has {len(traj)} samples; need >= 8")
    if not np.all(traj.present):
        raise ContainsGaps("LDJ window contains missing samples")
    kin = kinematics(traj)
    if kin.path_length <= 0.0:
        raise ZeroPath("no motion in the window")
    jerk_sq = np.sum(kin.jerk ** 2, axis=1)
    integral = float(np.trapezoid(jerk_sq, dx=kin.dt))
    T = float(traj.t[-1] - traj.t[0])
    value = T ** 5 / kin.path_length ** 2 * integral
    # constant-velocity spans leave only floating-point dust in the jerk;
    # the dimensionless value of any real motion is orders above 1e-9
    if value <= 1e-9:
        raise DegenerateZeroJerk("squared-jerk integral is zero")
    return float(np.log(value))


@dataclass
class TrialLdj:
    value: float
    per_marker: dict[int, float] = field(default_factory=dict)
    n_excluded: int = 0


def trial_ldj(trajs) -> TrialLdj:
    """Median LDJ across markers, each over its longest gap-free span."""
    per_marker = {}
    excluded = 0
    for traj in _iter_trajs(trajs):
        span = _longest_present_run(traj)
        if span is None:
            excluded += 1
            continue
        a, b = span
        sub = Trajectory3D(landmark_id=traj.landmark_id, t=traj.t[a:b],
                           p=traj.p[a:b], source_fps=traj.source_fps)
        try:
            per_marker[traj.landmark_id] = ldj(sub)
        except (TooShort, ZeroPath, DegenerateZeroJerk, ContainsGaps):
            excluded += 1
    if not per_marker:
        raise EmptyInput("no marker produced a defined LDJ")
    return TrialLdj(value=float(np.median(list(per_marker.values()))),
                    per_marker=per_marker, n_excluded=excluded)


def _longest_present_run(traj: Trajectory3D):
    best, cur_start, best_len = None, None, 0
    present = traj.present
    for i, ok in enumerate(np.append(present, False)):
        if ok and cur_start is None:
            cur_start = i
        elif not ok and cur_start is not None:
            if i - cur_start > best_len:
                best, best_len = (cur_start, i), i - cur_start
            cur_start = None
    if best is None or best_len < 8:
        return None
    return best


@dataclass
class ErrorSummary:
    median_mm: float
    pct_large: float
    threshold_mm: float
    n_frames: int
    n_markers: int


def error_summary(records, threshold_mm: float) -> ErrorSummary:
    """Trial 3D-error statistics from triangulation records.

    median_mm: median across markers of each marker's median error.
    pct_large: percentage of frames (with >= 1 valid record) whose median
    marker error exceeds the threshold.
    """
    valid = [r for r in records
             if not r.missing and np.isfinite(r.reproj_error_mm)]
    if not valid:
        raise EmptyInput("no valid 3D records")
    by_marker: dict[int, list[float]] = {}
    by_frame: dict[int, list[float]] = {}
    for r in valid:
        by_marker.setdefault(r.landmark_id, []).append(r.reproj_error_mm)
        by_frame.setdefault(r.frame, []).append(r.reproj_error_mm)
    marker_medians = [float(np.median(v)) for _, v in sorted(by_marker.items())]
    frame_medians = np.array([float(np.median(v)) for _, v in sorted(by_frame.items())])
    pct = 100.0 * float(np.count_nonzero(frame_medians > threshold_mm)) / len(frame_medians)
    return ErrorSummary(
        median_mm=float(np.median(marker_medians)),
        pct_large=pct,
        threshold_mm=threshold_mm,
        n_frames=len(frame_medians),
        n_markers=len(marker_medians),
    )


def icc_a1(ratings) -> float:
    """Absolute-agreement single-measure ICC from two-way ANOVA mean squares.

    ratings is an (n subjects x k conditions) matrix with no missing
    cells. ICC = (MS_R - MS_E) / (MS_R + (k-1) MS_E + (k/n)(MS_C - MS_E)).
    """
    x = np.asarray(ratings, dtype=float)
    if x.ndim != 2:
        raise ValidationError("ratings must be a 2-D matrix")
    n, k = x.shape
    if n < 2 or k < 2:
        raise ValidationError(f"need >= 2 subjects and >= 2 conditions, got {n}x{k}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("ratings contain missing/non-finite cells")
    grand = x.mean()
    ss_total = float(np.sum((x - grand) ** 2))
    ss_rows = k * float(np.sum((x.mean(axis=1) - grand) ** 2))
    ss_cols = n * float(np.sum((x.mean(axis=0) - grand) ** 2))
    ss_err = ss_total - ss_rows - ss_cols
    ms_r = ss_rows / (n - 1)
    ms_c = ss_cols / (k - 1)
    ms_e = ss_err / ((n - 1) * (k - 1))
    denom = ms_r + (k - 1) * ms_e + (k / n) * (ms_c - ms_e)
    if abs(denom) < 1e-300 or ss_total == 0.0:
        raise DegenerateVariance("no variance between subjects")
    return float((ms_r - ms_e) / denom)


def _iter_trajs(trajs):
    if isinstance(trajs, dict):
        return [trajs[k] for k in sorted(trajs)]
    return list(trajs)


# -- per-trial assembly --------------------------------------------------------

def records_to_trajectories(records, fps: float) -> dict[int, Trajectory3D]:
    """Triangulation records -> one Trajectory3D per landmark (t = frame/fps)."""
    if not records:
        raise EmptyInput("no records")
    frames = sorted({r.frame for r in records})
    lo, hi = frames[0], frames[-1]
    n = hi - lo + 1
    landmarks = sorted({r.landmark_id for r in records})
    t = (lo + np.arange(n)) / fps
    out = {}
    pos = {lm: np.full((n, 3), np.nan) for lm in landmarks}
    for r in records:
        if not r.missing:
            pos[r.landmark_id][r.frame - lo] = r.position
    for lm in landmarks:
        out[lm] = Trajectory3D(landmark_id=lm, t=t.copy(), p=pos[lm], source_fps=fps)
    return out


@dataclass
class TrialMetrics:
    corr_median: float
    ldj_median: float
    err_mm_median: float
    pct_large_errors: float
    n_frames: int
    n_markers: int
    n_corr_excluded: int
    n_ldj_excluded: int
    dt: float
    threshold_mm: float
    correlation_mode: str


def compute_trial_metrics(records, fps: float, *, dt: float = 0.005,
                          max_gap_frames: int = 5, threshold_mm: float = 10.0,
                          correlation_mode: str = "position",
                          unit_scale_mm: float = 1.0) -> TrialMetrics:
    """All per-trial metrics from triangulation records.

    Positions are rescaled to millimetres (unit_scale_mm per world unit)
    before the magnitude-based correlation so the mode is unit-stable;
    LDJ is scale-invariant either way.
    """
    from .trajectory import interpolate_gaps, resample_uniform

    trajs = records_to_trajectories(records, fps)
    prepared = {}
    for lm, traj in trajs.items():
        filled = interpolate_gaps(traj, max_gap_frames)
        try:
            prepared[lm] = resample_uniform(filled, dt)
        except TooShort:
            continue
    if not prepared:
        raise EmptyInput("no marker has enough samples for the metric grid")
    if unit_scale_mm != 1.0:
        prepared = {
            lm: Trajectory3D(landmark_id=t.landmark_id, t=t.t,
                             p=t.p * unit_scale_mm, source_fps=t.source_fps)
            for lm, t in prepared.items()
        }
    corr = interframe_correlation(prepared, mode=correlation_mode)
    smooth = trial_ldj(prepared)
    errs = error_summary(records, threshold_mm)
    return TrialMetrics(
        corr_median=corr.value,
        ldj_median=smooth.value,
        err_mm_median=errs.median_mm,
        pct_large_errors=errs.pct_large,
        n_frames=errs.n_frames,
        n_markers=errs.n_markers,
        n_corr_excluded=corr.n_excluded,
        n_ldj_excluded=smooth.n_excluded,
        dt=dt,
        threshold_mm=threshold_mm,
        correlation_mode=correlation_mode,
    )
