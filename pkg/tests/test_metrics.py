"""Metric oracles.

LDJ reference: the minimum-jerk profile x(tau) = D(10 tau^3 - 15 tau^4
+ 6 tau^5) has third derivative D(60 - 360 tau + 360 tau^2)/T^3 whose
squared integral over [0,T] is 720 D^2 / T^5 (checked below by
quadrature of the closed form), and its path length is |D|, so
LDJ = ln(T^5/L^2 * 720 L^2 / T^5) = ln(720) ~ 6.5793.

ICC reference for [[1,2],[3,4],[5,6]]: grand mean 3.5, row means
(1.5, 3.5, 5.5) -> SS_rows = 2*(4+0+4) = 16, MS_R = 8; column means
(3, 4) -> SS_cols = 3*0.5 = 1.5, MS_C = 1.5; SS_total = 17.5 so
MS_E = 0; ICC = 8 / (8 + 0 + (2/3)*1.5) = 8/9.
"""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mocapkit.errors import (
    DegenerateVariance,
    DegenerateZeroJerk,
    EmptyInput,
    ValidationError,
    ZeroVariance,
)
from mocapkit.metrics import (
    error_summary,
    icc_a1,
    interframe_correlation,
    large_error_threshold_mm,
    ldj,
    marker_interframe_corr,
    pearson,
    records_to_trajectories,
    trial_ldj,
)
from mocapkit.synthetic import min_jerk_trajectory
from mocapkit.trajectory import Trajectory3D
from mocapkit.triangulate import Point3DRecord

LN720 = float(np.log(720.0))


def _traj(p, dt=0.005):
    p = np.asarray(p, dtype=float)
    return Trajectory3D(0, np.arange(len(p)) * dt, p, 1.0 / dt)


class TestPearson:
    def test_hand_computed_example(self):
        assert pearson([1, 2, 4], [1, 3, 5]) == pytest.approx(0.9820, abs=1e-4)

    def test_zero_variance(self):
        with pytest.raises(ZeroVariance):
            pearson([1, 1, 1], [1, 2, 3])


class TestInterframeCorrelation:
    def test_constant_velocity_ray_is_one(self):
        # magnitude series is linear, so lag-one pairs are perfectly related
        t = np.arange(0, 1, 0.005)
        p = np.outer(1.0 + t, [1.0, 0.0, 0.0])
        res = interframe_correlation({0: _traj(p)})
        assert res.value == pytest.approx(1.0, abs=1e-12)

    def test_stationary_marker_excluded_with_count(self):
        t = np.arange(0, 1, 0.005)
        moving = np.outer(1.0 + t, [1.0, 0.0, 0.0])
        frozen = np.ones((len(t), 3))
        res = interframe_correlation({0: _traj(moving), 1: _traj(frozen)})
        assert res.n_excluded == 1
        assert set(res.per_marker) == {0}

    def test_all_stationary_raises(self):
        with pytest.raises(ZeroVariance):
            interframe_correlation({0: _traj(np.ones((40, 3)))})

    def test_scaling_and_time_reversal_invariant(self):
        rng = np.random.default_rng(0)
        p = np.cumsum(rng.normal(size=(200, 3)), axis=0) + 50.0
        base = interframe_correlation({0: _traj(p)}).value
        assert interframe_correlation({0: _traj(3.0 * p)}).value == pytest.approx(base, abs=1e-12)
        assert interframe_correlation({0: _traj(p[::-1])}).value == pytest.approx(base, abs=1e-9)

    def test_reversal_pairs_are_discarded(self):
        # an out-and-back ray: without dropping the turnaround pair the
        # correlation picks up an artificial dip at the reversal
        vals = np.concatenate([np.linspace(1, 2, 30), np.linspace(2, 1, 30)[1:]])
        p = np.outer(vals, [1.0, 0.0, 0.0])
        from mocapkit.trajectory import reversal_flags

        assert reversal_flags(p)[29]
        assert marker_interframe_corr(_traj(p)) > 0.99

    def test_displacement_mode(self):
        rng = np.random.default_rng(1)
        p = np.cumsum(rng.normal(size=(300, 3)), axis=0)
        res = interframe_correlation({0: _traj(p)}, mode="displacement")
        assert -1.0 <= res.value <= 1.0
        assert res.mode == "displacement"

    def test_unknown_mode(self):
        with pytest.raises(ValidationError):
            interframe_correlation({0: _traj(np.ones((9, 3)))}, mode="nope")


class TestLdj:
    def test_minimum_jerk_reference_value(self):
        traj = min_jerk_trajectory(D=(0.3, 0.1, 0.2), T=1.0, fps=200.0)
        assert ldj(traj) == pytest.approx(LN720, rel=0.01)

    def test_quadrature_oracle_for_jerk_integral(self):
        # independent check of the closed-form constant 720
        D, T = np.array([0.3, 0.1, 0.2]), 1.0
        tau = np.linspace(0.0, 1.0, 200001)
        j = np.linalg.norm(D) * (60.0 - 360.0 * tau + 360.0 * tau ** 2) / T ** 3
        integral = np.trapezoid(j ** 2, tau * T)
        assert integral == pytest.approx(720.0 * float(D @ D) / T ** 5, rel=1e-6)

    def test_constant_velocity_degenerate(self):
        t = np.arange(20) * 0.005
        with pytest.raises(DegenerateZeroJerk):
            ldj(Trajectory3D(0, t, np.outer(t, [1.0, 0, 0]), 200.0))

    def test_spatial_scaling_invariant(self):
        traj = min_jerk_trajectory(D=(0.2, 0.0, 0.1), T=1.0, fps=200.0)
        double = Trajectory3D(0, traj.t, traj.p * 2.0, traj.source_fps)
        assert ldj(double) == pytest.approx(ldj(traj), abs=1e-6)

    def test_time_scaling_invariant(self):
        traj = min_jerk_trajectory(D=(0.2, 0.0, 0.1), T=1.0, fps=200.0)
        slow = Trajectory3D(0, traj.t * 2.0, traj.p, traj.source_fps / 2.0)
        assert ldj(slow) == pytest.approx(ldj(traj), abs=1e-6)

    def test_window_selects_subrange(self):
        traj = min_jerk_trajectory(D=(0.2, 0.0, 0.1), T=1.0, fps=200.0)
        full = ldj(traj)
        sub = ldj(traj, window=(0.2, 0.8))
        assert sub != pytest.approx(full, abs=1e-3)

    def test_trial_median_over_markers(self):
        trajs = {i: min_jerk_trajectory(D=(0.1 * (i + 1), 0.05, 0.0), T=1.0,
                                        fps=200.0, landmark_id=i)
                 for i in range(3)}
        res = trial_ldj(trajs)
        assert res.value == pytest.approx(LN720, rel=0.01)
        assert res.n_excluded == 0


def _record(frame, lm, err_mm):
    return Point3DRecord(frame=frame, landmark_id=lm, position=np.zeros(3),
                         n_cams_used=2, reproj_error_px=1.0, reproj_error_mm=err_mm)


class TestErrorSummary:
    def test_pct_large_by_frame_median(self):
        records = [_record(f, 0, e) for f, e in enumerate([5.0, 12.0, 8.0, 40.0])]
        res = error_summary(records, threshold_mm=10.0)
        assert res.pct_large == pytest.approx(50.0)

    def test_all_zero(self):
        records = [_record(f, lm, 0.0) for f in range(4) for lm in range(3)]
        res = error_summary(records, threshold_mm=10.0)
        assert res.median_mm == 0.0
        assert res.pct_large == 0.0

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(0)
        records = [_record(f, lm, float(rng.gamma(2.0, 4.0)))
                   for f in range(50) for lm in range(5)]
        pcts = [error_summary(records, threshold_mm=th).pct_large
                for th in (1.0, 5.0, 10.0, 20.0, 50.0)]
        assert all(a >= b for a, b in zip(pcts, pcts[1:]))

    def test_empty(self):
        with pytest.raises(EmptyInput):
            error_summary([Point3DRecord(0, 0, None, 0)], threshold_mm=10.0)

    def test_body_part_thresholds(self):
        assert large_error_threshold_mm("right_hand") == 10.0
        assert large_error_threshold_mm("face") == 10.0
        assert large_error_threshold_mm("full_body") == 30.0
        with pytest.raises(ValidationError):
            large_error_threshold_mm("tail")


class TestIcc:
    def test_hand_computed_example(self):
        assert icc_a1([[1, 2], [3, 4], [5, 6]]) == pytest.approx(8.0 / 9.0, abs=1e-12)

    def test_identical_columns(self):
        assert icc_a1([[1, 1], [2, 2], [3, 3]]) == pytest.approx(1.0, abs=1e-12)

    def test_rank_one_plus_zero_noise(self):
        subj = np.arange(10, dtype=float)
        ratings = np.stack([subj, subj], axis=1)
        assert icc_a1(ratings) == pytest.approx(1.0, abs=1e-12)

    def test_independent_noise_near_zero(self):
        rng = np.random.default_rng(2024)
        ratings = rng.normal(size=(400, 2))
        assert abs(icc_a1(ratings)) < 0.15

    @given(st.floats(-50, 50))
    def test_shift_invariant(self, shift):
        base = np.array([[1.0, 2.0], [3.0, 5.0], [4.5, 4.0], [7.0, 8.0]])
        assert icc_a1(base + shift) == pytest.approx(icc_a1(base), abs=1e-9)

    def test_degenerate(self):
        with pytest.raises(DegenerateVariance):
            icc_a1([[2.0, 2.0], [2.0, 2.0]])


class TestRecordsToTrajectories:
    def test_missing_becomes_nan(self):
        records = [
            Point3DRecord(0, 0, np.array([1.0, 0, 0]), 2, 0.1, 0.1),
            Point3DRecord(1, 0, None, 1),
            Point3DRecord(2, 0, np.array([3.0, 0, 0]), 2, 0.1, 0.1),
        ]
        trajs = records_to_trajectories(records, fps=10.0)
        assert np.isnan(trajs[0].p[1]).all()
        assert trajs[0].t[1] == pytest.approx(0.1)
