"""Acceptance criteria, one test per criterion.

Run with `pytest tests/test_acceptance.py -v -s` to see one line per
criterion with the measured numbers. Published large-cohort headline
values are not reproducible at desk scale; these checks are
property/oracle based with explicitly pinned tolerances.
"""

import time
from pathlib import Path

import numpy as np

from mocapkit.calibration import calibrate_rig
from mocapkit.dataset import PipelineConfig, scan_dataset
from mocapkit.errors import EventCountMismatch, MissingPrerequisite
from mocapkit.features import hull_volume, joint_angle
from mocapkit.fixtures import emit_fixture, load_fixture_truth
from mocapkit.metrics import error_summary, icc_a1, ldj
from mocapkit.pipeline import run_step, sha256_file
from mocapkit.sync import (
    FrameStream,
    RoiSpec,
    TrimOptions,
    detect_events,
    plan_trims,
    roi_red_counts,
)
from mocapkit.synthetic import (
    hand_pose,
    make_scene,
    min_jerk_trajectory,
    project_scene,
    synth_led_trace,
)
from mocapkit.trajectory import Trajectory3D
from mocapkit.triangulate import triangulate_trial


def _report(criterion: str, ok: bool, detail: str):
    print(f"\n[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
    assert ok, f"{criterion}: {detail}"


def test_criterion_1_end_to_end_closure():
    t0 = time.perf_counter()
    scene = make_scene(n_cams=3, radius=0.8, n_frames=120, fps=60.0,
                       noise_px=0.0, seed=0)
    dets, _ = project_scene(scene)
    records = triangulate_trial(scene.rig, dets)
    elapsed = time.perf_counter() - t0
    assert len(records) == 120 * 21 and not any(r.missing for r in records)
    worst = max(np.linalg.norm(r.position - scene.trajectories[r.landmark_id].p[r.frame])
                for r in records)
    _report("criterion 1 (end-to-end closure)",
            worst < 1e-7 and elapsed < 10.0,
            f"worst 3D error {worst:.3e} world units (< 1e-7), "
            f"runtime {elapsed:.2f}s (< 10s)")


def test_criterion_2_calibration_recovery():
    scene = make_scene(n_cams=3, radius=0.8, n_frames=10, noise_px=0.0,
                       seed=0, n_board_poses=20)
    _, corners = project_scene(scene)
    res = calibrate_rig(scene.board, corners)
    focal_errs = []
    for cam_t, cam_e in zip(scene.rig.cameras, res.rig.cameras):
        focal_errs.append(abs(cam_e.intrinsics.fx - cam_t.intrinsics.fx) / cam_t.intrinsics.fx)
        focal_errs.append(abs(cam_e.intrinsics.fy - cam_t.intrinsics.fy) / cam_t.intrinsics.fy)
    ct = [c.extrinsics.center() * 1000.0 for c in scene.rig.cameras]
    ce = [c.extrinsics.center() for c in res.rig.cameras]
    baseline_errs = []
    for i in range(3):
        for j in range(i + 1, 3):
            bt = np.linalg.norm(ct[i] - ct[j])
            baseline_errs.append(abs(np.linalg.norm(ce[i] - ce[j]) - bt) / bt)

    scene_n = make_scene(n_cams=3, radius=0.8, n_frames=10, noise_px=0.5,
                         seed=3, n_board_poses=20)
    _, corners_n = project_scene(scene_n)
    res_n = calibrate_rig(scene_n.board, corners_n)

    # analytic Jacobian vs central differences on the bundle problem
    from test_calibration import _tiny_problem

    prob, x_true = _tiny_problem()
    rng = np.random.default_rng(77)
    jac_rel = 0.0
    for _ in range(20):
        x = x_true + rng.normal(0, 1e-3, x_true.shape) * np.maximum(np.abs(x_true), 1.0)
        J = prob.jacobian(x)
        Jfd = np.empty_like(J)
        for p in range(len(x)):
            h = 1e-6 * max(abs(x[p]), 1.0)
            xp = x.copy(); xp[p] += h
            xm = x.copy(); xm[p] -= h
            Jfd[:, p] = (prob.residuals(xp) - prob.residuals(xm)) / (2 * h)
        jac_rel = max(jac_rel, np.linalg.norm(Jfd - J) / max(np.linalg.norm(J), 1.0))

    ok = (max(focal_errs) < 5e-3 and max(baseline_errs) < 1e-3
          and res.rms_error_px < 1e-4
          and 0.3 <= res_n.rms_error_px <= 0.8
          and jac_rel < 1e-4)
    _report("criterion 2 (calibration recovery)", ok,
            f"noiseless RMS {res.rms_error_px:.2e} px (< 1e-4), "
            f"max focal err {max(focal_errs)*100:.4f}% (< 0.5%), "
            f"max baseline err {max(baseline_errs)*100:.5f}% (< 0.1%), "
            f"0.5px-noise RMS {res_n.rms_error_px:.3f} px (in [0.3, 0.8]), "
            f"Jacobian vs FD rel err {jac_rel:.2e} (< 1e-4)")


def test_criterion_3_ldj_oracle():
    traj = min_jerk_trajectory(D=(0.3, 0.1, 0.2), T=1.0, fps=200.0)
    val = ldj(traj)
    target = float(np.log(720.0))
    spatial = ldj(Trajectory3D(0, traj.t, traj.p * 2.0, traj.source_fps))
    temporal = ldj(Trajectory3D(0, traj.t * 2.0, traj.p, traj.source_fps / 2.0))
    ok = (abs(val - target) / target < 0.01
          and abs(spatial - val) < 1e-6 and abs(temporal - val) < 1e-6)
    _report("criterion 3 (LDJ oracle)", ok,
            f"LDJ {val:.4f} vs ln(720) {target:.4f} "
            f"({abs(val-target)/target*100:.3f}% < 1%), "
            f"spatial x2 drift {abs(spatial-val):.2e}, "
            f"temporal x2 drift {abs(temporal-val):.2e} (< 1e-6)")


def test_criterion_4_sync_oracle():
    # full chain at the stated thresholds: light 200, pixels 5, debounce 2
    on, off, n = 6, 45, 70
    frames = []
    rng = np.random.default_rng(0)
    for i in range(n):
        f = np.zeros((10, 10, 3), np.uint8)
        f[:, :, 0] = rng.integers(0, 150, (10, 10))  # dull background
        if on <= i <= off:
            f[2:5, 2:5, 0] = 255  # 9 bright red pixels
        frames.append(f)
    trace = roi_red_counts(FrameStream.from_arrays(frames, fps=60.0),
                           RoiSpec("A", 0, 0, 10, 10), light_threshold=200)
    events = roi_events = detect_events(trace, pixel_threshold=5, debounce=2)
    exact = events == [(on, off)]

    trace2, truth2 = synth_led_trace(fps=60, on_frame=9, off_frame=64,
                                     n_trials=3, gap=20, base_noise=3)
    exact2 = detect_events(trace2, pixel_threshold=5, debounce=2) == truth2

    mismatch_raised = False
    try:
        plan_trims({"A": trace2}, TrimOptions(num_trials=2, pixel_threshold=5,
                                              debounce=2))
    except EventCountMismatch:
        mismatch_raised = True

    monotone = True
    from mocapkit.sync import IntensityTrace

    for case in range(50):
        counts = np.random.default_rng(case).integers(0, 30, 80)
        t = IntensityTrace("A", 60.0, counts)
        lo, hi = 3, 3 + (case % 12) + 1
        def on_set(th):
            return {i for a, b in detect_events(t, th, 1) for i in range(a, b + 1)}
        if not on_set(hi) <= on_set(lo):
            monotone = False
    ok = exact and exact2 and mismatch_raised and monotone
    _report("criterion 4 (sync oracle)", ok,
            f"frame-chain events {roi_events} == [({on}, {off})], "
            f"3-trial recovery exact {exact2}, EventCountMismatch raised "
            f"{mismatch_raised}, threshold monotonicity over 50 cases {monotone}")


def test_criterion_5_metric_sanity_at_paper_scale():
    # 1080p cameras, f ~ 1000 px, ~0.65 m away, 1 px detection noise
    scene = make_scene(n_cams=5, radius=0.65, n_frames=90, fps=60.0,
                       noise_px=1.0, seed=11)
    dets, _ = project_scene(scene)
    records = triangulate_trial(scene.rig, dets)
    summary = error_summary(records, threshold_mm=10.0)
    ok = 0.6 <= summary.median_mm <= 5.0 and summary.pct_large < 5.0
    _report("criterion 5 (metric sanity at paper scale)", ok,
            f"median reprojection error {summary.median_mm:.3f} mm "
            f"(in [0.6, 5], same order as published 4.41 mm +- 0.53 mm), "
            f"pct > 10 mm = {summary.pct_large:.2f}% (< 5%)")


def test_criterion_6_feature_oracles():
    import itertools

    cube = np.array(list(itertools.product((0.0, 1.0), repeat=3)))
    tetra = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float)
    cube_ok = abs(hull_volume(cube) - 1.0) <= 1e-9
    tetra_ok = abs(hull_volume(tetra) - 1.0 / 6.0) <= 1e-9
    angle_ok = abs(joint_angle((1, 0, 0), (0, 0, 0), (0, 1, 0)) - 90.0) <= 1e-9

    from mocapkit.cameras import rodrigues

    offsets = hand_pose(True)
    base_vol = hull_volume(offsets)
    base_angle = joint_angle(offsets[0], offsets[5], offsets[6])
    rng = np.random.default_rng(6)
    invariant = True
    for _ in range(100):
        v = rng.normal(size=3)
        v = v / np.linalg.norm(v) * rng.uniform(0.0, np.pi - 1e-6)
        moved = offsets @ rodrigues(v).T + rng.normal(size=3)
        if abs(hull_volume(moved) - base_vol) > 1e-9 * base_vol:
            invariant = False
        if abs(joint_angle(moved[0], moved[5], moved[6]) - base_angle) > 1e-9:
            invariant = False
    ok = cube_ok and tetra_ok and angle_ok and invariant
    _report("criterion 6 (feature oracles)", ok,
            f"cube volume {hull_volume(cube):.12f} (1 +- 1e-9), "
            f"tetra {hull_volume(tetra):.12f} (1/6 +- 1e-9), right angle "
            f"{joint_angle((1,0,0),(0,0,0),(0,1,0)):.10f} deg (90 +- 1e-9), "
            f"rigid-motion invariance over 100 motions {invariant}")


def test_criterion_7_icc_oracle():
    val = icc_a1([[1, 2], [3, 4], [5, 6]])
    ident = icc_a1([[1, 1], [2, 2], [3, 3]])
    ok = abs(val - 8.0 / 9.0) <= 1e-12 and abs(ident - 1.0) <= 1e-12
    _report("criterion 7 (ICC oracle)", ok,
            f"[[1,2],[3,4],[5,6]] -> {val:.15f} (8/9 +- 1e-12), "
            f"identical columns -> {ident:.15f} (= 1)")


def test_criterion_8_pipeline_determinism(tmp_path):
    info = emit_fixture(tmp_path / "fix", n_cams=3, n_frames=40, fps=60.0,
                        noise_px=0.0, seed=0)
    config = PipelineConfig.load(info["work"])
    index = scan_dataset(info["raw"], config)

    out_of_order = False
    try:
        run_step("triangulate", index, config)
    except MissingPrerequisite:
        out_of_order = True

    steps = ("trim", "calibrate", "triangulate", "metrics", "features", "report")
    for step in steps:
        run_step(step, index, config)
    work = Path(info["work"])
    first = {p.relative_to(work).as_posix(): sha256_file(p)
             for p in sorted(work.rglob("*")) if p.is_file()}
    for step in steps:
        run_step(step, index, config)
    second = {p.relative_to(work).as_posix(): sha256_file(p)
              for p in sorted(work.rglob("*")) if p.is_file()}
    identical = first == second

    truth = load_fixture_truth(work, "subj1/taskA/trial1")
    from mocapkit.calib_io import read_calibration
    from mocapkit.triangulate import read_points3d_csv

    rig = read_calibration(work / "calibration" / "calibration.toml")
    recs = read_points3d_csv(work / "subj1/taskA/trial1/pose-3d/clip.csv")
    to_m = rig.unit_scale / 1000.0
    worst = max(np.linalg.norm(r.position * to_m - truth["landmarks"][r.landmark_id][r.frame])
                for r in recs if not r.missing)
    ok = out_of_order and identical and worst < 1e-7
    _report("criterion 8 (pipeline determinism)", ok,
            f"out-of-order raises MissingPrerequisite {out_of_order}, "
            f"double run byte-identical over {len(first)} files {identical}, "
            f"fixture closure {worst:.2e} m (< 1e-7)")
