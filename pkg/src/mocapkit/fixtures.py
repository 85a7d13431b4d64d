"""Emit a complete synthetic dataset fixture in the on-disk formats the
pipeline consumes: placeholder videos in an original-recordings tree,
LED traces, 2D detection CSVs, board corner observations, the pipeline
config, and ground-truth JSON for closure assertions.

Cameras get distinct recording-start offsets, so the fixture genuinely
exercises LED-based alignment: detections are only consistent across
cameras after trimming at each camera's own LED onset.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .calib_io import write_calibration
from .calibration import CalibrationResult, write_corner_csv
from .dataset import PipelineConfig
from .synthetic import make_scene, project_scene, synth_led_trace
from .sync import write_trace_csv
from .triangulate import write_detections_csv


def emit_fixture(out_dir, n_cams: int = 3, n_frames: int = 120, fps: float = 60.0,
                 noise_px: float = 0.0, seed: int = 0, n_board_poses: int = 20,
                 subjects: int = 1, conditions: int = 1) -> dict:
    """Build raw/ (placeholder videos) and work/ (pipeline inputs).

    Returns {"raw": ..., "work": ..., "trials": [trial keys]}.
    """
    out = Path(out_dir)
    raw = out / "raw"
    work = out / "work"
    work.mkdir(parents=True, exist_ok=True)

    cam_letters = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"[:n_cams]
    config = PipelineConfig(
        saving_dir=str(work),
        original_root=str(raw),
        body_part="right_hand",
        video_extension=".mp4",
        camera_suffix_pattern=r"-cam([A-Z])",
        fps=fps,
        num_trials=1,
    )
    config.save()

    trial_keys = []
    trial_seed = seed
    for s in range(1, subjects + 1):
        for c in range(conditions):
            rel = f"subj{s}/task{chr(ord('A') + c)}/trial1"
            trial_keys.append(f"{rel}/clip")
            leaf = raw / rel
            leaf.mkdir(parents=True, exist_ok=True)
            mirror = work / rel
            start_frames = {cam: 3 + 2 * k + (trial_seed % 3)
                            for k, cam in enumerate(cam_letters)}
            scene = make_scene(n_cams=n_cams, radius=0.8, n_frames=n_frames,
                               fps=fps, noise_px=noise_px, seed=trial_seed,
                               n_board_poses=n_board_poses,
                               start_frames=start_frames)
            dets, corners = project_scene(scene)
            for cam in cam_letters:
                (leaf / f"clip-cam{cam}.mp4").write_bytes(b"")
                write_detections_csv(dets[cam], mirror / "pose-2d" / f"clip-cam{cam}.csv")
                on = start_frames[cam]
                trace, _ = synth_led_trace(fps=fps, on_frame=on,
                                           off_frame=on + n_frames - 1,
                                           camera=cam, tail=8)
                write_trace_csv(trace, mirror / "videos-raw" / f"clip-cam{cam}_trace.csv")
            if (s, c) == (1, 0):
                write_corner_csv(corners, work / "calibration" / "corners.csv")
                write_calibration(
                    CalibrationResult(scene.rig, 0.0, [0.0] * n_cams),
                    work / "ground_truth" / "rig.toml")
            truth = {
                "fps": fps,
                "noise_px": noise_px,
                "seed": trial_seed,
                "start_frames": start_frames,
                "n_frames": n_frames,
                "landmarks": {
                    str(lm): scene.trajectories[lm].p.tolist()
                    for lm in sorted(scene.trajectories)
                },
            }
            tpath = work / "ground_truth" / f"{rel.replace('/', '__')}.json"
            tpath.parent.mkdir(parents=True, exist_ok=True)
            tpath.write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n")
            trial_seed += 1
    return {"raw": str(raw), "work": str(work), "trials": trial_keys}


def load_fixture_truth(work_dir, trial_rel: str) -> dict:
    path = Path(work_dir) / "ground_truth" / f"{trial_rel.replace('/', '__')}.json"
    doc = json.loads(path.read_text())
    doc["landmarks"] = {int(k): np.asarray(v) for k, v in doc["landmarks"].items()}
    return doc
