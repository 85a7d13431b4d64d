"""Batch steps over a scanned dataset: trim, calibrate, triangulate,
metrics, features, report.

Step ordering is enforced (trim -> calibrate -> triangulate ->
{metrics, features} -> report) and every output records a content hash
of each prerequisite file it consumed, so a later step can refuse stale
inputs instead of silently mixing calibrations. Outputs are a pure
function of (files on disk, config): no timestamps, sorted keys,
repr-formatted floats, so re-running a step rewrites identical bytes.

Artifact layout under the saving directory, mirroring the original tree:

    <rel_trial_dir>/videos-raw/trim_plan.json
    <rel_trial_dir>/videos-raw/<stem>_trace.csv      (input or cached)
    <rel_trial_dir>/pose-2d/<stem>.csv               (input: 2D detections)
    <rel_trial_dir>/pose-3d/<base>.csv  + .meta.json
    <rel_trial_dir>/metrics/<base>.json
    <rel_trial_dir>/features/<base>.csv + .meta.json
    calibration/corners.csv (input) -> calibration/calibration.toml
    report/{trials.csv, per_subject.csv, long.csv, summary.json}
"""

from __future__ import annotations

import hashlib
import json
import os
import shlex
import subprocess
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .calib_io import read_calibration, write_calibration
from .calibration import BoardSpec, CalibrateOptions, calibrate_rig, read_corner_csv
from .dataset import DatasetIndex, PipelineConfig, TrialFiles
from .errors import (
    DegenerateVariance,
    EmptyInput,
    MissingPrerequisite,
    NothingToReport,
    ValidationError,
)
from .metrics import compute_trial_metrics, icc_a1
from .sync import (
    FrameStream,
    RoiSpec,
    TrimOptions,
    TrimPlan,
    manual_window,
    plan_trims,
    read_trace_csv,
    read_trim_plan,
    roi_red_counts,
    trim_plan_to_dict,
    write_trace_csv,
)
from .triangulate import (
    Detections2D,
    TriangulationOptions,
    read_detections_csv,
    read_points3d_csv,
    triangulate_trial,
    write_points3d_csv,
)
from .features import feature_table, get_schema, write_feature_csv
from .metrics import records_to_trajectories

DECODER_ENV = "MOCAPKIT_DECODER_CMD"
STEPS = ("trim", "calibrate", "triangulate", "metrics", "features", "report")
METRIC_NAMES = ("corr", "ldj", "err_mm", "pct_large")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def config_digest(config: PipelineConfig) -> str:
    doc = asdict(config)
    doc.pop("saving_dir", None)   # location-independent digest
    doc.pop("original_root", None)
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _inputs_record(saving: Path, paths) -> dict[str, str]:
    return {Path(p).relative_to(saving).as_posix(): sha256_file(p)
            for p in sorted(paths, key=lambda p: Path(p).as_posix())}


def _check_inputs_fresh(step: str, saving: Path, meta_path: Path) -> None:
    """Refuse to consume an artifact whose recorded inputs changed on disk."""
    if not meta_path.exists():
        return  # foreign artifact without provenance: accept as-is
    meta = json.loads(meta_path.read_text())
    for rel, digest in meta.get("inputs", {}).items():
        current = saving / rel
        if not current.exists():
            raise MissingPrerequisite(step, rel, "input of an upstream artifact is gone")
        if sha256_file(current) != digest:
            raise MissingPrerequisite(
                step, rel,
                "changed since the upstream artifact was built; re-run earlier steps")


# -- per-trial paths ----------------------------------------------------------

def trial_dir(config: PipelineConfig, trial: TrialFiles) -> Path:
    return Path(config.saving_dir) / trial.rel_dir


def trim_plan_path(config: PipelineConfig, trial: TrialFiles) -> Path:
    return trial_dir(config, trial) / "videos-raw" / "trim_plan.json"


def trace_path(config: PipelineConfig, trial: TrialFiles, camera: str) -> Path:
    stem = trial.cameras[camera].rsplit(".", 1)[0]
    return trial_dir(config, trial) / "videos-raw" / f"{stem}_trace.csv"


def detections_path(config: PipelineConfig, trial: TrialFiles, camera: str) -> Path:
    stem = trial.cameras[camera].rsplit(".", 1)[0]
    return trial_dir(config, trial) / "pose-2d" / f"{stem}.csv"


def _trial_output_names(trial: TrialFiles, n_trials: int) -> list[str]:
    if n_trials == 1:
        return [trial.base]
    return [f"{trial.base}_trial{k}" for k in range(n_trials)]


def points3d_path(config: PipelineConfig, trial: TrialFiles, name: str) -> Path:
    return trial_dir(config, trial) / "pose-3d" / f"{name}.csv"


def calibration_dir(config: PipelineConfig) -> Path:
    return Path(config.saving_dir) / "calibration"


def find_calibration(config: PipelineConfig, trial: TrialFiles) -> Path | None:
    """Nearest calibration.toml from the trial dir up to the saving root,
    so per-subdirectory calibrations shadow the global one."""
    saving = Path(config.saving_dir)
    d = trial_dir(config, trial)
    while True:
        candidate = d / "calibration" / "calibration.toml"
        if candidate.exists():
            return candidate
        if d == saving:
            return None
        d = d.parent


# -- steps ---------------------------------------------------------------------

def run_step(step: str, index: DatasetIndex, config: PipelineConfig, **kwargs):
    """Dispatch one pipeline step; see the step functions for details."""
    if step not in STEPS:
        raise ValidationError(f"unknown step '{step}'; expected one of {STEPS}")
    fn = {"trim": step_trim, "calibrate": step_calibrate,
          "triangulate": step_triangulate, "metrics": step_metrics,
          "features": step_features, "report": step_report}[step]
    return fn(index, config, **kwargs)


def _decode_trace(config: PipelineConfig, index: DatasetIndex,
                  trial: TrialFiles, camera: str) -> Path:
    """Produce a trace CSV by running the external decoder on the video."""
    template = os.environ.get(DECODER_ENV)
    if template is None:
        raise MissingPrerequisite(
            "trim", str(trace_path(config, trial, camera)),
            f"no precomputed trace and {DECODER_ENV} is not set")
    roi_spec = config.rois.get(camera)
    if roi_spec is None:
        raise ValidationError(f"no ROI configured for camera '{camera}'")
    video = Path(index.root) / trial.rel_dir / trial.cameras[camera]
    cmd = [part.replace("{video}", str(video)) for part in shlex.split(template)]
    proc = subprocess.run(cmd, stdout=subprocess.PIPE, check=True)
    import io

    stream = FrameStream.open(io.BytesIO(proc.stdout))
    trace = roi_red_counts(stream, RoiSpec(camera, *roi_spec),
                           light_threshold=config.light_threshold,
                           red_margin=config.red_margin)
    out = trace_path(config, trial, camera)
    write_trace_csv(trace, out)
    return out


def step_trim(index: DatasetIndex, config: PipelineConfig,
              manual: tuple[int, int] | None = None) -> list[Path]:
    """Write a trim plan per trial, from LED traces or a manual window.

    Auto mode reads per-camera trace CSVs next to the plan
    (<stem>_trace.csv), invoking the external decoder to create them
    when absent.
    """
    outputs = []
    for trial in index.trials:
        inputs = []
        if manual is not None:
            start, end = manual
            windows = [manual_window(start, end, cam)
                       for cam in sorted(trial.cameras)]
            plan = TrimPlan(windows=windows,
                            fps={cam: config.fps for cam in sorted(trial.cameras)})
        else:
            traces = {}
            for cam in sorted(trial.cameras):
                tpath = trace_path(config, trial, cam)
                if not tpath.exists():
                    tpath = _decode_trace(config, index, trial, cam)
                traces[cam] = read_trace_csv(tpath, camera=cam, fps=config.fps)
                inputs.append(tpath)
            plan = plan_trims(traces, TrimOptions(
                num_trials=config.num_trials,
                fixed_length_s=config.trial_length_s,
                pixel_threshold=config.pixel_threshold,
                debounce=config.debounce,
                max_frame_skew=config.max_frame_skew,
            ))
        doc = trim_plan_to_dict(plan)
        doc["metadata"]["inputs"] = _inputs_record(Path(config.saving_dir), inputs)
        doc["metadata"]["config_digest"] = config_digest(config)
        out = trim_plan_path(config, trial)
        _write_json(out, doc)
        outputs.append(out)
    return outputs


def step_calibrate(index: DatasetIndex, config: PipelineConfig,
                   board: BoardSpec | None = None,
                   corners_path=None) -> Path:
    """Estimate the rig from calibration/corners.csv and write
    calibration.toml (plus a .meta.json with input hashes)."""
    saving = Path(config.saving_dir)
    for trial in index.trials:
        plan = trim_plan_path(config, trial)
        if not plan.exists():
            raise MissingPrerequisite("calibrate", str(plan.relative_to(saving)))
    corners_path = Path(corners_path) if corners_path else \
        calibration_dir(config) / "corners.csv"
    if not corners_path.exists():
        raise MissingPrerequisite("calibrate", str(corners_path))
    board = board or BoardSpec()
    observations = read_corner_csv(corners_path)
    result = calibrate_rig(board, observations, CalibrateOptions())
    out = calibration_dir(config) / "calibration.toml"
    write_calibration(result, out)
    meta = {
        "step": "calibrate",
        "inputs": _inputs_record(saving, [corners_path]),
        "config_digest": config_digest(config),
        "rms_error_px": result.rms_error_px,
        "per_camera_error_px": list(result.per_camera_error_px),
        "n_iterations": result.n_iterations,
        "board": asdict(board),
    }
    _write_json(out.with_suffix(".meta.json"), meta)
    return out


def _load_trial_detections(config: PipelineConfig, trial: TrialFiles):
    dets = {}
    paths = []
    for cam in sorted(trial.cameras):
        dpath = detections_path(config, trial, cam)
        if not dpath.exists():
            raise MissingPrerequisite(
                "triangulate", str(dpath.relative_to(Path(config.saving_dir))),
                "2D detections missing (run your detector / adapter first)")
        dets[cam] = read_detections_csv(dpath, camera=cam,
                                        landmark_schema=config.schema_id)
        paths.append(dpath)
    return dets, paths


def _aligned_detections(dets: dict[str, Detections2D], plan: TrimPlan,
                        trial_index: int) -> dict[str, Detections2D]:
    """Cut each camera to its trial window and re-zero frames at the
    window start (each camera's own LED onset is its time zero)."""
    out = {}
    for cam, d in dets.items():
        window = plan.trial(trial_index).get(cam)
        if window is None:
            raise ValidationError(f"trim plan lacks camera '{cam}'")
        keep = (d.frames >= window.start_frame) & (d.frames <= window.end_frame)
        out[cam] = Detections2D(
            camera=cam, landmark_schema=d.landmark_schema,
            frames=d.frames[keep] - window.start_frame,
            landmark_ids=d.landmark_ids[keep],
            pixels=d.pixels[keep], confidence=d.confidence[keep],
        )
    return out


def step_triangulate(index: DatasetIndex, config: PipelineConfig) -> list[Path]:
    """3D-reconstruct every trial using the nearest calibration and the
    trim plan's per-camera alignment."""
    saving = Path(config.saving_dir)
    outputs = []
    for trial in index.trials:
        calib = find_calibration(config, trial)
        if calib is None:
            raise MissingPrerequisite("triangulate", "calibration/calibration.toml")
        _check_inputs_fresh("triangulate", saving, calib.with_suffix(".meta.json"))
        plan_path = trim_plan_path(config, trial)
        if not plan_path.exists():
            raise MissingPrerequisite("triangulate", str(plan_path.relative_to(saving)))
        plan = read_trim_plan(plan_path)
        rig = read_calibration(calib)
        dets, det_paths = _load_trial_detections(config, trial)
        opts = TriangulationOptions(min_confidence=config.min_confidence,
                                    inlier_threshold_px=config.inlier_threshold_px)
        names = _trial_output_names(trial, plan.n_trials)
        for k, name in enumerate(names):
            aligned = _aligned_detections(dets, plan, k)
            records = triangulate_trial(rig, aligned, opts)
            out = points3d_path(config, trial, name)
            write_points3d_csv(records, out)
            meta = {
                "step": "triangulate",
                "inputs": _inputs_record(saving, [calib, plan_path, *det_paths]),
                "config_digest": config_digest(config),
                "trial_index": k,
                "mm_conversion": "mean over used cameras (nearest-camera "
                                 "depth is the documented alternative)",
            }
            _write_json(out.with_suffix(".meta.json"), meta)
            outputs.append(out)
    return outputs


def _iter_trial_points3d(config: PipelineConfig, trial: TrialFiles, step: str):
    plan_path = trim_plan_path(config, trial)
    if not plan_path.exists():
        raise MissingPrerequisite(step, str(plan_path))
    plan = read_trim_plan(plan_path)
    for name in _trial_output_names(trial, plan.n_trials):
        p3d = points3d_path(config, trial, name)
        if not p3d.exists():
            raise MissingPrerequisite(
                step, str(p3d.relative_to(Path(config.saving_dir))))
        yield name, p3d, plan


def step_metrics(index: DatasetIndex, config: PipelineConfig) -> list[Path]:
    """Per-trial quality metrics from the 3D records."""
    saving = Path(config.saving_dir)
    outputs = []
    for trial in index.trials:
        for name, p3d, plan in _iter_trial_points3d(config, trial, "metrics"):
            _check_inputs_fresh("metrics", saving, p3d.with_suffix(".meta.json"))
            records = read_points3d_csv(p3d)
            fps = plan.fps.get(sorted(plan.fps)[0], config.fps) if plan.fps else config.fps
            calib = find_calibration(config, trial)
            unit = read_calibration(calib).unit_scale if calib else 1.0
            try:
                tm = compute_trial_metrics(
                    records, fps, dt=config.dt_metrics,
                    max_gap_frames=config.max_gap_frames,
                    threshold_mm=config.threshold_mm,
                    correlation_mode=config.correlation_mode,
                    unit_scale_mm=unit)
                payload = asdict(tm)
            except EmptyInput as e:
                payload = {"error": str(e)}
            doc = {
                "step": "metrics",
                "trial": trial.key if name == trial.base else f"{trial.key}:{name}",
                "inputs": _inputs_record(saving, [p3d]),
                "config_digest": config_digest(config),
                "values": payload,
            }
            out = trial_dir(config, trial) / "metrics" / f"{name}.json"
            _write_json(out, doc)
            outputs.append(out)
    return outputs


def step_features(index: DatasetIndex, config: PipelineConfig) -> list[Path]:
    """Per-trial kinematic feature tables from the 3D records."""
    saving = Path(config.saving_dir)
    schema = get_schema(config.schema_id)
    outputs = []
    for trial in index.trials:
        for name, p3d, plan in _iter_trial_points3d(config, trial, "features"):
            _check_inputs_fresh("features", saving, p3d.with_suffix(".meta.json"))
            records = read_points3d_csv(p3d)
            fps = plan.fps.get(sorted(plan.fps)[0], config.fps) if plan.fps else config.fps
            trajs = records_to_trajectories(records, fps)
            table = feature_table(trajs, schema)
            out = trial_dir(config, trial) / "features" / f"{name}.csv"
            write_feature_csv(table, out)
            meta = {
                "step": "features",
                "inputs": _inputs_record(saving, [p3d]),
                "config_digest": config_digest(config),
                "schema": schema.id,
            }
            _write_json(out.with_suffix(".meta.json"), meta)
            outputs.append(out)
    return outputs


# -- report ---------------------------------------------------------------------

def _subject_condition(trial_key: str) -> tuple[str, str]:
    parts = [p for p in trial_key.split("/") if p]
    subject = parts[0] if parts else "all"
    condition = parts[1] if len(parts) >= 3 else "default"
    return subject, condition


def step_report(index: DatasetIndex, config: PipelineConfig) -> list[Path]:
    """Aggregate metrics: per-trial CSV, per-subject medians, long-format
    plot data, condition summaries, and the two-condition agreement ICC."""
    saving = Path(config.saving_dir)
    metric_files = sorted(saving.rglob("metrics/*.json"))
    rows = []
    for mf in metric_files:
        doc = json.loads(mf.read_text())
        values = doc.get("values", {})
        if "error" in values or not values:
            continue
        subject, condition = _subject_condition(doc.get("trial", ""))
        rows.append({
            "subject": subject, "condition": condition,
            "trial": doc.get("trial", ""),
            "corr": values["corr_median"], "ldj": values["ldj_median"],
            "err_mm": values["err_mm_median"], "pct_large": values["pct_large_errors"],
            "n_frames": values["n_frames"], "n_markers": values["n_markers"],
        })
    if not rows:
        raise NothingToReport("no computed metrics found under the saving directory")

    report_dir = saving / "report"
    report_dir.mkdir(parents=True, exist_ok=True)

    def fmt(x) -> str:
        return repr(float(x))

    trials_csv = ["subject,trial,corr,ldj,err_mm,pct_large,n_frames,n_markers"]
    for r in sorted(rows, key=lambda r: (r["subject"], r["trial"])):
        trials_csv.append(
            f"{r['subject']},{r['trial']},{fmt(r['corr'])},{fmt(r['ldj'])},"
            f"{fmt(r['err_mm'])},{fmt(r['pct_large'])},{r['n_frames']},{r['n_markers']}"
        )
    (report_dir / "trials.csv").write_text("\n".join(trials_csv) + "\n")

    # per-subject medians within each condition
    by_subj: dict[tuple[str, str], list[dict]] = {}
    for r in rows:
        by_subj.setdefault((r["subject"], r["condition"]), []).append(r)
    subject_rows = []
    for (subject, condition), rs in sorted(by_subj.items()):
        subject_rows.append({
            "subject": subject, "condition": condition, "n_trials": len(rs),
            **{m: float(np.median([r[m] for r in rs])) for m in METRIC_NAMES},
        })
    subj_csv = ["subject,condition,n_trials,corr,ldj,err_mm,pct_large"]
    for s in subject_rows:
        subj_csv.append(
            f"{s['subject']},{s['condition']},{s['n_trials']},"
            f"{fmt(s['corr'])},{fmt(s['ldj'])},{fmt(s['err_mm'])},{fmt(s['pct_large'])}"
        )
    (report_dir / "per_subject.csv").write_text("\n".join(subj_csv) + "\n")

    long_csv = ["metric,condition,subject,value"]
    for s in subject_rows:
        for m in METRIC_NAMES:
            long_csv.append(f"{m},{s['condition']},{s['subject']},{fmt(s[m])}")
    (report_dir / "long.csv").write_text("\n".join(long_csv) + "\n")

    conditions = sorted({s["condition"] for s in subject_rows})
    summary: dict = {"conditions": {}, "icc": None}
    for cond in conditions:
        vals = [s for s in subject_rows if s["condition"] == cond]
        summary["conditions"][cond] = {
            m: {"mean": float(np.mean([v[m] for v in vals])),
                "sd": float(np.std([v[m] for v in vals], ddof=1)) if len(vals) > 1 else 0.0,
                "n_subjects": len(vals)}
            for m in METRIC_NAMES
        }
    if len(conditions) == 2:
        icc: dict[str, float | None] = {}
        a, b = conditions
        per = {s["subject"]: {} for s in subject_rows}
        for s in subject_rows:
            per[s["subject"]][s["condition"]] = s
        paired = [subj for subj, d in sorted(per.items()) if a in d and b in d]
        for m in METRIC_NAMES:
            if len(paired) >= 2:
                mat = [[per[subj][a][m], per[subj][b][m]] for subj in paired]
                try:
                    icc[m] = icc_a1(mat)
                except DegenerateVariance:
                    icc[m] = None
            else:
                icc[m] = None
        summary["icc"] = icc
    _write_json(report_dir / "summary.json", summary)
    return [report_dir / n for n in ("trials.csv", "per_subject.csv",
                                     "long.csv", "summary.json")]
