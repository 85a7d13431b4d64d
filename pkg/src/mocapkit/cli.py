"""Command-line driver for the batch pipeline.

    mocapkit configure --saving-dir WORK --body-part right_hand ...
    mocapkit scan RAW --saving-dir WORK
    mocapkit trim --saving-dir WORK [--auto | --manual START:END] [--roi CAM:x,y,w,h]
    mocapkit calibrate --saving-dir WORK [--board 10,7,25,18.75]
    mocapkit triangulate --saving-dir WORK
    mocapkit metrics --saving-dir WORK
    mocapkit features --saving-dir WORK
    mocapkit report --saving-dir WORK
    mocapkit synth OUT [--seed N] [--noise-px F] [--cameras N] [--frames N]

Exit codes: 0 success, 2 validation error, 3 missing prerequisite,
4 numeric failure.

Auto trimming consumes per-camera trace CSVs (videos-raw/<stem>_trace.csv).
When a trace is absent the external decoder named by $MOCAPKIT_DECODER_CMD
is run on the original video; the template must print the raw-stream
contract ("W H FPS rgb24\\n" + rgb24 frames) on stdout, e.g.

    MOCAPKIT_DECODER_CMD='sh -c "echo 1920 1080 60 rgb24; \\
        ffmpeg -v error -i {video} -f rawvideo -pix_fmt rgb24 -"'
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .calibration import BoardSpec
from .dataset import CONFIG_NAME, PipelineConfig, scan_dataset
from .errors import MissingPrerequisite, MocapError, NumericError, ValidationError
from .fixtures import emit_fixture
from .pipeline import run_step


def _parse_roi(text: str):
    try:
        cam, rect = text.split(":", 1)
        x, y, w, h = (int(v) for v in rect.split(","))
        return cam, [x, y, w, h]
    except ValueError:
        raise ValidationError(f"bad --roi '{text}', expected CAM:x,y,w,h") from None


def _parse_board(text: str) -> BoardSpec:
    try:
        sx, sy, sq, mk = text.split(",")
        return BoardSpec(squares_x=int(sx), squares_y=int(sy),
                         square_length_mm=float(sq), marker_length_mm=float(mk))
    except ValueError:
        raise ValidationError(
            f"bad --board '{text}', expected squares_x,squares_y,square_mm,marker_mm"
        ) from None


def _parse_manual(text: str):
    try:
        start, end = text.split(":")
        return int(start), int(end)
    except ValueError:
        raise ValidationError(f"bad --manual '{text}', expected START:END") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mocapkit",
                                description="batch markerless motion-capture pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("configure", help="write the pipeline config file")
    c.add_argument("--saving-dir", required=True)
    c.add_argument("--body-part", default="right_hand",
                   choices=("right_hand", "left_hand", "full_body", "face"))
    c.add_argument("--video-ext", default=".mp4")
    c.add_argument("--camera-suffix", default=r"-cam([A-Z0-9])")
    c.add_argument("--fps", type=float, default=60.0)
    c.add_argument("--light-threshold", type=int, default=200)
    c.add_argument("--pixel-threshold", type=int, default=5)
    c.add_argument("--debounce", type=int, default=2)
    c.add_argument("--num-trials", type=int, default=1)
    c.add_argument("--trial-length", type=float, default=None,
                   help="fixed trial length in seconds (improves cut accuracy)")
    c.add_argument("--min-confidence", type=float, default=0.5)
    c.add_argument("--inlier-threshold", type=float, default=20.0)
    c.add_argument("--large-error-mm", type=float, default=None,
                   help="override the body-part large-error threshold")
    c.add_argument("--dt-metrics", type=float, default=0.005)
    c.add_argument("--correlation-mode", default="position",
                   choices=("position", "displacement"))
    c.add_argument("--roi", action="append", default=[],
                   help="LED region per camera, CAM:x,y,w,h (repeatable)")

    s = sub.add_parser("scan", help="index the recordings tree and mirror it")
    s.add_argument("root")
    s.add_argument("--saving-dir", required=True)

    t = sub.add_parser("trim", help="write synchronised trim plans")
    t.add_argument("--saving-dir", required=True)
    mode = t.add_mutually_exclusive_group()
    mode.add_argument("--auto", action="store_true", default=True,
                      help="detect the LED events (default)")
    mode.add_argument("--manual", type=str, default=None, metavar="START:END")
    t.add_argument("--roi", action="append", default=[])
    t.add_argument("--light-threshold", type=int, default=None)
    t.add_argument("--pixel-threshold", type=int, default=None)
    t.add_argument("--num-trials", type=int, default=None)
    t.add_argument("--trial-length", type=float, default=None)

    ca = sub.add_parser("calibrate", help="estimate the camera rig")
    ca.add_argument("--saving-dir", required=True)
    ca.add_argument("--board", type=str, default=None,
                    metavar="SX,SY,SQUARE_MM,MARKER_MM")
    ca.add_argument("--corners", type=str, default=None,
                    help="corner CSV (default <saving>/calibration/corners.csv)")

    for name, help_text in (("triangulate", "reconstruct 3D trajectories"),
                            ("metrics", "compute tracking-quality metrics"),
                            ("features", "extract kinematic features"),
                            ("report", "aggregate metrics into report tables")):
        q = sub.add_parser(name, help=help_text)
        q.add_argument("--saving-dir", required=True)

    y = sub.add_parser("synth", help="emit a synthetic fixture dataset")
    y.add_argument("out_dir")
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--noise-px", type=float, default=0.0)
    y.add_argument("--cameras", type=int, default=3)
    y.add_argument("--frames", type=int, default=120)
    y.add_argument("--fps", type=float, default=60.0)
    y.add_argument("--board-poses", type=int, default=20)
    y.add_argument("--subjects", type=int, default=1)
    y.add_argument("--conditions", type=int, default=1)
    return p


def _load_context(step: str, saving_dir: str):
    try:
        config = PipelineConfig.load(saving_dir)
    except FileNotFoundError:
        raise MissingPrerequisite(step, f"{saving_dir}/{CONFIG_NAME}",
                                  "run `mocapkit configure` first") from None
    if config.original_root is None:
        raise MissingPrerequisite(step, "dataset root",
                                  "run `mocapkit scan ROOT` first")
    index = scan_dataset(config.original_root, config)
    return config, index


def _cmd_configure(args) -> int:
    config = PipelineConfig(
        saving_dir=args.saving_dir,
        body_part=args.body_part,
        video_extension=args.video_ext,
        camera_suffix_pattern=args.camera_suffix,
        fps=args.fps,
        light_threshold=args.light_threshold,
        pixel_threshold=args.pixel_threshold,
        debounce=args.debounce,
        num_trials=args.num_trials,
        trial_length_s=args.trial_length,
        min_confidence=args.min_confidence,
        inlier_threshold_px=args.inlier_threshold,
        large_error_mm=args.large_error_mm,
        dt_metrics=args.dt_metrics,
        correlation_mode=args.correlation_mode,
        rois=dict(_parse_roi(r) for r in args.roi),
    )
    path = config.save()
    print(f"wrote {path}")
    return 0


def _cmd_scan(args) -> int:
    try:
        config = PipelineConfig.load(args.saving_dir)
    except FileNotFoundError:
        raise MissingPrerequisite("scan", f"{args.saving_dir}/{CONFIG_NAME}",
                                  "run `mocapkit configure` first") from None
    config.original_root = str(args.root)
    index = scan_dataset(args.root, config)
    config.save()
    print(f"{len(index.trials)} trial(s), cameras {index.camera_ids}")
    for t in index.trials:
        print(f"  {t.key}: {sorted(t.cameras)}")
    return 0


def _cmd_trim(args) -> int:
    config, index = _load_context("trim", args.saving_dir)
    overrides = {}
    if args.light_threshold is not None:
        overrides["light_threshold"] = args.light_threshold
    if args.pixel_threshold is not None:
        overrides["pixel_threshold"] = args.pixel_threshold
    if args.num_trials is not None:
        overrides["num_trials"] = args.num_trials
    if args.trial_length is not None:
        overrides["trial_length_s"] = args.trial_length
    if args.roi:
        overrides["rois"] = {**config.rois, **dict(_parse_roi(r) for r in args.roi)}
    if overrides:
        config = replace(config, **overrides)
    manual = _parse_manual(args.manual) if args.manual else None
    outputs = run_step("trim", index, config, manual=manual)
    for out in outputs:
        print(f"wrote {out}")
    return 0


def _cmd_calibrate(args) -> int:
    config, index = _load_context("calibrate", args.saving_dir)
    board = _parse_board(args.board) if args.board else None
    out = run_step("calibrate", index, config, board=board,
                   corners_path=args.corners)
    print(f"wrote {out}")
    return 0


def _cmd_step(step: str, args) -> int:
    config, index = _load_context(step, args.saving_dir)
    outputs = run_step(step, index, config)
    for out in outputs:
        print(f"wrote {out}")
    return 0


def _cmd_synth(args) -> int:
    info = emit_fixture(args.out_dir, n_cams=args.cameras, n_frames=args.frames,
                        fps=args.fps, noise_px=args.noise_px, seed=args.seed,
                        n_board_poses=args.board_poses, subjects=args.subjects,
                        conditions=args.conditions)
    print(f"fixture raw tree:   {info['raw']}")
    print(f"fixture saving dir: {info['work']}")
    for key in info["trials"]:
        print(f"  trial {key}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "configure":
            return _cmd_configure(args)
        if args.command == "scan":
            return _cmd_scan(args)
        if args.command == "trim":
            return _cmd_trim(args)
        if args.command == "calibrate":
            return _cmd_calibrate(args)
        if args.command in ("triangulate", "metrics", "features", "report"):
            return _cmd_step(args.command, args)
        if args.command == "synth":
            return _cmd_synth(args)
        raise ValidationError(f"unknown command {args.command}")
    except MissingPrerequisite as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except MocapError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
