"""Red-LED event detection and per-camera trim planning.

A frame is "LED on" when enough ROI pixels are simultaneously bright
(red channel >= light threshold) and red-dominant (red - max(G, B) >=
red margin; keeps white highlights from counting). Each camera is
trimmed at its own LED onset: camera clocks are independent, so the LED
visible in every view is the synchronisation contract.

Frames arrive either through the raw-stream contract (header line
"W H FPS rgb24\\n" then W*H*3 bytes per frame, row-major RGB, produced
by any external decoder) or as a precomputed trace CSV (frame,count).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    EventCountMismatch,
    InvertedRange,
    RoiOutOfBounds,
    SkewTooLarge,
    StreamTruncated,
    ValidationError,
)

DEFAULT_RED_MARGIN = 30
TRACE_CSV_HEADER = ["frame", "count"]
OFF_FRAME_CONVENTION = "last_on_frame"  # windows end on the last lit frame


@dataclass
class RoiSpec:
    camera: str
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValidationError(f"ROI must be at least 1x1, got {self.w}x{self.h}")
        if self.x < 0 or self.y < 0:
            raise RoiOutOfBounds(f"ROI origin ({self.x},{self.y}) negative")


@dataclass
class IntensityTrace:
    camera: str
    fps: float
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=int)
        if self.fps <= 0:
            raise ValidationError("fps must be positive")
        if np.any(self.counts < 0):
            raise ValidationError("counts must be non-negative")

    def __len__(self) -> int:
        return len(self.counts)


@dataclass
class TrimWindow:
    camera: str
    start_frame: int
    end_frame: int
    trial_index: int = 0

    def __post_init__(self):
        if self.start_frame < 0:
            raise ValidationError("start_frame must be >= 0")
        if self.start_frame > self.end_frame:
            raise InvertedRange(
                f"start {self.start_frame} > end {self.end_frame} "
                f"(camera '{self.camera}')"
            )

    @property
    def n_frames(self) -> int:
        return self.end_frame - self.start_frame + 1


@dataclass
class TrimPlan:
    windows: list[TrimWindow]
    fps: dict[str, float] = field(default_factory=dict)

    def trial(self, index: int) -> dict[str, TrimWindow]:
        return {w.camera: w for w in self.windows if w.trial_index == index}

    @property
    def n_trials(self) -> int:
        return 1 + max((w.trial_index for w in self.windows), default=-1)


@dataclass
class TrimOptions:
    num_trials: int = 1
    fixed_length_s: float | None = None
    pixel_threshold: int = 5
    debounce: int = 2
    max_frame_skew: int = 2


class FrameStream:
    """Raw RGB frames with fps metadata, from the stream contract or arrays."""

    def __init__(self, width: int, height: int, fps: float, frames):
        self.width = width
        self.height = height
        self.fps = fps
        self._frames = frames

    def __iter__(self):
        return iter(self._frames)

    @classmethod
    def from_arrays(cls, frames, fps: float) -> "FrameStream":
        frames = [np.asarray(f, dtype=np.uint8) for f in frames]
        if not frames:
            raise ValidationError("empty frame list")
        h, w, _ = frames[0].shape
        for f in frames:
            if f.shape != (h, w, 3):
                raise ValidationError("inconsistent frame dimensions")
        return cls(width=w, height=h, fps=fps, frames=frames)

    @classmethod
    def open(cls, source) -> "FrameStream":
        """Parse the "W H FPS rgb24" raw-stream contract from a path or
        binary file object."""
        if hasattr(source, "read"):
            fh = source
        else:
            fh = open(source, "rb")
        header = bytearray()
        while not header.endswith(b"\n"):
            b = fh.read(1)
            if not b:
                raise StreamTruncated("stream ended inside the header")
            header += b
        parts = header.decode("ascii", "replace").split()
        if len(parts) != 4 or parts[3] != "rgb24":
            raise ValidationError(f"bad stream header: {header!r}")
        w, h, fps = int(parts[0]), int(parts[1]), float(parts[2])
        frame_bytes = w * h * 3

        def gen():
            while True:
                buf = fh.read(frame_bytes)
                if not buf:
                    break
                if len(buf) != frame_bytes:
                    raise StreamTruncated(
                        f"frame truncated: got {len(buf)} of {frame_bytes} bytes"
                    )
                yield np.frombuffer(buf, dtype=np.uint8).reshape(h, w, 3)

        return cls(width=w, height=h, fps=fps, frames=gen())


def roi_red_counts(frames: FrameStream, roi: RoiSpec, light_threshold: int,
                   red_margin: int = DEFAULT_RED_MARGIN) -> IntensityTrace:
    """Count lit red pixels inside the ROI for every frame."""
    if not (0 <= light_threshold <= 255):
        raise ValidationError(f"light threshold {light_threshold} outside [0, 255]")
    if roi.x + roi.w > frames.width or roi.y + roi.h > frames.height:
        raise RoiOutOfBounds(
            f"ROI {roi.x},{roi.y},{roi.w},{roi.h} exceeds frame "
            f"{frames.width}x{frames.height}"
        )
    counts = []
    for frame in frames:
        patch = frame[roi.y: roi.y + roi.h, roi.x: roi.x + roi.w].astype(np.int16)
        r = patch[:, :, 0]
        gb = np.maximum(patch[:, :, 1], patch[:, :, 2])
        lit = (r >= light_threshold) & (r - gb >= red_margin)
        counts.append(int(np.count_nonzero(lit)))
    return IntensityTrace(camera=roi.camera, fps=frames.fps, counts=counts)


def detect_events(trace: IntensityTrace, pixel_threshold: int,
                  debounce: int = 2) -> list[tuple[int, int]]:
    """ON episodes as (first lit frame, last lit frame), in order.

    A frame is lit when counts >= pixel_threshold; episodes shorter than
    `debounce` frames are discarded as flicker.
    """
    if pixel_threshold < 1:
        raise ValidationError("pixel_threshold must be >= 1")
    on = trace.counts >= pixel_threshold
    events = []
    start = None
    for i, flag in enumerate(on):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            if i - start >= debounce:
                events.append((start, i - 1))
            start = None
    if start is not None and len(on) - start >= debounce:
        events.append((start, len(on) - 1))
    return events


def plan_trims(traces, opts: TrimOptions | None = None) -> TrimPlan:
    """Detect LED events per camera and build synchronised trim windows.

    Trial k of each camera starts at that camera's own k-th LED onset
    (time zero is per-camera). With fixed_length_s the window end is
    on + round(fixed_length_s * fps) - 1 instead of the detected OFF.
    """
    opts = opts or TrimOptions()
    if opts.num_trials < 1:
        raise ValidationError("num_trials must be >= 1")
    if isinstance(traces, dict):
        trace_list = [traces[k] for k in sorted(traces)]
    else:
        trace_list = sorted(traces, key=lambda t: t.camera)
    if not trace_list:
        raise ValidationError("no traces")

    windows: list[TrimWindow] = []
    for trace in trace_list:
        events = detect_events(trace, opts.pixel_threshold, opts.debounce)
        if len(events) != opts.num_trials:
            raise EventCountMismatch(trace.camera, len(events), opts.num_trials)
        for k, (on, off) in enumerate(events):
            if opts.fixed_length_s is not None:
                off = on + int(round(opts.fixed_length_s * trace.fps)) - 1
            if off >= len(trace):
                raise ValidationError(
                    f"camera '{trace.camera}' trial {k}: window end {off} past "
                    f"trace length {len(trace)}"
                )
            windows.append(TrimWindow(camera=trace.camera, start_frame=on,
                                      end_frame=off, trial_index=k))

    for k in range(opts.num_trials):
        lengths = [w.n_frames for w in windows if w.trial_index == k]
        skew = max(lengths) - min(lengths)
        if skew > opts.max_frame_skew:
            raise SkewTooLarge(k, skew, opts.max_frame_skew)
    return TrimPlan(windows=windows, fps={t.camera: t.fps for t in trace_list})


def manual_window(start: int, end: int, camera: str) -> TrimWindow:
    """A literal user-specified window (trial 0)."""
    return TrimWindow(camera=camera, start_frame=start, end_frame=end, trial_index=0)


# -- serialisation ------------------------------------------------------------

def trim_plan_to_dict(plan: TrimPlan) -> dict:
    trials = []
    for k in range(plan.n_trials):
        ws = sorted(plan.trial(k).values(), key=lambda w: w.camera)
        trials.append({
            "index": k,
            "windows": [
                {"camera": w.camera, "start": w.start_frame, "end": w.end_frame}
                for w in ws
            ],
        })
    return {
        "trials": trials,
        "fps": {k: plan.fps[k] for k in sorted(plan.fps)},
        "metadata": {"off_frame_convention": OFF_FRAME_CONVENTION},
    }


def write_trim_plan(plan: TrimPlan, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(trim_plan_to_dict(plan), indent=2, sort_keys=True) + "\n")


def read_trim_plan(path) -> TrimPlan:
    doc = json.loads(Path(path).read_text())
    windows = [
        TrimWindow(camera=w["camera"], start_frame=w["start"], end_frame=w["end"],
                   trial_index=trial["index"])
        for trial in doc["trials"] for w in trial["windows"]
    ]
    return TrimPlan(windows=windows, fps={k: float(v) for k, v in doc["fps"].items()})


def read_trace_csv(path, camera: str, fps: float) -> IntensityTrace:
    """Precomputed ROI trace (frame,count CSV); bypasses frame ingestion."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != TRACE_CSV_HEADER:
            raise ValidationError(f"{path}: expected header frame,count")
        rows = [(int(r[0]), int(r[1])) for r in reader if r]
    rows.sort()
    if [f for f, _ in rows] != list(range(len(rows))):
        raise ValidationError(f"{path}: frames must be contiguous from 0")
    return IntensityTrace(camera=camera, fps=fps, counts=[c for _, c in rows])


def write_trace_csv(trace: IntensityTrace, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(TRACE_CSV_HEADER)]
    lines += [f"{i},{c}" for i, c in enumerate(trace.counts)]
    path.write_text("\n".join(lines) + "\n")
