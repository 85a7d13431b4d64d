"""Dataset configuration and directory scanning.

The original recording tree is never written to: its structure
(participant -> task -> trial) is mirrored under the saving directory,
and every pipeline artifact lands in the mirror. A trial is a leaf
directory plus a file stem; each camera contributes one file whose name
carries the camera suffix (default "-cam([A-Z0-9])").
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import (
    CameraSetInconsistent,
    NonVideoInLeaf,
    SuffixMismatch,
    ValidationError,
)
from .metrics import large_error_threshold_mm

BODY_PARTS = ("right_hand", "left_hand", "full_body", "face")
_BODY_SCHEMA = {"right_hand": "hand21", "left_hand": "hand21",
                "full_body": "pose33", "face": "face468"}

CONFIG_NAME = "config.json"


@dataclass
class PipelineConfig:
    saving_dir: str
    body_part: str = "right_hand"
    video_extension: str = ".mp4"
    camera_suffix_pattern: str = r"-cam([A-Z0-9])"
    original_root: str | None = None
    fps: float = 60.0
    light_threshold: int = 200
    pixel_threshold: int = 5
    debounce: int = 2
    num_trials: int = 1
    trial_length_s: float | None = None
    max_frame_skew: int = 2
    red_margin: int = 30
    min_confidence: float = 0.5
    inlier_threshold_px: float = 20.0
    large_error_mm: float | None = None
    dt_metrics: float = 0.005
    max_gap_frames: int = 5
    correlation_mode: str = "position"
    rois: dict = field(default_factory=dict)  # camera -> [x, y, w, h]

    def __post_init__(self):
        if self.body_part not in BODY_PARTS:
            raise ValidationError(
                f"body_part must be one of {BODY_PARTS}, got '{self.body_part}'"
            )
        if not self.video_extension.startswith("."):
            raise ValidationError("video_extension must start with '.'")
        try:
            pat = re.compile(self.camera_suffix_pattern)
        except re.error as e:
            raise ValidationError(f"bad camera suffix pattern: {e}") from e
        if pat.groups != 1:
            raise ValidationError("camera suffix pattern needs exactly one capture group")
        if not (0 <= self.light_threshold <= 255):
            raise ValidationError("light_threshold outside [0, 255]")
        if self.pixel_threshold < 1 or self.debounce < 1 or self.num_trials < 1:
            raise ValidationError("pixel_threshold, debounce and num_trials must be >= 1")
        if not (0.0 <= self.min_confidence <= 1.0):
            raise ValidationError("min_confidence outside [0, 1]")
        if self.dt_metrics <= 0 or self.fps <= 0:
            raise ValidationError("fps and dt_metrics must be positive")
        if self.correlation_mode not in ("position", "displacement"):
            raise ValidationError("correlation_mode must be position|displacement")

    @property
    def schema_id(self) -> str:
        return _BODY_SCHEMA[self.body_part]

    @property
    def threshold_mm(self) -> float:
        if self.large_error_mm is not None:
            return float(self.large_error_mm)
        return large_error_threshold_mm(self.body_part)

    @property
    def suffix_re(self) -> re.Pattern:
        return re.compile(self.camera_suffix_pattern)

    def save(self, path=None) -> Path:
        path = Path(path) if path else Path(self.saving_dir) / CONFIG_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, saving_dir) -> "PipelineConfig":
        path = Path(saving_dir) / CONFIG_NAME
        doc = json.loads(path.read_text())
        return cls(**doc)


@dataclass
class TrialFiles:
    rel_dir: str                 # leaf directory, relative to the root
    base: str                    # shared file stem without the camera suffix
    cameras: dict[str, str]      # camera id -> file name in the leaf dir

    @property
    def key(self) -> str:
        return f"{self.rel_dir}/{self.base}" if self.rel_dir else self.base


@dataclass
class DatasetIndex:
    root: str
    trials: list[TrialFiles]
    camera_ids: list[str]


def split_camera_suffix(name: str, pattern: re.Pattern) -> tuple[str, str]:
    """File name -> (base stem, camera id). Raises SuffixMismatch."""
    stem = name.rsplit(".", 1)[0]
    m = pattern.search(stem)
    if not m:
        raise SuffixMismatch(f"'{name}' does not match camera pattern "
                             f"'{pattern.pattern}'")
    return stem[: m.start()] + stem[m.end():], m.group(1)


def scan_dataset(root, config: PipelineConfig) -> DatasetIndex:
    """Index the original recording tree and mirror it under saving_dir.

    Leaf directories must contain matching video files only; every trial
    must expose the same camera-id set. Originals are never modified.
    """
    root = Path(root)
    if not root.is_dir():
        raise ValidationError(f"dataset root '{root}' is not a directory")
    pattern = config.suffix_re
    trials: list[TrialFiles] = []
    for d in sorted(p for p in root.rglob("*") if p.is_dir()) + [root]:
        children = sorted(d.iterdir())
        if any(c.is_dir() for c in children):
            continue  # not a leaf
        files = [c for c in children if c.is_file()]
        if not files:
            continue
        rel = d.relative_to(root).as_posix()
        rel = "" if rel == "." else rel
        groups: dict[str, dict[str, str]] = {}
        for f in files:
            if f.suffix != config.video_extension:
                raise NonVideoInLeaf(
                    f"'{f}' in trial folder '{rel or '.'}'; leaf folders must "
                    f"contain {config.video_extension} files only"
                )
            base, cam = split_camera_suffix(f.name, pattern)
            slot = groups.setdefault(base, {})
            if cam in slot:
                raise ValidationError(f"duplicate camera '{cam}' for trial "
                                      f"'{rel}/{base}'")
            slot[cam] = f.name
        for base in sorted(groups):
            trials.append(TrialFiles(rel_dir=rel, base=base, cameras=groups[base]))
    if not trials:
        raise ValidationError(f"no trials found under '{root}'")

    camera_ids = sorted(trials[0].cameras)
    for t in trials:
        if sorted(t.cameras) != camera_ids:
            raise CameraSetInconsistent(
                f"trial '{t.key}' has cameras {sorted(t.cameras)}, "
                f"expected {camera_ids}"
            )

    saving = Path(config.saving_dir)
    for t in trials:
        (saving / t.rel_dir).mkdir(parents=True, exist_ok=True)
    return DatasetIndex(root=str(root), trials=trials, camera_ids=camera_ids)
