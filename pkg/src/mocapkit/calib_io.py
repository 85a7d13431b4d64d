"""Read/write the rig calibration file (calibration.toml).

One [cam_N] table per camera in rig order:
    name, size = [w, h], matrix = 3x3 row-major, distortions = 5 floats,
    rotation = axis-angle 3-vector, translation = 3-vector
plus a [metadata] table with rms_error_px and unit_scale. Floats are
written with repr() so a read/write roundtrip is bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .calibration import CalibrationResult
from .cameras import Camera, CameraExtrinsics, CameraIntrinsics, CameraRig
from .errors import ParseError, SchemaError


def _fmt(x: float) -> str:
    return repr(float(x))


def _fmt_list(xs) -> str:
    return "[" + ", ".join(_fmt(x) for x in xs) + "]"


def write_calibration(result: CalibrationResult, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        "[metadata]",
        f"rms_error_px = {_fmt(result.rms_error_px)}",
        f"unit_scale = {_fmt(result.rig.unit_scale)}",
    ]
    for i, cam in enumerate(result.rig.cameras):
        intr, extr = cam.intrinsics, cam.extrinsics
        matrix = (
            f"[{_fmt_list([intr.fx, 0.0, intr.cx])}, "
            f"{_fmt_list([0.0, intr.fy, intr.cy])}, "
            f"{_fmt_list([0.0, 0.0, 1.0])}]"
        )
        lines += [
            "",
            f"[cam_{i}]",
            f"name = {json.dumps(cam.name)}",
            f"size = [{intr.width}, {intr.height}]",
            f"matrix = {matrix}",
            f"distortions = {_fmt_list(intr.dist)}",
            f"rotation = {_fmt_list(extr.rotvec)}",
            f"translation = {_fmt_list(extr.tvec)}",
        ]
    path.write_text("\n".join(lines) + "\n")


def _require(table: dict, table_name: str, key: str):
    if key not in table:
        raise SchemaError(f"{table_name}.{key}")
    return table[key]


def read_calibration(path) -> CameraRig:
    """Parse a calibration file back into a CameraRig."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        raise ParseError(f"{path}: {e}") from e

    meta = doc.get("metadata")
    if meta is None:
        raise SchemaError("metadata")
    unit_scale = float(_require(meta, "metadata", "unit_scale"))
    _require(meta, "metadata", "rms_error_px")

    cam_keys = sorted(
        (k for k in doc if k.startswith("cam_")),
        key=lambda k: int(k.split("_", 1)[1]),
    )
    if not cam_keys:
        raise SchemaError("cam_0")
    cameras = []
    for key in cam_keys:
        t = doc[key]
        name = _require(t, key, "name")
        size = _require(t, key, "size")
        matrix = _require(t, key, "matrix")
        dist = _require(t, key, "distortions")
        rot = _require(t, key, "rotation")
        tra = _require(t, key, "translation")
        if len(size) != 2:
            raise SchemaError(f"{key}.size must be [width, height]")
        if len(matrix) != 3 or any(len(row) != 3 for row in matrix):
            raise SchemaError(f"{key}.matrix must be 3x3")
        if len(dist) != 5:
            raise SchemaError(
                f"{key}.distortions must have 5 coefficients [k1,k2,p1,p2,k3], "
                f"got {len(dist)}; other distortion models are not accepted"
            )
        if len(rot) != 3 or len(tra) != 3:
            raise SchemaError(f"{key}.rotation/translation must be 3-vectors")
        cameras.append(Camera(
            name=str(name),
            intrinsics=CameraIntrinsics(
                fx=float(matrix[0][0]), fy=float(matrix[1][1]),
                cx=float(matrix[0][2]), cy=float(matrix[1][2]),
                dist=[float(d) for d in dist],
                width=int(size[0]), height=int(size[1]),
            ),
            extrinsics=CameraExtrinsics(rotvec=[float(v) for v in rot],
                                        tvec=[float(v) for v in tra]),
        ))
    return CameraRig(cameras=cameras, unit_scale=unit_scale)
