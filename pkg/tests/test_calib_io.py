import numpy as np
import pytest

from mocapkit.calib_io import read_calibration, write_calibration
from mocapkit.calibration import CalibrationResult
from mocapkit.errors import ParseError, SchemaError
from mocapkit.synthetic import make_rig


def _result():
    rig = make_rig(3, radius=0.8)
    return CalibrationResult(rig=rig, rms_error_px=0.123456789012345,
                             per_camera_error_px=[0.1, 0.2, 0.3])


def test_roundtrip_full_precision(tmp_path):
    res = _result()
    path = tmp_path / "calibration.toml"
    write_calibration(res, path)
    rig = read_calibration(path)
    assert rig.unit_scale == res.rig.unit_scale
    assert rig.names == res.rig.names
    for a, b in zip(res.rig.cameras, rig.cameras):
        assert a.intrinsics.fx == b.intrinsics.fx
        assert a.intrinsics.fy == b.intrinsics.fy
        assert a.intrinsics.cx == b.intrinsics.cx
        assert a.intrinsics.cy == b.intrinsics.cy
        assert np.array_equal(a.intrinsics.dist, b.intrinsics.dist)
        assert np.array_equal(a.extrinsics.rotvec, b.extrinsics.rotvec)
        assert np.array_equal(a.extrinsics.tvec, b.extrinsics.tvec)
        assert (a.intrinsics.width, a.intrinsics.height) == \
               (b.intrinsics.width, b.intrinsics.height)


def test_write_is_byte_stable(tmp_path):
    res = _result()
    p1, p2 = tmp_path / "a.toml", tmp_path / "b.toml"
    write_calibration(res, p1)
    write_calibration(res, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_missing_matrix_key_names_the_camera(tmp_path):
    res = _result()
    path = tmp_path / "calibration.toml"
    write_calibration(res, path)
    text = path.read_text().replace("matrix", "matrrix", 1)
    path.write_text(text)
    with pytest.raises(SchemaError, match="cam_0.matrix"):
        read_calibration(path)


def test_wrong_distortion_count_rejected(tmp_path):
    # a 4-coefficient model must be rejected, not coerced
    res = _result()
    path = tmp_path / "calibration.toml"
    write_calibration(res, path)
    lines = path.read_text().splitlines()
    for i, line in enumerate(lines):
        if line.startswith("distortions"):
            vals = line.split("=", 1)[1].strip().strip("[]").split(",")
            lines[i] = "distortions = [" + ",".join(vals[:4]) + "]"
            break
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(SchemaError, match="distortions"):
        read_calibration(path)


def test_parse_error_carries_position(tmp_path):
    path = tmp_path / "calibration.toml"
    path.write_text("[metadata\nrms_error_px = 0.1\n")
    with pytest.raises(ParseError, match=r"line"):
        read_calibration(path)


def test_missing_metadata(tmp_path):
    path = tmp_path / "calibration.toml"
    path.write_text('[cam_0]\nname = "A"\n')
    with pytest.raises(SchemaError, match="metadata"):
        read_calibration(path)
