"""CLI behavior: subcommands, exit codes, decoder integration."""

import json
import sys
from pathlib import Path

from mocapkit.cli import main
from mocapkit.pipeline import DECODER_ENV

FAKE_DECODER = """\
import sys
import numpy as np

W = H = 8
sys.stdout.buffer.write(b"8 8 30 rgb24\\n")
for i in range(50):
    frame = np.zeros((H, W, 3), np.uint8)
    if 2 <= i <= 41:
        frame[0:4, 0:4, 0] = 255
    sys.stdout.buffer.write(frame.tobytes())
"""


def _make_videos(root: Path, cams=("A", "B")):
    leaf = root / "P1" / "T1"
    leaf.mkdir(parents=True)
    for cam in cams:
        (leaf / f"clip-cam{cam}.mp4").write_bytes(b"")


class TestExitCodes:
    def test_step_before_configure(self, tmp_path):
        assert main(["trim", "--saving-dir", str(tmp_path / "w")]) == 3

    def test_scan_before_configure(self, tmp_path):
        _make_videos(tmp_path / "raw")
        assert main(["scan", str(tmp_path / "raw"),
                     "--saving-dir", str(tmp_path / "w")]) == 3

    def test_validation_error_is_2(self, tmp_path):
        _make_videos(tmp_path / "raw")
        work = str(tmp_path / "w")
        assert main(["configure", "--saving-dir", work]) == 0
        (tmp_path / "raw" / "P1" / "T1" / "notes.txt").write_text("x")
        assert main(["scan", str(tmp_path / "raw"), "--saving-dir", work]) == 2

    def test_out_of_order_is_3(self, tmp_path):
        _make_videos(tmp_path / "raw")
        work = str(tmp_path / "w")
        assert main(["configure", "--saving-dir", work]) == 0
        assert main(["scan", str(tmp_path / "raw"), "--saving-dir", work]) == 0
        assert main(["triangulate", "--saving-dir", work]) == 3
        assert main(["calibrate", "--saving-dir", work]) == 3


class TestConfigure:
    def test_writes_config(self, tmp_path):
        work = tmp_path / "w"
        rc = main(["configure", "--saving-dir", str(work),
                   "--body-part", "left_hand", "--fps", "120",
                   "--roi", "A:1,2,10,12", "--roi", "B:0,0,8,8"])
        assert rc == 0
        doc = json.loads((work / "config.json").read_text())
        assert doc["body_part"] == "left_hand"
        assert doc["rois"] == {"A": [1, 2, 10, 12], "B": [0, 0, 8, 8]}

    def test_bad_roi_is_validation_error(self, tmp_path):
        assert main(["configure", "--saving-dir", str(tmp_path / "w"),
                     "--roi", "A:nope"]) == 2


class TestManualTrim:
    def test_manual_window_applied_everywhere(self, tmp_path):
        _make_videos(tmp_path / "raw")
        work = str(tmp_path / "w")
        assert main(["configure", "--saving-dir", work]) == 0
        assert main(["scan", str(tmp_path / "raw"), "--saving-dir", work]) == 0
        assert main(["trim", "--saving-dir", work, "--manual", "10:500"]) == 0
        plan = json.loads(
            (tmp_path / "w" / "P1" / "T1" / "videos-raw" / "trim_plan.json").read_text())
        windows = plan["trials"][0]["windows"]
        assert {w["camera"] for w in windows} == {"A", "B"}
        assert all(w["start"] == 10 and w["end"] == 500 for w in windows)

    def test_inverted_manual_is_2(self, tmp_path):
        _make_videos(tmp_path / "raw")
        work = str(tmp_path / "w")
        main(["configure", "--saving-dir", work])
        main(["scan", str(tmp_path / "raw"), "--saving-dir", work])
        assert main(["trim", "--saving-dir", work, "--manual", "9:3"]) == 2


class TestDecoderIntegration:
    def test_auto_trim_runs_external_decoder(self, tmp_path, monkeypatch):
        _make_videos(tmp_path / "raw")
        work = str(tmp_path / "w")
        script = tmp_path / "fake_decoder.py"
        script.write_text(FAKE_DECODER)
        monkeypatch.setenv(DECODER_ENV, f"{sys.executable} {script} {{video}}")
        assert main(["configure", "--saving-dir", work, "--fps", "30",
                     "--roi", "A:0,0,6,6", "--roi", "B:0,0,6,6",
                     "--pixel-threshold", "5"]) == 0
        assert main(["scan", str(tmp_path / "raw"), "--saving-dir", work]) == 0
        assert main(["trim", "--saving-dir", work]) == 0
        plan = json.loads(
            (tmp_path / "w" / "P1" / "T1" / "videos-raw" / "trim_plan.json").read_text())
        windows = plan["trials"][0]["windows"]
        assert all(w["start"] == 2 and w["end"] == 41 for w in windows)
        # decoded traces are cached next to the plan
        assert (tmp_path / "w" / "P1" / "T1" / "videos-raw" /
                "clip-camA_trace.csv").exists()

    def test_auto_trim_without_decoder_or_traces_is_3(self, tmp_path, monkeypatch):
        monkeypatch.delenv(DECODER_ENV, raising=False)
        _make_videos(tmp_path / "raw")
        work = str(tmp_path / "w")
        main(["configure", "--saving-dir", work, "--roi", "A:0,0,6,6",
              "--roi", "B:0,0,6,6"])
        main(["scan", str(tmp_path / "raw"), "--saving-dir", work])
        assert main(["trim", "--saving-dir", work]) == 3


class TestSynthRoundtrip:
    def test_synth_then_full_pipeline(self, tmp_path):
        out = tmp_path / "fix"
        assert main(["synth", str(out), "--frames", "24", "--cameras", "2",
                     "--seed", "5"]) == 0
        work = str(out / "work")
        for step in ("trim", "calibrate", "triangulate", "metrics",
                     "features", "report"):
            assert main([step, "--saving-dir", work]) == 0, step
        assert (out / "work" / "report" / "summary.json").exists()
