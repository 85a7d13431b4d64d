"""Pipeline steps over the synthetic fixture: ordering, staleness,
determinism, and the end-to-end closure."""

import json
from pathlib import Path

import numpy as np
import pytest

from mocapkit.calib_io import read_calibration
from mocapkit.dataset import PipelineConfig, scan_dataset
from mocapkit.errors import MissingPrerequisite, NothingToReport
from mocapkit.fixtures import emit_fixture, load_fixture_truth
from mocapkit.pipeline import (
    find_calibration,
    run_step,
    sha256_file,
    step_report,
)
from mocapkit.triangulate import read_points3d_csv


@pytest.fixture(scope="module")
def fixture(tmp_path_factory):
    out = tmp_path_factory.mktemp("fix")
    info = emit_fixture(out, n_cams=3, n_frames=60, fps=60.0, noise_px=0.0, seed=0)
    config = PipelineConfig.load(info["work"])
    index = scan_dataset(info["raw"], config)
    return info, config, index


def _all_hashes(work: Path) -> dict[str, str]:
    return {p.relative_to(work).as_posix(): sha256_file(p)
            for p in sorted(work.rglob("*")) if p.is_file()}


class TestStepOrdering:
    def test_calibrate_requires_trim(self, tmp_path):
        info = emit_fixture(tmp_path / "f", n_cams=2, n_frames=20, seed=1)
        config = PipelineConfig.load(info["work"])
        index = scan_dataset(info["raw"], config)
        with pytest.raises(MissingPrerequisite) as e:
            run_step("calibrate", index, config)
        assert e.value.step == "calibrate"

    def test_triangulate_requires_calibration(self, tmp_path):
        info = emit_fixture(tmp_path / "f", n_cams=2, n_frames=20, seed=1)
        config = PipelineConfig.load(info["work"])
        index = scan_dataset(info["raw"], config)
        run_step("trim", index, config)
        with pytest.raises(MissingPrerequisite) as e:
            run_step("triangulate", index, config)
        assert "calibration.toml" in e.value.artifact

    def test_metrics_requires_points(self, tmp_path):
        info = emit_fixture(tmp_path / "f", n_cams=2, n_frames=20, seed=1)
        config = PipelineConfig.load(info["work"])
        index = scan_dataset(info["raw"], config)
        run_step("trim", index, config)
        with pytest.raises(MissingPrerequisite):
            run_step("metrics", index, config)

    def test_report_with_nothing(self, tmp_path):
        info = emit_fixture(tmp_path / "f", n_cams=2, n_frames=20, seed=1)
        config = PipelineConfig.load(info["work"])
        index = scan_dataset(info["raw"], config)
        with pytest.raises(NothingToReport):
            run_step("report", index, config)


class TestFullRun:
    def test_all_steps_and_closure(self, fixture):
        info, config, index = fixture
        work = Path(info["work"])
        for step in ("trim", "calibrate", "triangulate", "metrics",
                     "features", "report"):
            run_step(step, index, config)

        rig = read_calibration(work / "calibration" / "calibration.toml")
        truth = load_fixture_truth(work, "subj1/taskA/trial1")
        recs = read_points3d_csv(work / "subj1/taskA/trial1/pose-3d/clip.csv")
        to_m = rig.unit_scale / 1000.0
        worst = max(
            np.linalg.norm(r.position * to_m - truth["landmarks"][r.landmark_id][r.frame])
            for r in recs if not r.missing)
        assert worst < 1e-7
        assert sum(r.missing for r in recs) == 0

        metrics_doc = json.loads(
            (work / "subj1/taskA/trial1/metrics/clip.json").read_text())
        assert metrics_doc["values"]["err_mm_median"] < 1e-6
        assert metrics_doc["values"]["pct_large_errors"] == 0.0
        assert (work / "report" / "trials.csv").exists()

    def test_trim_alignment_uses_per_camera_onsets(self, fixture):
        info, config, index = fixture
        work = Path(info["work"])
        plan = json.loads(
            (work / "subj1/taskA/trial1/videos-raw/trim_plan.json").read_text())
        starts = {w["camera"]: w["start"] for w in plan["trials"][0]["windows"]}
        truth = load_fixture_truth(work, "subj1/taskA/trial1")
        assert starts == truth["start_frames"]

    def test_rerun_is_byte_identical(self, fixture):
        info, config, index = fixture
        work = Path(info["work"])
        before = _all_hashes(work)
        for step in ("trim", "calibrate", "triangulate", "metrics",
                     "features", "report"):
            run_step(step, index, config)
        assert _all_hashes(work) == before

    def test_outputs_record_input_hashes(self, fixture):
        info, config, index = fixture
        work = Path(info["work"])
        meta = json.loads(
            (work / "subj1/taskA/trial1/pose-3d/clip.meta.json").read_text())
        assert "calibration/calibration.toml" in meta["inputs"]
        for rel, digest in meta["inputs"].items():
            assert sha256_file(work / rel) == digest

    def test_stale_prerequisite_refused(self, fixture, tmp_path):
        # a fresh copy of the fixture whose corners change after calibrate
        info2 = emit_fixture(tmp_path / "f2", n_cams=3, n_frames=30, seed=3)
        config = PipelineConfig.load(info2["work"])
        index = scan_dataset(info2["raw"], config)
        run_step("trim", index, config)
        run_step("calibrate", index, config)
        corners = Path(info2["work"]) / "calibration" / "corners.csv"
        text = corners.read_text().splitlines()
        corners.write_text("\n".join(text[:-1]) + "\n")  # drop one observation
        with pytest.raises(MissingPrerequisite) as e:
            run_step("triangulate", index, config)
        assert "corners.csv" in e.value.artifact

    def test_scoped_calibration_shadows_root(self, fixture, tmp_path):
        info, config, index = fixture
        trial = index.trials[0]
        assert find_calibration(config, trial).parent.parent == Path(info["work"])


class TestReportShapes:
    def _seed_metrics(self, work: Path, subjects=3, conditions=("taskA", "taskB")):
        rng = np.random.default_rng(0)
        for s in range(1, subjects + 1):
            for cond in conditions:
                d = work / f"subj{s}" / cond / "trial1" / "metrics"
                d.mkdir(parents=True, exist_ok=True)
                doc = {
                    "trial": f"subj{s}/{cond}/trial1/clip",
                    "values": {
                        "corr_median": 0.9 + 0.01 * s,
                        "ldj_median": 8.0 + 0.1 * s + (0.5 if cond == "taskB" else 0.0),
                        "err_mm_median": float(rng.uniform(1, 3)),
                        "pct_large_errors": 0.5,
                        "n_frames": 100, "n_markers": 21,
                    },
                }
                (d / "clip.json").write_text(json.dumps(doc))

    def test_two_conditions_three_subjects(self, tmp_path):
        work = tmp_path / "work"
        work.mkdir()
        config = PipelineConfig(saving_dir=str(work))
        self._seed_metrics(work)
        outputs = step_report(None, config)
        per_subject = (work / "report" / "per_subject.csv").read_text().splitlines()
        assert len(per_subject) == 1 + 6  # header + 3 subjects x 2 conditions
        summary = json.loads((work / "report" / "summary.json").read_text())
        assert set(summary["conditions"]) == {"taskA", "taskB"}
        assert summary["icc"] is not None
        assert set(summary["icc"]) == {"corr", "ldj", "err_mm", "pct_large"}
        assert summary["icc"]["corr"] == pytest.approx(1.0, abs=1e-9)
        long_rows = (work / "report" / "long.csv").read_text().splitlines()[1:]
        assert len(long_rows) == 6 * 4

    def test_single_condition_no_icc(self, tmp_path):
        work = tmp_path / "work"
        work.mkdir()
        config = PipelineConfig(saving_dir=str(work))
        self._seed_metrics(work, conditions=("taskA",))
        step_report(None, config)
        summary = json.loads((work / "report" / "summary.json").read_text())
        assert summary["icc"] is None
