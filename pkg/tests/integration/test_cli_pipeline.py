"""
Integration tests for the surveyalloc command line
"""

import json

import pandas as pd
import pytest

from cli.main import run

SMALL_FRAME = """\
strata:
  - {stratum_id: "1", region: N, n_psus: 8, units: 800}
  - {stratum_id: "2", region: S, n_psus: 8, units: 700}
targets:
  - {name: Y1, kind: binary, base: 0.3, psu_sd: 0.3}
  - {name: Y2, base: 50.0, psu_sd: 3.0, noise_sd: 10.0}
psu_size_sigma: 0.3
"""


def _manifest(out):
    return json.loads((out / "run_manifest.json").read_text(encoding="utf-8"))


@pytest.mark.integration
class TestExitCodes:
    """Exit codes and manifest status"""

    def test_synth_succeeds(self, tmp_path):
        spec = tmp_path / "frame.yaml"
        spec.write_text(SMALL_FRAME, encoding="utf-8")
        out = tmp_path / "out"
        assert run(["synth", "--spec", str(spec), "--seed", "1", "-o", str(out)]) == 0
        frame = pd.read_csv(out / "frame.csv")
        assert len(frame) == 1500
        manifest = _manifest(out)
        assert manifest["status"] == "ok"
        assert manifest["seed"] == 1
        assert manifest["outputs"] == ["frame.csv"]

    def test_missing_required_option(self, tmp_path):
        out = tmp_path / "out"
        assert run(["check", "--strata", "s.csv", "-o", str(out)]) == 2
        manifest = _manifest(out)
        assert manifest["status"] == "failed"
        assert manifest["error"]["category"] == "usage"

    def test_unknown_command(self):
        assert run(["shuffle"]) == 2

    def test_missing_input_file(self, tmp_path, capsys):
        out = tmp_path / "out"
        code = run(
            ["check", "--strata", str(tmp_path / "absent.csv"), "--psu", "p.csv", "--des", "d.csv", "-o", str(out)]
        )
        assert code == 1
        assert "input error" in capsys.readouterr().err
        assert _manifest(out)["error"]["category"] == "input"

    def test_single_replicate_rejected(self, tmp_path):
        out = tmp_path / "out"
        argv = ["evaluate", "--frame", "f", "--strata", "s", "--errors", "e", "--alloc2", "a", "--psu", "p"]
        argv += ["--des", "d", "--target-vars", "Y1", "--seed", "1", "--nsampl", "1", "-o", str(out)]
        assert run(argv) == 1
        assert _manifest(out)["error"]["category"] == "evaluation"

    def test_output_dir_from_environment(self, tmp_path, monkeypatch):
        spec = tmp_path / "frame.yaml"
        spec.write_text(SMALL_FRAME, encoding="utf-8")
        monkeypatch.setenv("SURVEYALLOC_OUTPUT_DIR", str(tmp_path / "env_out"))
        assert run(["synth", "--spec", str(spec), "--seed", "2"]) == 0
        assert (tmp_path / "env_out" / "frame.csv").is_file()


@pytest.mark.integration
@pytest.mark.slow
@pytest.mark.e2e
class TestPipeline:
    """Frame to evaluated two-stage sample"""

    def test_full_pipeline(self, tmp_path):
        spec = tmp_path / "frame.yaml"
        spec.write_text(SMALL_FRAME, encoding="utf-8")
        out = tmp_path / "out"
        common = ["-o", str(out), "--seed", "11", "-q"]

        assert run(["synth", "--spec", str(spec)] + common) == 0
        frame = str(out / "frame.csv")

        prepare = ["prepare", "--frame", frame, "--id-psu", "PSU_ID", "--id-ssu", "UNIT_ID"]
        prepare += ["--strata-var", "STRATUM", "--target-vars", "Y1", "Y2", "--binary-vars", "Y1"]
        prepare += ["--domain-vars", "REGION", "--minimum", "10"]
        assert run(prepare + common) == 0
        strata = pd.read_csv(out / "strata.csv")
        assert strata["N"].tolist() == [800, 700]

        pd.DataFrame({"DOM": ["DOM1", "DOM2"], "CV1": [0.08, 0.12], "CV2": [0.02, 0.03]}).to_csv(
            tmp_path / "errors.csv", index=False
        )
        inputs = ["--strata", str(out / "strata.csv"), "--psu", str(out / "psu.csv"), "--des", str(out / "des.csv")]

        assert run(["check"] + inputs + common) == 0
        check = pd.read_csv(out / "check_input.csv")
        assert (check["DIFFERENCE"] == 0).all()

        allocate = ["allocate", "--stages", "2", "--errors", str(tmp_path / "errors.csv"), "--rho", str(out / "rho.csv")]
        assert run(allocate + inputs + common) == 0
        alloc2 = pd.read_csv(out / "alloc2.csv")
        assert list(alloc2["STRATUM"]) == [1, 2]
        assert (alloc2["SSU"] > 0).all()
        assert (out / "iterations.csv").is_file()
        assert (out / "plot_alloc.csv").is_file()

        selection = ["select-psu", "--alloc2", str(out / "alloc2.csv"), "--psu", str(out / "psu.csv")]
        selection += ["--des", str(out / "des.csv")]
        assert run(selection + common) == 0
        stats = pd.read_csv(out / "PSU_stats.csv").set_index("STRATUM")
        assert stats.loc["Total", "SSU"] >= alloc2["SSU"].sum()

        ssu = ["select-ssu", "--frame", frame, "--sample-psu", str(out / "sample_PSU.csv")]
        assert run(ssu + common) == 0
        sample = pd.read_csv(out / "sample_SSU.csv")
        sample_psu = pd.read_csv(out / "sample_PSU.csv")
        assert set(sample["PSU_ID"]) == set(sample_psu["PSU_ID"])
        assert (sample["WEIGHT"] >= 1.0).all()

        evaluate = ["evaluate", "--frame", frame, "--strata", str(out / "strata.csv")]
        evaluate += ["--errors", str(tmp_path / "errors.csv"), "--alloc2", str(out / "alloc2.csv")]
        evaluate += ["--psu", str(out / "psu.csv"), "--des", str(out / "des.csv")]
        evaluate += ["--target-vars", "Y1", "Y2", "--nsampl", "3"]
        assert run(evaluate + common) == 0
        summary = pd.read_csv(out / "eval_summary.csv")
        assert len(summary) == 6
        assert set(summary["VAR"]) == {"Y1", "Y2"}
        assert _manifest(out)["status"] == "ok"
