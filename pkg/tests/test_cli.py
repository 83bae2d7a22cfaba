"""Command-line interface: pipeline runs, manifests, replay, exit codes."""

import json
import subprocess
import sys

import numpy as np
import pytest

import pseudoct.cli as cli
from pseudoct import __version__
from pseudoct.cli import MANIFEST_SCHEMA_VERSION, discover_heads, main
from pseudoct.emission import GaussianComponent
from pseudoct.errors import DataError, NumericalError
from pseudoct.hmrf import MrfParams
from pseudoct.phantom import PhantomSpec
from pseudoct.volume_io import Volume, VolumeHeader, load_volume, save_volume


def run_ok(argv):
    code = main(argv)
    assert code == 0, f"{argv} exited {code}"


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """One full pipeline run shared by the assertions below."""
    root = tmp_path_factory.mktemp("cli_pipeline")
    comps = [
        GaussianComponent(mu=np.array([-30.0, -1.5]),
                          sigma=np.array([[40.0, 2.0], [2.0, 0.5]])),
        GaussianComponent(mu=np.array([40.0, 1.0]),
                          sigma=np.array([[60.0, -3.0], [-3.0, 0.8]])),
    ]
    mrf = MrfParams(alpha=np.array([0.0, 0.1]), beta=np.full(2, -0.35),
                    components=comps)
    spec = PhantomSpec(dims=(8, 8, 8), params=mrf, mask_shape="full",
                       sweeps=40, n_heads=3, seed=21)
    (root / "spec.json").write_text(json.dumps(spec.to_dict(), indent=2))

    run_ok(["phantom", "--spec", str(root / "spec.json"), "--out", str(root / "ens")])
    run_ok(["sequence", "--volume", str(root / "ens" / "head_000"),
            "--out", str(root / "seq")])
    run_ok(["fit-gmm", "--ensemble", str(root / "ens"), "--k", "2",
            "--out", str(root / "gmm"), "--seed", "1"])
    run_ok(["fit-hmm", "--ensemble", str(root / "ens"), "--k", "2",
            "--out", str(root / "hmm"), "--seed", "1"])
    run_ok(["fit-hmrf", "--ensemble", str(root / "ens"), "--k", "2",
            "--out", str(root / "hmrf"), "--seed", "1",
            "--burn-in", "20", "--samples", "40", "--max-iter", "4"])
    for fam, extra in (("gmm", []), ("hmm", []),
                       ("hmrf", ["--burn-in", "40", "--samples", "80"])):
        run_ok(["predict", "--model", str(root / fam / "model.json"),
                "--volume", str(root / "ens" / "head_000"),
                "--out", str(root / f"pred_{fam}"), "--seed", "2", *extra])
    run_ok(["evaluate", "--truth", str(root / "ens" / "head_000"),
            "--prediction", str(root / "pred_gmm" / "prediction"),
            "--out", str(root / "eval")])
    run_ok(["loocv", "--family", "gmm", "--k", "2",
            "--ensemble", str(root / "ens"), "--out", str(root / "cv"),
            "--seed", "3", "--workers", "2"])
    return root


class TestPipelineArtifacts:
    def test_phantom_writes_paired_volumes(self, ws):
        stems = sorted(p.stem for p in (ws / "ens").glob("head_*.json"))
        assert stems == [
            "head_000", "head_000_labels",
            "head_001", "head_001_labels",
            "head_002", "head_002_labels",
        ]
        vol = load_volume(ws / "ens" / "head_000")
        assert vol.dims == (8, 8, 8)
        assert vol.header.channels[1:] == ("CT", "MRI1")

    def test_head_discovery_skips_labels_and_manifest(self, ws):
        found = discover_heads(ws / "ens")
        assert [p.stem for p in found] == ["head_000", "head_001", "head_002"]
        with pytest.raises(DataError, match="no volume header/payload pairs"):
            discover_heads(ws / "seq")

    def test_sequence_summary_document(self, ws):
        doc = json.loads((ws / "seq" / "sequence_summary.json").read_text())
        assert doc["order"] == 3
        assert doc["offset"] == [0, 0, 0]
        assert doc["summary"]["n_voxels"] == 512
        assert doc["summary"]["n_segments"] == 1

    @pytest.mark.parametrize("family", ["gmm", "hmm", "hmrf"])
    def test_fit_outputs(self, ws, family):
        model = json.loads((ws / family / "model.json").read_text())
        assert model["family"] == family
        assert model["K"] == 2
        report = json.loads((ws / family / "fit_report.json").read_text())
        assert report["chosen_init"]
        assert report["n_iter"] >= 1
        assert len(report["loglik_trace"]) >= 1

    @pytest.mark.parametrize("family", ["gmm", "hmm", "hmrf"])
    def test_prediction_volume_layout(self, ws, family):
        pred = load_volume(ws / f"pred_{family}" / "prediction")
        assert pred.header.channels[1:] == ("sCT",)
        truth = load_volume(ws / "ens" / "head_000")
        assert np.array_equal(pred.mask, truth.mask)
        values = pred.channel("sCT")[pred.mask]
        assert np.isfinite(values).all()
        # a sane fit predicts within the span of the true class means
        assert -60 < values.mean() < 70

    def test_evaluate_outputs(self, ws):
        metrics = json.loads((ws / "eval" / "metrics.json").read_text())
        assert 0 < metrics["mae"] < 60
        assert metrics["n_voxels"] == 512
        assert metrics["truth_channel"] == "CT"
        assert metrics["prediction_channel"] == "sCT"
        lines = (ws / "eval" / "residual_bins.csv").read_text().strip().splitlines()
        counts = [int(row.split(",")[2]) for row in lines[1:]]
        assert sum(counts) == 512

    def test_loocv_outputs(self, ws):
        matrix_lines = (ws / "cv" / "mae_matrix.csv").read_text().strip().splitlines()
        assert matrix_lines[0] == "head,excl_head_000,excl_head_001,excl_head_002"
        assert len(matrix_lines) == 5  # three head rows + mean row
        assert matrix_lines[-1].startswith("mean,")
        report = json.loads((ws / "cv" / "loocv_report.json").read_text())
        assert report["family"] == "gmm"
        assert len(report["folds"]) == 3
        assert all(f["error"] is None for f in report["folds"])
        assert (ws / "cv" / "group_means.csv").exists()


class TestManifest:
    def test_schema_and_config_round_trip(self, ws):
        doc = json.loads((ws / "cv" / "run_manifest.json").read_text())
        assert doc["schema_version"] == MANIFEST_SCHEMA_VERSION
        assert doc["package_version"] == __version__
        assert doc["subcommand"] == "loocv"
        assert doc["wall_time_s"] >= 0
        assert doc["config"]["seed"] == 3
        assert doc["config"]["k"] == 2
        assert doc["config"]["workers"] == 2

    def test_replay_reproduces_csv_outputs_bitwise(self, ws):
        before = {p.name: p.read_bytes() for p in (ws / "cv").glob("*.csv")}
        assert before
        run_ok(["--from-manifest", str(ws / "cv" / "run_manifest.json")])
        after = {p.name: p.read_bytes() for p in (ws / "cv").glob("*.csv")}
        assert before == after

    def test_replay_reproduces_evaluation_bitwise(self, ws):
        before = (ws / "eval" / "residual_bins.csv").read_bytes()
        run_ok(["--from-manifest", str(ws / "eval" / "run_manifest.json")])
        assert (ws / "eval" / "residual_bins.csv").read_bytes() == before

    def test_manifest_plus_subcommand_is_a_usage_error(self, ws):
        with pytest.raises(SystemExit) as exc:
            main(["--from-manifest", str(ws / "cv" / "run_manifest.json"),
                  "sequence", "--volume", "x", "--out", "y"])
        assert exc.value.code == 2

    def test_corrupt_manifest_is_a_data_error(self, tmp_path, capsys):
        bad = tmp_path / "run_manifest.json"
        bad.write_text(json.dumps({"schema_version": 99}))
        assert main(["--from-manifest", str(bad)]) == 3
        assert "error [data]" in capsys.readouterr().err

    def test_success_prints_json_summary(self, ws, tmp_path, capsys):
        run_ok(["sequence", "--volume", str(ws / "ens" / "head_001"),
                "--out", str(tmp_path / "seq2")])
        summary = json.loads(capsys.readouterr().out)
        assert summary["subcommand"] == "sequence"
        assert summary["manifest"].endswith("run_manifest.json")


class TestExitCodes:
    def test_missing_volume_is_data_error(self, ws, tmp_path, capsys):
        code = main(["predict", "--model", str(ws / "gmm" / "model.json"),
                     "--volume", str(tmp_path / "nope"),
                     "--out", str(tmp_path / "x")])
        assert code == 3
        assert "error [data]" in capsys.readouterr().err

    def test_unknown_model_family_is_data_error(self, ws, tmp_path, capsys):
        bad = tmp_path / "bad_model.json"
        bad.write_text(json.dumps({"family": "nope", "format_version": 1}))
        code = main(["predict", "--model", str(bad),
                     "--volume", str(ws / "ens" / "head_000"),
                     "--out", str(tmp_path / "x")])
        assert code == 3
        assert "unknown model family" in capsys.readouterr().err

    def test_channel_mismatch_names_the_channels(self, ws, tmp_path, capsys):
        vol = Volume(
            header=VolumeHeader(dims=(4, 4, 4), channels=("a", "b", "c")),
            data=np.zeros((3, 4, 4, 4), dtype=np.float32),
        )
        save_volume(vol, tmp_path / "mismatch")
        code = main(["predict", "--model", str(ws / "gmm" / "model.json"),
                     "--volume", str(tmp_path / "mismatch"),
                     "--out", str(tmp_path / "x")])
        err = capsys.readouterr().err
        assert code == 3
        assert "covariate" in err and "'a'" in err

    def test_numerical_failure_maps_to_exit_4(self, ws, tmp_path, capsys, monkeypatch):
        def exploding(args):
            raise NumericalError("synthetic blow-up")

        monkeypatch.setitem(cli._RUNNERS, "sequence", exploding)
        code = main(["sequence", "--volume", str(ws / "ens" / "head_000"),
                     "--out", str(tmp_path / "x")])
        assert code == 4
        assert "error [numerical]: synthetic blow-up" in capsys.readouterr().err

    def test_usage_errors_exit_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["loocv", "--bogus"])
        assert exc.value.code == 2
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2
        with pytest.raises(SystemExit) as exc:
            main(["sequence", "--volume", "v", "--out", "o", "--offset", "1,2"])
        assert exc.value.code == 2

    def test_failed_run_writes_no_manifest(self, ws, tmp_path, capsys):
        out = tmp_path / "x"
        code = main(["predict", "--model", str(ws / "gmm" / "model.json"),
                     "--volume", str(tmp_path / "nope"), "--out", str(out)])
        capsys.readouterr()
        assert code == 3
        assert not (out / "run_manifest.json").exists()


class TestEntryPoints:
    def test_console_script_reports_version(self):
        cp = subprocess.run(["pseudoct", "--version"], capture_output=True, text=True)
        assert cp.returncode == 0
        assert __version__ in cp.stdout

    def test_module_invocation_propagates_usage_errors(self):
        cp = subprocess.run([sys.executable, "-m", "pseudoct", "badsub"],
                            capture_output=True, text=True)
        assert cp.returncode == 2
