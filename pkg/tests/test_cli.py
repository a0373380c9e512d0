import csv
import json

import numpy as np
import pytest

from strode import cli
from strode.data import read_dataset
from strode.optim import TrainingError


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "hawkes"
    assert cli.main(["generate", "--process", "hawkes", "--out", str(out), "--n-train", "48",
                     "--n-val", "8", "--n-test", "8"]) == 0
    return out


@pytest.fixture(scope="module")
def trained(small_data, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert cli.main(["train", "--data", str(small_data), "--out", str(out), "--epochs", "1"]) == 0
    return out


def test_generate_default_split_sizes(tmp_path):
    out = tmp_path / "full"
    assert cli.main(["generate", "--process", "poisson", "--out", str(out)]) == 0
    sizes = {name: len(read_dataset(out / f"{name}.jsonl")) for name in ["train", "val", "test"]}
    assert sizes == {"train": 5000, "val": 100, "test": 100}
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["process"] == "poisson" and manifest["params"]["rate"] == 10.0


def test_generate_is_reproducible(tmp_path, small_data):
    again = tmp_path / "again"
    cli.main(["generate", "--process", "hawkes", "--out", str(again), "--n-train", "48", "--n-val", "8",
              "--n-test", "8"])
    for name in ["manifest.json", "train.jsonl", "val.jsonl", "test.jsonl"]:
        assert (again / name).read_bytes() == (small_data / name).read_bytes()


def test_unknown_process_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as info:
        cli.main(["generate", "--process", "weibull", "--out", str(tmp_path)])
    assert info.value.code == 2


def test_train_smoke_writes_checkpoint_and_csv(trained):
    assert (trained / "model_seed0.json").is_file()
    with open(trained / "metrics_seed0.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1
    assert list(rows[0]) == ["epoch", "train_loss", "recon", "kl", "val_mse", "val_cs"]
    assert (trained / "curves_seed0.png").stat().st_size > 0


def test_train_missing_data_dir(tmp_path, capsys):
    assert cli.main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 2
    assert "does not exist" in capsys.readouterr().err


def test_train_rejects_unknown_config_field(tmp_path, small_data):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"lr": 1e-3, "warmup": 5}))
    assert cli.main(["train", "--data", str(small_data), "--out", str(tmp_path / "o"), "--config", str(cfg)]) == 2


def test_train_divergence_exit_code(tmp_path, small_data, monkeypatch):
    def boom(*args, **kwargs):
        raise TrainingError("training diverged at epoch 1, step 0")

    monkeypatch.setattr(cli, "train", boom)
    assert cli.main(["train", "--data", str(small_data), "--out", str(tmp_path / "o"), "--epochs", "1"]) == 3


def test_eval_report_and_overwrite_guard(tmp_path, trained, small_data):
    report = tmp_path / "report.json"
    args = ["eval", "--model", str(trained / "model_seed0.json"), "--data", str(small_data), "--report", str(report)]
    assert cli.main(args) == 0
    body = json.loads(report.read_text())
    assert -1 <= body["cs_mean"] <= 1 and body["n_sequences"] == 8
    with open(tmp_path / "timings.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 8 * 9
    assert (tmp_path / "timings.png").stat().st_size > 0
    assert cli.main(args) == 2
    assert cli.main(args + ["--force"]) == 0


def test_eval_copy_truth_fixture(tmp_path, small_data):
    seqs = read_dataset(small_data / "test.jsonl")

    class CopyTruth:
        def infer(self, values):
            return np.stack([s.times[1:] for s in seqs]), values[:, 1:, :]

    report = cli.evaluate_to_files(CopyTruth(), seqs, tmp_path / "r.json", plot=False)
    assert report["cs_mean"] == pytest.approx(1.0, abs=1e-12)


def test_inspect_kl_fixtures(capsys):
    assert cli.main(["inspect-kl", "--fixture", "same", "--oracle"]) == 0
    row = list(csv.DictReader(capsys.readouterr().out.splitlines()))[0]
    assert abs(float(row["oracle"])) < 1e-6 and float(row["bound"]) >= 0
    assert cli.main(["inspect-kl", "--fixture", "exp", "--oracle"]) == 0
    row = list(csv.DictReader(capsys.readouterr().out.splitlines()))[0]
    assert float(row["oracle"]) == pytest.approx(0.19315, abs=1e-4)
    assert float(row["bound"]) >= float(row["oracle"]) - 1e-3


def test_inspect_kl_trained_model_dominates(trained, small_data, capsys):
    assert cli.main(["inspect-kl", "--model", str(trained / "model_seed0.json"), "--data", str(small_data),
                     "--oracle", "--n-sequences", "2"]) == 0
    rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    assert len(rows) == 18
    assert all(float(r["bound"]) >= float(r["oracle"]) - 1e-3 for r in rows)


def test_inspect_kl_needs_a_source():
    assert cli.main(["inspect-kl"]) == 2


def test_postdiction_generate_and_train(tmp_path, capsys):
    data = tmp_path / "post"
    assert cli.main(["generate", "--process", "postdiction", "--out", str(data), "--n-train", "32",
                     "--n-val", "8", "--n-test", "8", "--length", "6"]) == 0
    run = tmp_path / "run"
    assert cli.main(["train", "--data", str(data), "--out", str(run), "--epochs", "1"]) == 0
    assert cli.main(["eval", "--model", str(run / "model_seed0.json"), "--data", str(data),
                     "--report", str(run / "report.json")]) == 0
    assert 0 <= json.loads((run / "report.json").read_text())["accuracy"] <= 1
