import json

import pytest
from conftest import codeswitch_fixture

from oracle_dis.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, dispatch
from oracle_dis.model import load_checkpoint


@pytest.fixture
def workdir(tmp_path):
    assert dispatch(["gen-synth", "--out", str(tmp_path / "syn.oemb"), "--n", "400", "--seed", "0",
                     "--split", "0.8,0.1,0.1"]) == EXIT_OK
    config = {
        "objective": {"preset": "meat+oracle"},
        "train": {"learning_rate": 1e-3, "batch_size": 64, "max_iterations": 40, "eval_every": 10, "seed": 0},
        "model": {"d": 16, "hidden_layers": [16], "activation": "tanh", "L": 2},
        "paths": {"train_corpora": ["syn.train.oemb"], "val_corpus": "syn.val.oemb",
                  "test_corpus": "syn.test.oemb", "checkpoint_out": "model.json"},
    }
    (tmp_path / "run.json").write_text(json.dumps(config))
    return tmp_path


def test_train_writes_checkpoint_and_report(workdir, capsys):
    assert dispatch(["train", "--config", str(workdir / "run.json")]) == EXIT_OK
    params, loss_cfg = load_checkpoint(workdir / "model.json")
    assert params.d == 16 and loss_cfg["preset"] == "meat+oracle"
    report = json.loads((workdir / "model.report.json").read_text())
    assert report["iterations_run"] == 40 and "evaluation" in report


def test_train_is_byte_identical_and_flags_override(workdir, monkeypatch):
    cfg = str(workdir / "run.json")
    for name in ("a.json", "b.json"):
        assert dispatch(["train", "--config", cfg, "--checkpoint-out", str(workdir / name)]) == EXIT_OK
    assert (workdir / "a.json").read_bytes() == (workdir / "b.json").read_bytes()
    monkeypatch.setenv("ORACLE_DIS_SEED", "5")
    assert dispatch(["train", "--config", cfg, "--checkpoint-out", str(workdir / "c.json")]) == EXIT_OK
    assert dispatch(["train", "--config", cfg, "--seed", "5", "--checkpoint-out", str(workdir / "d.json")]) == EXIT_OK
    assert (workdir / "c.json").read_bytes() != (workdir / "a.json").read_bytes()
    assert (workdir / "c.json").read_bytes() == (workdir / "d.json").read_bytes()


def test_eval_prints_table(workdir, capsys):
    dispatch(["train", "--config", str(workdir / "run.json")])
    capsys.readouterr()
    code = dispatch(["eval", "--ckpt", str(workdir / "model.json"), "--corpus", str(workdir / "syn.test.oemb"),
                     "--report-out", str(workdir / "eval.json")])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert "Semantic (higher is better)" in out and "Language (lower is better)" in out and "en->de" in out
    assert json.loads((workdir / "eval.json").read_text())["n_test"] == 40


def test_project_writes_csv(workdir):
    dispatch(["train", "--config", str(workdir / "run.json")])
    out = workdir / "proj.csv"
    assert dispatch(["project", "--ckpt", str(workdir / "model.json"), "--corpus", str(workdir / "syn.test.oemb"),
                     "--out", str(out)]) == EXIT_OK
    assert "x,y,group_label" in out.read_text()


def test_codeswitch_command(tmp_path):
    sentences, lines = codeswitch_fixture(n_sentences=50)
    (tmp_path / "s.txt").write_text("\n".join(" ".join(s) for s in sentences) + "\n", encoding="utf-8")
    (tmp_path / "d.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    args = ["codeswitch", "--sentences", str(tmp_path / "s.txt"), "--dict", str(tmp_path / "d.txt"),
            "--rate", "0.2", "--seed", "1", "--out", str(tmp_path / "o.txt")]
    assert dispatch(args) == EXIT_OK
    report = json.loads((tmp_path / "o.txt.report.json").read_text())
    assert report["sentences_in"] == 50


def test_missing_config_is_data_error(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert dispatch(["train", "--config", str(missing)]) == EXIT_DATA
    assert str(missing) in capsys.readouterr().err


def test_corrupt_corpus_is_data_error(workdir):
    (workdir / "syn.val.oemb").write_bytes(b"junk")
    assert dispatch(["train", "--config", str(workdir / "run.json")]) == EXIT_DATA


def test_usage_errors():
    assert dispatch([]) == EXIT_USAGE
    assert dispatch(["bogus"]) == EXIT_USAGE
    assert dispatch(["eval", "--ckpt", "x"]) == EXIT_USAGE


def test_gradcheck_command(capsys):
    assert dispatch(["gradcheck", "--instances", "2"]) == EXIT_OK
    assert capsys.readouterr().out.count("PASS") == 13
