import json

import pytest

from mipp.cli import EXIT_COLLAPSE, EXIT_ERROR, EXIT_OK, build_parser, main
from mipp.data import DATA_ROOT_ENV
from mipp.formats import write_masks
from mipp.models import PruneMask
from mipp.pipeline import build_report


def last_json(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


@pytest.fixture(scope="module")
def ckpt(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "m.ckpt"
    assert main(["train", "--epochs", "5", "--out", str(path)]) == EXIT_OK
    return path


def test_verbs_registered():
    parser = build_parser()
    verbs = parser._subparsers._group_actions[0].choices
    for verb in ("train", "prune", "retrain", "sweep", "feature-select", "export-activations", "import-masks", "run"):
        assert verb in verbs


def test_prune_retrain_import(ckpt, tmp_path, capsys):
    masks = tmp_path / "masks.json"
    assert main(["prune", "--checkpoint", str(ckpt), "--x", "0.9", "--samples", "600", "--out", str(masks)]) == EXIT_OK
    out = last_json(capsys)
    assert 0 < out["global_pr"] < 1 and not out["collapsed"]
    assert main(["retrain", "--checkpoint", str(ckpt), "--masks", str(masks), "--epochs", "2"]) == EXIT_OK
    assert 0 <= last_json(capsys)["acc_retrained"] <= 1
    pruned = tmp_path / "p.ckpt"
    assert main(["import-masks", "--checkpoint", str(ckpt), "--masks", str(masks), "--out", str(pruned)]) == EXIT_OK
    assert pruned.exists()


def test_export_then_prune_activations(ckpt, tmp_path, capsys):
    acts = tmp_path / "a.bin"
    assert main(["export-activations", "--checkpoint", str(ckpt), "--samples", "400", "--out", str(acts)]) == EXIT_OK
    assert last_json(capsys)["samples"] == 400
    assert main(["prune", "--activations", str(acts), "--collapse-fn", "l2", "--out", str(tmp_path / "m.json")]) == EXIT_OK


def test_feature_select_verb(ckpt, tmp_path, capsys):
    out = tmp_path / "fs.json"
    assert main(["feature-select", "--checkpoint", str(ckpt), "--samples", "600", "--out", str(out)]) == EXIT_OK
    doc = json.loads(out.read_text())
    assert sorted(doc["kept"] + doc["dropped"]) == list(range(64))


def test_fail_on_collapse_exit_code(ckpt, tmp_path, capsys, monkeypatch):
    import mipp.cli as cli

    collapsed = build_report([PruneMask(0, [0] * 32), PruneMask(1, [1] * 16)])
    monkeypatch.setattr(cli, "mipp", lambda capture, cfg: collapsed)
    args = ["prune", "--checkpoint", str(ckpt), "--samples", "100", "--out", str(tmp_path / "m.json")]
    assert main(args) == EXIT_OK
    assert main(args + ["--fail-on-collapse"]) == EXIT_COLLAPSE


def test_run_and_sweep(tmp_path, capsys):
    common = ["--epochs", "3", "--retrain-epochs", "1", "--samples", "500"]
    assert main(["run", *common, "--seeds", "0", "1", "--out", str(tmp_path / "run")]) == EXIT_OK
    assert (tmp_path / "run" / "results.csv").read_text().count("\n") == 7
    assert main(["sweep", *common, "--schedule-steps", "2", "--baselines", "--out", str(tmp_path / "sw")]) == EXIT_OK
    assert (tmp_path / "sw" / "collapse_histogram.csv").exists()


def test_missing_mnist_reports_error(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(DATA_ROOT_ENV, str(tmp_path / "none"))
    assert main(["train", "--dataset", "mnist", "--out", str(tmp_path / "m")]) == EXIT_ERROR
    assert str(tmp_path / "none") in capsys.readouterr().err
