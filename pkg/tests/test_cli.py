import csv
import json
import time

import pytest
import yaml

from sprint import cli
from sprint.trainer import NumericalError, TrainConfig

FAST = {"SPRINT_EPISODES": "30", "SPRINT_TEST_EPISODES": "50"}


@pytest.fixture
def fast_env(monkeypatch):
    for k, v in FAST.items():
        monkeypatch.setenv(k, v)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_run_synthetic_writes_all_reports(tmp_path, capsys):
    out = tmp_path / "o"
    t0 = time.perf_counter()
    code = cli.main(["run", "--synthetic", "blobs", "--method", "sprint", "--runs", "1", "--out", str(out)])
    elapsed = time.perf_counter() - t0
    assert code == 0
    assert elapsed < 60
    for name in ("runs.csv", "summary.yaml", "manifest.json", "audit.csv"):
        assert (out / name).is_file()
    rows = _rows(out / "runs.csv")
    assert list(rows[0]) == list(cli.RUN_COLUMNS)
    assert [r["session"] for r in rows] == ["0", "1", "2"]
    summary = yaml.safe_load((out / "summary.yaml").read_text())
    assert summary["pd_mean"] <= 2.0
    assert all(round(a, 2) == a for a in summary["acc_mean"])
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["spec"]["train"]["hidden"] == [64, 64]
    assert manifest["version"] and manifest["git"]
    assert "A_0..A_T" in capsys.readouterr().out


def test_manifest_rerun_is_bitwise(tmp_path, fast_env):
    first = tmp_path / "a"
    assert cli.main(["run", "--synthetic", "blobs", "--runs", "2", "--out", str(first)]) == 0
    second = tmp_path / "b"
    assert cli.main(["run", "--manifest", str(first / "manifest.json"), "--out", str(second)]) == 0
    strip = lambda rows: [{k: v for k, v in r.items() if k != "wallclock_s"} for r in rows]
    assert strip(_rows(first / "runs.csv")) == strip(_rows(second / "runs.csv"))
    m1 = json.loads((first / "manifest.json").read_text())
    m2 = json.loads((second / "manifest.json").read_text())
    assert m1["config_hash"] == m2["config_hash"]


def test_env_and_flag_precedence(monkeypatch):
    monkeypatch.setenv("SPRINT_K", "3")
    monkeypatch.setenv("SPRINT_SHARE_BASE_DRAW", "true")
    monkeypatch.setenv("SPRINT_BETA", "1")
    env = cli.env_overrides()
    assert env == {"k": 3, "share_base_draw": True, "beta": 1.0}
    spec = cli.ExperimentSpec(synthetic="blobs", train={"k": 7, "m": 5})
    cfg = cli.resolve_config(spec, {"m": 9, "u": 50}, env, {"k": 10})
    assert (cfg.k, cfg.m, cfg.u, cfg.share_base_draw) == (10, 5, 50, True)


def test_env_bool_must_be_bool(monkeypatch):
    monkeypatch.setenv("SPRINT_FULL_TEST", "maybe")
    with pytest.raises(cli.ConfigError):
        cli.env_overrides()


@pytest.mark.parametrize(
    "body",
    [
        {"synthetic": "blobs", "epochs": 3},
        {"synthetic": "blobs", "method": "icarl"},
        {"synthetic": "blobs", "train": {"betta": 0.5}},
        {"synthetic": "blobs", "sweep": {"beta": []}},
        {"synthetic": "nope"},
        {"dataset": "x.yaml", "synthetic": "blobs"},
        {"synthetic": "blobs", "train": {"beta": 3}},
    ],
)
def test_invalid_config_exits_2(tmp_path, body, capsys):
    cfg = tmp_path / "e.yaml"
    cfg.write_text(yaml.safe_dump(body))
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "error:" in capsys.readouterr().err


def test_missing_dataset_exits_2(tmp_path):
    cfg = tmp_path / "e.yaml"
    cfg.write_text(yaml.safe_dump({"dataset": "missing.yaml"}))
    assert cli.main(["run", "--config", str(cfg)]) == 2


def test_bad_axis_exits_2(tmp_path):
    assert cli.main(["sweep", "--synthetic", "blobs", "--axis", "gamma=1,2", "--out", str(tmp_path)]) == 2
    assert cli.main(["sweep", "--synthetic", "blobs", "--axis", "beta", "--out", str(tmp_path)]) == 2


def test_diverging_run_exits_3_with_diagnostics(tmp_path, capsys):
    cfg = tmp_path / "e.yaml"
    cfg.write_text(yaml.safe_dump({"synthetic": "blobs", "runs": 1, "train": {"lr": 1e200}}))
    out = tmp_path / "o"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 3
    diag = json.loads((out / "diagnostics.json").read_text())
    assert "non-finite" in diag["error"]
    assert str(out / "diagnostics.json") in capsys.readouterr().err


def test_numerical_error_mapping(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NumericalError("non-finite loss/gradient (nan)", {"session": 2})

    monkeypatch.setattr(cli, "run_single", boom)
    assert cli.main(["run", "--synthetic", "blobs", "--out", str(tmp_path)]) == 3
    assert json.loads((tmp_path / "diagnostics.json").read_text())["session"] == 2


def test_sweep_writes_one_report_per_value(tmp_path, fast_env):
    code = cli.main(["sweep", "--synthetic", "blobs", "--runs", "1", "--axis", "beta=0,1.0", "--out", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "beta=0.0" / "summary.yaml").is_file()
    assert (tmp_path / "beta=1.0" / "summary.yaml").is_file()
    table = _rows(tmp_path / "sweep.csv")
    assert [r["beta"] for r in table] == ["0.0", "1.0"]
    man = json.loads((tmp_path / "beta=0.0" / "manifest.json").read_text())
    assert man["spec"]["train"]["beta"] == 0.0


def test_profile_flags_single_run(tmp_path, capsys):
    code = cli.main(["profile", "--synthetic", "blobs", "--runs", "1", "--epochs", "2,4", "--out", str(tmp_path)])
    assert code == 0
    rows = _rows(tmp_path / "profile.csv")
    assert len(rows) == 4
    assert all(r["std_s"] == "" and r["std_flag"] == "single-run" for r in rows)
    assert all(float(r["speedup"]) > 0 for r in rows)
    assert "single run" in capsys.readouterr().out


def test_profile_requires_sprint_and_dense(tmp_path):
    assert cli.main(["profile", "--synthetic", "blobs", "--methods", "sprint", "--out", str(tmp_path)]) == 2


def test_synth_then_run_from_split_config(tmp_path, fast_env):
    data = tmp_path / "data"
    assert cli.main(["synth", "--n-per-class", "100", "--seed", "3", "--out", str(data)]) == 0
    split = yaml.safe_load((data / "split.yaml").read_text())
    assert split["base_classes"] == ["blob0", "blob1", "blob2", "blob3"]
    exp = tmp_path / "exp.yaml"
    exp.write_text(yaml.safe_dump({
        "name": "from-files", "dataset": "data/split.yaml", "method": "protonet", "runs": 1,
        "train": {"hidden": [16, 16], "embed_dim": 8, "u": 100},
    }))
    out = tmp_path / "o"
    assert cli.main(["run", "--config", str(exp), "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["spec"]["train"]["u"] == 100 and man["spec"]["train"]["M0_per_class"] == 2000


def test_audit_reports_precision(tmp_path, fast_env, capsys):
    assert cli.main(["audit", "--synthetic", "blobs", "--runs", "1", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "audit.csv")
    assert [r["session"] for r in rows] == ["1", "2"]
    assert all(float(r["precision"]) == 1.0 for r in rows)
    assert "precision" in capsys.readouterr().out


def test_spec_roundtrip():
    spec = cli.ExperimentSpec(synthetic={"n_classes": 4, "n_base": 2}, sweep={"m": [1, 2]})
    assert cli.ExperimentSpec.from_dict(spec.to_dict()) == spec
    assert set(cli.TRAIN_FIELDS) == {f for f in TrainConfig().to_dict()}
