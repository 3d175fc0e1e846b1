import csv
import hashlib
import json

import numpy as np
import pytest

from deepcovidnet import artifact
from deepcovidnet.cli import RunConfig, main


def digest(directory):
    h = hashlib.sha256()
    for p in sorted(directory.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(directory)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = root / "spec.json"
    spec.write_text(json.dumps({"counties": 4, "days": 30, "seed": 2}))
    assert main(["gen-data", str(spec), "--out", str(root / "u")]) == 0
    assert main(["train", "--universe", str(root / "u"), "--out", str(root / "m" / "model.json"), "--epochs", "3", "--seed", "1"]) == 0
    return root


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestGenData:
    def test_bundled_desk(self, tmp_path, capsys):
        assert main(["gen-data", "desk_small", "--out", str(tmp_path / "d")]) == 0
        err = capsys.readouterr().err
        assert "20 counties, 60 days" in err and "8 groups" in err
        reg = json.loads((tmp_path / "d" / "registry.json").read_text())
        assert len(reg["groups"]) == 8 and reg["days"] == 60

    def test_same_seed_same_bytes(self, tmp_path):
        for name in ("a", "b"):
            assert main(["gen-data", "desk_small", "--out", str(tmp_path / name), "--seed", "4"]) == 0
        assert digest(tmp_path / "a") == digest(tmp_path / "b")

    def test_invalid_spec(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"counties": 3,\n "recipe": [{"kind": "main", "features": ["census/zzz"]}]}')
        assert main(["gen-data", str(bad), "--out", str(tmp_path / "x")]) == 1
        assert "census/zzz" in capsys.readouterr().err

    def test_unwritable_out(self, tmp_path):
        blocker = tmp_path / "f"
        blocker.write_text("")
        assert main(["gen-data", "desk_small", "--out", str(blocker / "u")]) != 0


class TestTrain:
    def test_artifact_and_report(self, workdir):
        model = artifact.load(workdir / "m" / "model.json")
        assert model.meta["epochs"] >= 1
        rows = read_csv(workdir / "m" / "model.report.csv")
        assert [r["epoch"] for r in rows] == ["1", "2", "3"]

    def test_rerun_identical_bytes(self, workdir, tmp_path):
        out = tmp_path / "again.json"
        assert main(["train", "--universe", str(workdir / "u"), "--out", str(out), "--epochs", "3", "--seed", "1"]) == 0
        assert out.read_bytes() == (workdir / "m" / "model.json").read_bytes()

    def test_zero_learning_rate(self, workdir, tmp_path, caplog):
        out = tmp_path / "lr0.json"
        assert main(["train", "--universe", str(workdir / "u"), "--out", str(out), "--epochs", "2", "--lr", "0", "--seed", "1"]) == 0
        assert "learning rate is 0" in caplog.text
        trained = artifact.load(out)
        from deepcovidnet.model import DeepCOVIDNet

        fresh = DeepCOVIDNet(trained.config, seed=1)
        for k, v in fresh.state().items():
            np.testing.assert_array_equal(trained.state()[k], v)

    def test_config_file_and_override(self, workdir, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"universe": str(workdir / "u"), "hyperparams": {"epochs_max": 2, "e": 4}, "seed": 1}))
        out = tmp_path / "c.json"
        assert main(["train", "--config", str(cfg), "--out", str(out), "--e", "5"]) == 0
        assert artifact.load(out).config.e == 5

    def test_bad_config(self, tmp_path):
        with pytest.raises(ValueError):
            RunConfig(split={"fractions": [0.5, 0.2, 0.2]})
        with pytest.raises(ValueError):
            RunConfig(hyperparams={"nope": 1})


def test_tune_writes_trials(workdir, tmp_path):
    out = tmp_path / "t" / "model.json"
    assert main(["tune", "--universe", str(workdir / "u"), "--out", str(out), "--budget", "5", "--epochs", "2", "--seed", "0"]) == 0
    rows = read_csv(tmp_path / "t" / "tune_trials.csv")
    assert len(rows) == 5
    assert {"trial", "value", "epochs", "e", "learning_rate"} <= set(rows[0])
    assert out.exists()


class TestPredict:
    def test_rows(self, workdir, capsys):
        u = str(workdir / "u")
        assert main(["predict", "--artifact", str(workdir / "m" / "model.json"), "--universe", u, "--dates", "2020-04-24:2020-04-26", "--counties", "c000,c003"]) == 0
        lines = capsys.readouterr().out.splitlines()
        rows = list(csv.DictReader(lines))
        assert len(rows) == 6
        model = artifact.load(workdir / "m" / "model.json")
        for r in rows:
            probs = [float(r[f"p_class{k}"]) for k in range(4)]
            assert abs(sum(probs) - 1) <= 1e-9
            assert r["range"] == model.boundaries.ranges()[int(r["predicted_class"])]

    def test_short_history_skipped(self, workdir, tmp_path, caplog):
        out = tmp_path / "p.csv"
        assert main(["predict", "--artifact", str(workdir / "m" / "model.json"), "--universe", str(workdir / "u"), "--dates", "2020-04-10,2020-04-30", "--out", str(out)]) == 0
        rows = read_csv(out)
        assert {r["date"] for r in rows} == {"2020-04-30"}
        assert "skipping 2020-04-10" in caplog.text

    def test_forecast_past_last_day(self, workdir, tmp_path):
        out = tmp_path / "f.csv"
        assert main(["predict", "--artifact", str(workdir / "m" / "model.json"), "--universe", str(workdir / "u"), "--dates", "2020-05-11", "--out", str(out)]) == 0
        assert len(read_csv(out)) == 4

    def test_registry_mismatch(self, workdir, tmp_path, capsys):
        spec = tmp_path / "s.json"
        spec.write_text(json.dumps({"counties": 5, "days": 30, "seed": 2}))
        main(["gen-data", str(spec), "--out", str(tmp_path / "u5")])
        capsys.readouterr()
        assert main(["predict", "--artifact", str(workdir / "m" / "model.json"), "--universe", str(tmp_path / "u5")]) == 1
        err = capsys.readouterr().err
        assert "differ" in err and "cross_county" in err

    def test_missing_artifact(self, workdir):
        assert main(["predict", "--artifact", "missing.json", "--universe", str(workdir / "u")]) == 2


class TestAnalysisCommands:
    @pytest.mark.parametrize("cmd, stem", [("importance", "importance"), ("timesteps", "timesteps"), ("interactions", "interactions")])
    def test_reports(self, workdir, tmp_path, cmd, stem):
        args = [cmd, "--artifact", str(workdir / "m" / "model.json"), "--universe", str(workdir / "u"), "--out", str(tmp_path)]
        if cmd != "interactions":
            args += ["--repeats", "1"]
        assert main(args) == 0
        assert (tmp_path / f"{stem}.csv").exists() and (tmp_path / f"{stem}.json").exists()

    def test_interactions_long_format(self, workdir, tmp_path):
        assert main(["interactions", "--artifact", str(workdir / "m" / "model.json"), "--universe", str(workdir / "u"), "--out", str(tmp_path)]) == 0
        assert len(read_csv(tmp_path / "interactions.csv")) == 28

    def test_missing_artifact(self, workdir, tmp_path):
        assert main(["importance", "--artifact", str(tmp_path / "none.json"), "--universe", str(workdir / "u"), "--out", str(tmp_path)]) == 2


def test_check_grads(capsys):
    assert main(["check-grads", "--out", "-"]) == 0
    captured = capsys.readouterr()
    assert json.loads(captured.out)["passed"] is True
    assert "gradient check passed" in captured.err


def test_no_command():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_eval_split_test(workdir, tmp_path):
    args = ["importance", "--artifact", str(workdir / "m" / "model.json"), "--universe", str(workdir / "u"), "--repeats", "1"]
    assert main(args + ["--eval-split", "test", "--out", str(tmp_path / "t")]) == 0
    assert main(args + ["--out", str(tmp_path / "d")]) == 0
    assert (tmp_path / "t" / "importance.csv").read_bytes() != (tmp_path / "d" / "importance.csv").read_bytes()
