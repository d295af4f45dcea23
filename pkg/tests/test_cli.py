import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from wsinfer.bench import fit_scaling_exponent
from wsinfer.cli import main


def run(*args):
    return main([str(a) for a in args])


def gen(tmp_path, setting, name=None, **flags):
    out = tmp_path / f"{name or setting}.jsonl"
    args = ["gen", "--setting", setting, "--output", out, "--n-bags", 20, "--seed", 1]
    for k, v in flags.items():
        args += [f"--{k.replace('_', '-')}", v]
    assert run(*args) == 0
    return out


SETTINGS = {
    "MultiIns": {"classes": 2},
    "LProp": {"classes": 2},
    "PairComp": {},
    "PairSim": {},
    "SimConf": {},
    "ConfDiff": {},
    "PosUnl": {},
    "UnlUnl": {},
    "PartialL": {"classes": 3, "feature_dim": 3},
    "CompL": {"classes": 3, "feature_dim": 3},
    "SemiSup": {"classes": 3, "feature_dim": 3},
    "Noisy": {"classes": 3, "feature_dim": 3},
}


class TestRoundTrip:
    @pytest.mark.parametrize("setting", sorted(SETTINGS))
    def test_gen_infer_check(self, tmp_path, setting, capsys):
        data = gen(tmp_path, setting, **SETTINGS[setting])
        extra = []
        if setting == "Noisy":
            extra = ["--class-transition", f"{data}.tclass.json"]
        post = tmp_path / "post.jsonl"
        assert run("infer", "--setting", setting, "--input", data, "--output", post, *extra) == 0
        lines = post.read_text().splitlines()
        assert len(lines) == 20
        for line in lines:
            rec = json.loads(line)
            P = np.asarray(rec["posterior"])
            assert np.all((P >= 0) & (P <= 1))
        capsys.readouterr()
        assert run("oracle-check", "--setting", setting, "--input", data, *extra) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["max_abs_diff"] <= 1e-9


class TestInfer:
    def test_three_bags(self, tmp_path):
        p = tmp_path / "in.jsonl"
        p.write_text("".join(json.dumps({"id": f"b{i}", "probs": [[0.5], [0.2]], "weak": [i % 2]}) + "\n" for i in range(3)))
        out = tmp_path / "out.jsonl"
        assert run("infer", "--setting", "MultiIns", "--input", p, "--output", out) == 0
        recs = [json.loads(l) for l in out.read_text().splitlines()]
        assert [r["id"] for r in recs] == ["b0", "b1", "b2"]
        assert recs[0]["posterior"] == [[0.0], [0.0]]

    def test_infeasible_sidecar(self, tmp_path):
        p = tmp_path / "in.jsonl"
        p.write_text(json.dumps({"id": "bad", "probs": [[0.5], [0.5]], "weak": [3]}) + "\n"
                     + json.dumps({"id": "ok", "probs": [[0.5], [0.5]], "weak": [1]}) + "\n")
        out = tmp_path / "out.jsonl"
        assert run("infer", "--setting", "LProp", "--input", p, "--output", out) == 2
        err = [json.loads(l) for l in (tmp_path / "out.jsonl.errors.jsonl").read_text().splitlines()]
        assert [e["id"] for e in err] == ["bad"]
        assert [json.loads(l)["id"] for l in out.read_text().splitlines()] == ["ok"]

    def test_zero_likelihood_bag(self, tmp_path):
        p = tmp_path / "in.jsonl"
        p.write_text(json.dumps({"id": "z", "probs": [[1.0], [0.5]], "weak": [0]}) + "\n")
        assert run("infer", "--setting", "MultiIns", "--input", p, "--output", tmp_path / "o.jsonl") == 2

    def test_malformed(self, tmp_path):
        p = tmp_path / "in.jsonl"
        p.write_text("not json\n")
        assert run("infer", "--setting", "MultiIns", "--input", p, "--output", tmp_path / "o") == 1

    def test_missing_input(self, tmp_path):
        assert run("infer", "--setting", "MultiIns", "--input", tmp_path / "nope", "--output", tmp_path / "o") == 1

    def test_bad_flag(self):
        with pytest.raises(SystemExit) as e:
            run("infer", "--setting", "MultiIns", "--bogus")
        assert e.value.code == 1

    def test_unknown_setting(self):
        with pytest.raises(SystemExit) as e:
            run("infer", "--setting", "CrowdL", "--input", "x", "--output", "y")
        assert e.value.code == 1

    def test_threads_do_not_change_bytes(self, tmp_path):
        data = gen(tmp_path, "LProp", n_bags=60, classes=2)
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        assert run("infer", "--setting", "LProp", "--input", data, "--output", a) == 0
        assert run("infer", "--setting", "LProp", "--input", data, "--output", b, "--threads", 4) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_class_transition(self, tmp_path):
        data = gen(tmp_path, "SimConf", classes=2)
        T = tmp_path / "t.json"
        T.write_text(json.dumps([[0.8, 0.2], [0.2, 0.8]]))
        out = tmp_path / "o.jsonl"
        assert run("infer", "--setting", "SimConf", "--input", data, "--output", out, "--class-transition", T) == 0
        assert run("oracle-check", "--setting", "SimConf", "--input", data, "--class-transition", T) == 0

    def test_config_echo(self, tmp_path, capsys):
        data = gen(tmp_path, "MultiIns")
        capsys.readouterr()
        run("infer", "--setting", "MultiIns", "--input", data, "--output", tmp_path / "o", "--mode", "dense")
        cfg = json.loads(capsys.readouterr().err.splitlines()[0])
        assert cfg["command"] == "infer" and cfg["mode"] == "dense"


class TestOracleCheck:
    def test_tolerance_zero(self, tmp_path, capsys):
        data = gen(tmp_path, "MultiIns", n_bags=50, classes=2)
        assert run("oracle-check", "--setting", "MultiIns", "--input", data, "--tolerance", 0) == 3

    def test_cap(self, tmp_path):
        data = gen(tmp_path, "MultiIns", instances_mean=8)
        assert run("oracle-check", "--setting", "MultiIns", "--input", data, "--max-instances", 2) == 1


class TestGen:
    def test_deterministic(self, tmp_path):
        a = gen(tmp_path, "LProp", name="a")
        b = gen(tmp_path, "LProp", name="b")
        assert a.read_bytes() == b.read_bytes()
        assert (tmp_path / "a.jsonl.truth.jsonl").read_bytes() == (tmp_path / "b.jsonl.truth.jsonl").read_bytes()

    def test_seed_from_environment(self, tmp_path, monkeypatch):
        a = tmp_path / "a.jsonl"
        b = tmp_path / "b.jsonl"
        assert run("gen", "--setting", "MultiIns", "--output", a, "--seed", 42) == 0
        monkeypatch.setenv("WSINFER_SEED", "42")
        assert run("gen", "--setting", "MultiIns", "--output", b) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_bad_environment_seed(self, tmp_path, monkeypatch):
        monkeypatch.setenv("WSINFER_SEED", "abc")
        assert run("gen", "--setting", "MultiIns", "--output", tmp_path / "a") == 1

    def test_bad_spec(self, tmp_path):
        assert run("gen", "--setting", "MultiIns", "--output", tmp_path / "a", "--n-bags", 0) == 1


class TestTrain:
    def test_exact_labels_match_logistic(self, tmp_path, capsys):
        data = gen(tmp_path, "MultiIns", n_bags=200, instances_mean=1, instances_std=0)
        capsys.readouterr()
        code = run("train", "--setting", "MultiIns", "--input", data, "--output", tmp_path / "m.json",
                   "--truth", f"{data}.truth.jsonl", "--baseline", "--epochs", 30, "--seed", 3,
                   "--trace", tmp_path / "trace.csv")
        assert code == 0
        rep = json.loads(capsys.readouterr().out)
        assert rep["accuracy"] == rep["baseline_accuracy"]
        assert json.loads((tmp_path / "m.json").read_text())["d"] == 2
        assert (tmp_path / "trace.png").exists()
        assert len((tmp_path / "trace.csv").read_text().splitlines()) == 31

    def test_baseline_needs_truth(self, tmp_path):
        data = gen(tmp_path, "MultiIns")
        assert run("train", "--setting", "MultiIns", "--input", data, "--output", tmp_path / "m.json", "--baseline") == 1

    def test_bad_config(self, tmp_path):
        data = gen(tmp_path, "MultiIns")
        assert run("train", "--setting", "MultiIns", "--input", data, "--output", tmp_path / "m.json",
                   "--learning-rate", 0) == 1


class TestBench:
    def test_sweep(self, tmp_path, capsys):
        out = tmp_path / "b.csv"
        capsys.readouterr()
        assert run("bench", "--setting", "LProp", "--output", out, "--modes", "dense,lowrank",
                   "--K", "10,20,40,80", "--repeats", 3) == 0
        rows = list(csv.DictReader(out.open()))
        assert len(rows) == 8
        dense = [r for r in rows if r["mode"] == "dense"]
        slope = fit_scaling_exponent([int(r["K"]) for r in dense], [float(r["seconds"]) for r in dense])
        assert slope > 1.5
        assert (tmp_path / "b.png").exists()
        assert "K:dense,1,1" in json.loads(capsys.readouterr().out)["slopes"]

    def test_bad_modes(self, tmp_path):
        with pytest.raises(SystemExit) as e:
            run("bench", "--setting", "LProp", "--output", tmp_path / "b.csv", "--modes", "gpu")
        assert e.value.code == 1

    def test_oracle_cap(self, tmp_path):
        assert run("bench", "--setting", "MultiIns", "--output", tmp_path / "b.csv", "--modes", "oracle", "--K", "18") == 1


class TestEntryPoint:
    def test_module_help(self):
        r = subprocess.run([sys.executable, "-m", "wsinfer.cli", "--help"], capture_output=True, text=True)
        assert r.returncode == 0 and "oracle-check" in r.stdout

    def test_no_command(self):
        r = subprocess.run([sys.executable, "-m", "wsinfer.cli"], capture_output=True, text=True)
        assert r.returncode == 1
