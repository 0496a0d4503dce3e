import csv
import struct

import numpy as np
import pytest

from conftest import DATA_DIR, needs_mnist
from leamvd import cli, objectives, rbm


def synth(tmp_path, name="a", **kw):
    base = dict(name="synthetic", budget=15, n_var=30, seed=4, out=str(tmp_path / name))
    base.update(kw)
    return cli.ExperimentProfile(**base)


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_synthetic_run_artifacts(tmp_path):
    out = cli.run_experiment(synth(tmp_path))
    hist = rows(out / "history_layer1.csv")
    assert 1 <= len(hist) <= 15
    assert list(hist[0]) == list(cli.HISTORY_COLUMNS)
    f = [float(r["f_best"]) for r in hist]
    assert all(b <= a for a, b in zip(f, f[1:]))
    assert [int(r["generation"]) for r in hist] == list(range(1, len(hist) + 1))
    meta = (out / "run.meta").read_text()
    assert "seed = 4" in meta and "prng = numpy PCG64" in meta


def test_csv_format(tmp_path):
    raw = (cli.run_experiment(synth(tmp_path)) / "history_layer1.csv").read_bytes()
    assert b"\r" not in raw and raw.endswith(b"\n")
    assert raw.splitlines()[0] == b"generation,f_best,sigma_norm,beta1,beta2,restarted,evals_cumulative"


def test_repeated_run_bitwise_identical(tmp_path):
    a = cli.run_experiment(synth(tmp_path, "a"))
    b = cli.run_experiment(synth(tmp_path, "b"))
    assert (a / "history_layer1.csv").read_bytes() == (b / "history_layer1.csv").read_bytes()


def test_rerun_from_meta(tmp_path):
    first = tmp_path / "first"
    assert cli.main(["run", "--profile", "synthetic", "--n-var", "20", "--budget", "9",
                     "--seed", "7", "--function", "rosenbrock", "--out", str(first)]) == 0
    again = tmp_path / "again"
    assert cli.main(["run", "--config", str(first / "run.meta"), "--out", str(again)]) == 0
    assert (first / "history_layer1.csv").read_bytes() == (again / "history_layer1.csv").read_bytes()
    assert cli.load_config(first)["function"] == "rosenbrock"


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("# demo\nprofile = synthetic\nbudget = 4\nlambda = 12\nseed = 1\nn-var = 5\n")
    args = cli.build_parser().parse_args(["run", "--config", str(cfg), "--budget", "6"])
    profile, _ = cli.profile_from_args(args)
    assert profile.budget == 6 and profile.lam == 12 and profile.seed == 1 and profile.n_var == 5


def test_bad_config_key(tmp_path, capsys):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("bogus = 1\n")
    assert cli.main(["run", "--config", str(cfg)]) == 1
    assert "unknown key 'bogus'" in capsys.readouterr().err


def test_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.DATA_ENV, str(tmp_path))
    assert cli.resolve_data_dir(cli.ExperimentProfile(name="small7x7")) == tmp_path
    assert cli.resolve_data_dir(cli.ExperimentProfile(name="small7x7", data_dir=str(DATA_DIR))) == DATA_DIR
    monkeypatch.delenv(cli.DATA_ENV)
    with pytest.raises(cli.HarnessError, match=cli.DATA_ENV):
        cli.resolve_data_dir(cli.ExperimentProfile(name="small7x7"))


def test_missing_data_exit_code(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv(cli.DATA_ENV, raising=False)
    assert cli.main(["run", "--profile", "small7x7", "--data-dir", str(tmp_path), "--out", str(tmp_path / "o")]) == 1
    assert "train-images" in capsys.readouterr().err


def test_compare_identical_dirs(tmp_path, capsys):
    out = cli.run_experiment(synth(tmp_path))
    table = cli.compare(out, out)
    assert [r.ratio for r in table] == [1.0] and table[0].winner == "tie"
    assert cli.main(["compare", str(out), str(out), "--csv"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "layer,final_a,best_a,final_b,best_b,ratio,winner"
    assert lines[1].endswith(",1.0,tie")


def test_compare_missing_layer(tmp_path, capsys):
    a = cli.run_experiment(synth(tmp_path, "a"))
    b = cli.run_experiment(synth(tmp_path, "b"))
    (b / "history_layer2.csv").write_text((b / "history_layer1.csv").read_text())
    assert cli.main(["compare", str(a), str(b)]) == 1
    err = capsys.readouterr().err
    assert "history_layer2.csv" in err and "missing" in err


def test_batch_single_rep_equals_history(tmp_path):
    root = cli.batch(synth(tmp_path, "batch"), 1)
    hist = rows(root / "rep000" / "history_layer1.csv")
    agg = rows(root / "aggregate.csv")
    assert len(agg) == len(hist)
    for h, a in zip(hist, agg):
        assert float(a["mean"]) == float(a["median"]) == float(a["min"]) == float(a["max"]) == float(h["f_best"])
        assert a["count"] == "1"


def test_batch_seeds_and_directories(tmp_path):
    root = tmp_path / "b"
    assert cli.main(["batch", "--profile", "synthetic", "--n-var", "8", "--budget", "3",
                     "--seed", "10", "--reps", "3", "--out", str(root)]) == 0
    seeds = [cli.load_config(root / f"rep{i:03d}")["seed"] for i in range(3)]
    assert seeds == [10, 11, 12]


def test_batch_constant_objective_zero_spread(tmp_path, monkeypatch):
    monkeypatch.setitem(objectives.SYNTHETIC, "constant", lambda x: 1.0)
    root = cli.batch(synth(tmp_path, "const", function="constant"), 5)
    for a in rows(root / "aggregate.csv"):
        assert a["min"] == a["max"] == a["mean"] == a["median"] == "1.0"
        assert a["count"] == "5"


def test_unknown_profile_rejected():
    with pytest.raises(cli.HarnessError):
        cli.ExperimentProfile(name="tiny")


def test_verbose_either_side(tmp_path):
    assert cli.main(["-v", "run", "--n-var", "3", "--budget", "2", "--out", str(tmp_path / "x")]) == 0
    assert cli.main(["run", "-v", "--n-var", "3", "--budget", "2", "--out", str(tmp_path / "y")]) == 0


@needs_mnist
def test_small_profile_artifacts_and_compare(tmp_path):
    common = dict(name="small7x7", budget=3, subset=150, seed=2, data_dir=str(DATA_DIR))
    lea = cli.run_experiment(cli.ExperimentProfile(out=str(tmp_path / "lea"), **common))
    cd = cli.run_experiment(cli.ExperimentProfile(out=str(tmp_path / "cd"), trainer=rbm.CD, **common))
    for k, (nv, nh) in enumerate(rbm.SMALL_7X7.layers, start=1):
        assert len(rows(lea / f"history_layer{k}.csv")) <= 3
        raw = (lea / f"rbm_layer{k}.ckpt").read_bytes()
        assert raw[:4] == b"RBM1" and struct.unpack("<II", raw[4:12]) == (nv, nh)
        assert len(raw) == 12 + 8 * rbm.param_count(nv, nh)
    assert len(cli.compare(cd, lea)) == 3
    again = cli.run_experiment(cli.ExperimentProfile(out=str(tmp_path / "lea2"), **common))
    for k in (1, 2, 3):
        assert (lea / f"history_layer{k}.csv").read_bytes() == (again / f"history_layer{k}.csv").read_bytes()
    meta = cli.load_config(lea)
    assert meta["name"] == "small7x7" and meta["subset"] == 150
