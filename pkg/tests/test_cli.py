import csv
import json

import numpy as np
import pytest

from egp import cli, experiment
from egp.experiment import (
    LONG_FIELDS,
    DatasetSpec,
    ExperimentConfig,
    RunResult,
    derive_seed,
    long_format,
    read_config,
    read_results,
    run_experiment,
    summarize,
    write_results,
)

CONFIG = """\
[experiment]
methods = {methods}
runs = {runs}
base_seed = 11
generations = 2
population = 8

[dataset gauss]
path = synthetic:two-gaussians,60,3,1
"""


def config_file(tmp_path, methods="eGP-N", runs=1, extra=""):
    p = tmp_path / "exp.ini"
    p.write_text(CONFIG.format(methods=methods, runs=runs) + extra)
    return p


def test_single_run_single_row(tmp_path):
    cfg = read_config(config_file(tmp_path))
    store = run_experiment(cfg)
    assert len(store.results) == 1
    r = store.results[0]
    assert (r.method, r.dataset, r.run) == ("eGP-N", "gauss", 0)
    assert r.seed == derive_seed(11, "eGP-N", "gauss", 0)
    assert 0 <= r.train_accuracy <= 1 and 0 <= r.test_accuracy <= 1


def test_row_count_is_product(tmp_path):
    extra = "\n[dataset other]\npath = synthetic:two-gaussians,40,2,5\n"
    cfg = read_config(config_file(tmp_path, "GP,M3GP,eGPw", runs=2, extra=extra))
    store = run_experiment(cfg)
    assert len(store.results) == 3 * 2 * 2
    assert [(r.dataset, r.method, r.run) for r in store.results][:3] == [
        ("gauss", "GP", 0), ("gauss", "GP", 1), ("gauss", "M3GP", 0)]


def test_seed_independent_of_other_methods():
    assert derive_seed(0, "GP", "BCW", 3) == derive_seed(0, "GP", "BCW", 3)
    seeds = {derive_seed(0, m, "BCW", r) for m in experiment.METHODS for r in range(30)}
    assert len(seeds) == len(experiment.METHODS) * 30
    assert all(0 <= s < 2 ** 64 for s in seeds)


def test_bad_dataset_recorded_others_proceed(tmp_path):
    extra = f"\n[dataset missing]\npath = {tmp_path / 'nope.csv'}\n"
    cfg = read_config(config_file(tmp_path, extra=extra))
    cfg.out_dir = str(tmp_path / "out")
    store = run_experiment(cfg)
    assert len(store.results) == 1
    assert [e["dataset"] for e in store.errors] == ["missing"]
    assert "missing" in (tmp_path / "out" / "errors.csv").read_text()


def test_jobs_do_not_change_results(tmp_path):
    cfg = read_config(config_file(tmp_path, "eGP-N,GP", runs=2))
    a = run_experiment(cfg).results
    cfg.jobs = 2
    b = run_experiment(cfg).results
    key = lambda rs: [(r.method, r.run, r.seed, r.train_accuracy, r.test_accuracy, r.total_nodes)
                      for r in rs]
    assert key(a) == key(b)


def test_method_overrides(tmp_path):
    cfg = read_config(config_file(tmp_path, extra="\n[method GP]\ngenerations = 0\npopulation = 3\n"))
    assert cfg.params_for("GP") == {"generations": 0, "population": 3}
    assert cfg.params_for("eGP-N") == {"generations": 2, "population": 8}


def test_config_validation():
    with pytest.raises(cli.engine.ConfigError):
        ExperimentConfig([DatasetSpec("d", "synthetic:two-gaussians")], ["eGP-X"])
    with pytest.raises(cli.engine.ConfigError):
        ExperimentConfig([DatasetSpec("d", "synthetic:two-gaussians")], ["GP"], runs=0)
    with pytest.raises(cli.engine.ConfigError):
        ExperimentConfig([DatasetSpec("d", "synthetic:two-gaussians")], [])


def _rows():
    return [
        RunResult("A", "D1", 0, 1, 0.9, 0.8, 10, 2),
        RunResult("A", "D1", 1, 2, 0.95, 0.85, 12, 3),
        RunResult("B", "D1", 0, 3, 0.5, 0.4, 5, 1),
    ]


def test_long_format_golden(tmp_path):
    rep = summarize(_rows())
    rep.write(tmp_path)
    text = (tmp_path / "boxplot.csv").read_text().splitlines()
    assert text[0] == "method,dataset,run,seed,phase,accuracy,nodes,units"
    assert tuple(text[0].split(",")) == LONG_FIELDS
    assert text[1] == "A,D1,0,1,train,0.9,10,2"
    assert text[2] == "A,D1,0,1,test,0.8,10,2"
    assert len(text) == 1 + 2 * 3


def test_results_roundtrip_and_resummarize(tmp_path):
    rows = _rows()
    write_results(rows, tmp_path / "r.csv")
    back = read_results(tmp_path / "r.csv")
    assert [(r.method, r.train_accuracy, r.total_nodes) for r in back] == \
        [(r.method, r.train_accuracy, r.total_nodes) for r in rows]
    a, b = summarize(rows), summarize(back)
    assert a.summary == b.summary and a.counts == b.counts and a.text() == b.text()


def test_single_row_summary():
    rep = summarize([RunResult("A", "D", 0, 0, 0.7, 0.6, 9, 1)])
    s = rep.summary[0]
    assert s["train_median"] == 0.7 and s["train_q1"] == s["train_q3"] == 0.7
    assert s["test_q3"] - s["test_q1"] == 0.0


def test_count_table_shape():
    rng = np.random.default_rng(0)
    rows = [RunResult(m, d, i, 0, float(rng.uniform()), float(rng.uniform()), 1, 1)
            for d in ("D1", "D2") for m in ("A", "B", "C") for i in range(5)]
    table = summarize(rows).count_table()
    assert len(table) == 3
    assert all({"train", "test"} <= set(r) for r in table)


def test_brazil_outlier_excluded():
    rows = [RunResult("GP", "BRAZIL", 0, 0, 0.9097, 0.85, 5, 1),
            RunResult("GP", "BRAZIL", 1, 0, 0.88, 0.86, 5, 1)]
    kept = long_format(rows, experiment.BRAZIL_DISPLAY_OUTLIERS)
    assert 0.9097 not in [r["accuracy"] for r in kept]
    assert len(kept) == 3
    # the summary still uses every run
    assert summarize(rows, exclude=experiment.BRAZIL_DISPLAY_OUTLIERS).summary[0]["train_q3"] > 0.9


# -- CLI ---------------------------------------------------------------------

def test_cli_experiment_byte_identical(tmp_path):
    cfgp = config_file(tmp_path, "eGP-W,GP", runs=2)
    assert cli.main(["experiment", "--config", str(cfgp), "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["experiment", "--config", str(cfgp), "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "results.csv").read_bytes()
    assert a == (tmp_path / "b" / "results.csv").read_bytes()
    assert len(a.decode().splitlines()) == 1 + 4


def test_cli_flags_override_config(tmp_path):
    cfgp = config_file(tmp_path, "eGP-W,GP", runs=3)
    out = tmp_path / "o"
    assert cli.main(["experiment", "--config", str(cfgp), "--out", str(out), "--runs", "1",
                     "--methods", "GP", "--seed", "5", "--generations", "1"]) == 0
    rows = read_results(out / "results.csv")
    assert [(r.method, r.run) for r in rows] == [("GP", 0)]
    assert rows[0].seed == derive_seed(5, "GP", "gauss", 0)


def test_cli_train(tmp_path, capsys):
    out = tmp_path / "m"
    rc = cli.main(["train", "--data", "synthetic:two-gaussians,60,3,0", "--method", "eGPn",
                   "--generations", "2", "--population", "6", "--out", str(out)])
    assert rc == 0
    doc = json.loads((out / "model.json").read_text())
    assert doc["variant"] == "eGPn" and doc["members"]
    with open(out / "trace.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 3
    assert "train" in capsys.readouterr().out


def test_cli_train_csv_by_label_name(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(40, 2))
    lines = ["a,b,cls"] + [f"{a},{b},{'yes' if a > b else 'no'}" for a, b in X]
    data = tmp_path / "d.csv"
    data.write_text("\n".join(lines) + "\n")
    rc = cli.main(["train", "--data", str(data), "--label", "cls", "--method", "GP",
                   "--generations", "1", "--population", "5", "--out", str(tmp_path / "m")])
    assert rc == 0


def test_cli_summarize(tmp_path, capsys):
    write_results(_rows(), tmp_path / "r.csv")
    assert cli.main(["summarize", str(tmp_path / "r.csv"), "--out", str(tmp_path / "s"),
                     "--drop", "D1:A:train:90"]) == 0
    assert "significantly better" in capsys.readouterr().out
    assert (tmp_path / "s" / "counts.csv").exists()
    box = (tmp_path / "s" / "boxplot.csv").read_text()
    assert ",train,0.9," not in box


def test_cli_selftest_ok(capsys):
    assert cli.main(["selftest"]) == 0
    assert "FAIL" not in capsys.readouterr().out


@pytest.mark.parametrize("argv", [[], ["nope"], ["train"], ["summarize"],
                                  ["experiment", "--config"], ["train", "--data", "x", "--seed", "z"]])
def test_cli_usage_errors_exit_1(argv):
    with pytest.raises(SystemExit) as e:
        cli.main(argv)
    assert e.value.code == 1


def test_cli_data_error_exit_2(tmp_path):
    assert cli.main(["train", "--data", str(tmp_path / "missing.csv")]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("a,y\n1,x\n")
    assert cli.main(["train", "--data", str(bad)]) == 2
    assert cli.main(["summarize", str(tmp_path / "missing.csv")]) == 2


def test_cli_config_error_exit_1(tmp_path):
    assert cli.main(["experiment", "--config", str(tmp_path / "none.ini")]) == 1
    cfgp = config_file(tmp_path, "NotAMethod")
    assert cli.main(["experiment", "--config", str(cfgp)]) == 1


def test_cli_invariant_exit_3(monkeypatch):
    monkeypatch.setattr(cli.selftest, "run_all", lambda seed: {"closure": "broken"})
    assert cli.main(["selftest"]) == 3


def test_cli_all_datasets_failing_exit_2(tmp_path):
    p = tmp_path / "exp.ini"
    p.write_text(f"[experiment]\nmethods = GP\nruns = 1\n\n[dataset x]\npath = {tmp_path / 'no.csv'}\n")
    assert cli.main(["experiment", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
