import json
import math

import numpy as np
import pytest

from adaptrait import report
from adaptrait.cli import main
from adaptrait.config import ExperimentConfig, load_config
from adaptrait.models import TraitDataset
from adaptrait.phylo import read_newick

SMALL = ["--reps", "40", "--steps", "10", "--seed", "3"]


# -- configuration ----------------------------------------------------------------

def test_defaults_desk_and_full():
    desk = ExperimentConfig()
    assert desk.n_reps == 5000 and desk.taxa_sizes == [10, 20] and desk.tolerance == 0.1
    full = ExperimentConfig(full=True)
    assert full.n_reps == 50_000 and full.taxa_sizes == [10, 20, 50, 100]
    assert ExperimentConfig(mode="model-select").tolerance == 0.05


def test_yaml_with_overrides(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("mode: sim-study\nreps: 200\ntol: 0.2\nmodel: OUBMBM,OUOUCIR\nseed: 9\n"
                    "prior_overrides:\n  alpha_y: {uniform: [0, 0.5]}\n")
    cfg = load_config(path, {"n_reps": 300, "seed": None})
    assert cfg.n_reps == 300 and cfg.seed == 9 and cfg.tolerance == 0.2
    assert cfg.models == ["OUBMBM", "OUOUCIR"]
    assert cfg.prior_spec()["alpha_y"].high == 0.5


@pytest.mark.parametrize("bad", [{"mode": "fit"}, {"tolerance": 0.0}, {"n_reps": 0},
                                 {"models": ["OUXX"]}, {"burn_in": 10, "chain_length": 5},
                                 {"c_variance": "bogus"}, {"tree": "/nonexistent.nwk"}])
def test_invalid_config(bad):
    with pytest.raises(ValueError):
        ExperimentConfig(**bad)


def test_unknown_key(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("replicates: 10\n")
    with pytest.raises(ValueError, match="unknown configuration key"):
        load_config(path)


def test_hash_ignores_output_location():
    a = ExperimentConfig(out="x", workers=1)
    b = ExperimentConfig(out="y", workers=3)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != ExperimentConfig(seed=2).config_hash()


# -- report formatting ----------------------------------------------------------------

def test_fmt3():
    assert report.fmt3(0.005) == "0.005"
    assert report.fmt3(-0.0001) == "0.000"
    assert report.fmt3(1.23456) == "1.235"
    assert report.fmt3(math.inf) == "inf" and report.fmt3(math.nan) == "nan"


def test_csv_header_and_json_round_trip(tmp_path):
    report.write_csv(tmp_path / "t.csv", ["a", "b"], [["x", 0.12345], ["y", math.inf]], "abc", 4)
    text = (tmp_path / "t.csv").read_text()
    assert text.splitlines()[0] == "# config_hash=abc seed=4"
    meta, rows = report.read_csv(tmp_path / "t.csv")
    assert meta == {"config_hash": "abc", "seed": "4"}
    assert rows == [["a", "b"], ["x", "0.123"], ["y", "inf"]]

    payload = {"v": np.array([1.5, np.inf, np.nan]), "n": np.int64(3), "flag": np.bool_(True)}
    report.write_json(tmp_path / "t.json", payload, "abc", 4)
    raw = json.loads((tmp_path / "t.json").read_text())
    assert list(raw)[:2] == ["config_hash", "seed"]
    back = report.load_json(tmp_path / "t.json")
    assert back["v"][0] == 1.5 and back["v"][1] == math.inf and math.isnan(back["v"][2])
    assert back["n"] == 3 and back["flag"] is True


def test_trait_file_round_trip(tmp_path):
    data = TraitDataset(["A", "B"], [0.1, -2.0], [[1.0, 2.0], [3.0, 1 / 3]])
    report.write_traits(tmp_path / "tr.csv", data)
    again = report.read_traits(tmp_path / "tr.csv")
    assert again.labels == data.labels
    assert np.array_equal(again.traits(), data.traits())


@pytest.mark.parametrize("text, msg", [("name,y\nA,1\n", "header"),
                                       ("species,y,x1\nA,1\n", "expected 3"),
                                       ("species,y\nA,abc\n", "non-numeric")])
def test_trait_file_errors(tmp_path, text, msg):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(ValueError, match=msg):
        report.read_traits(path)


def test_label_mismatch_is_reported(tmp_path):
    (tmp_path / "t.nwk").write_text("(A:1,B:1):0;\n")
    data = TraitDataset(["A", "C"], [0.0, 1.0], [[0.0], [1.0]])
    with pytest.raises(ValueError, match="missing from data: B.*not in tree: C"):
        data.aligned_to(read_newick(tmp_path / "t.nwk"))


# -- command line ------------------------------------------------------------------------

def _read_all(folder):
    return {p.name: p.read_bytes() for p in sorted(folder.iterdir())}


def test_sim_study_deterministic_and_manifest(tmp_path):
    args = ["sim-study", "--model", "OUBMBM,OUBMCIR", "--sizes", "4,5", *SMALL]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b"), "--workers", "2"]) == 0
    a, b = _read_all(tmp_path / "a"), _read_all(tmp_path / "b")
    assert set(a) == {"manifest.json", "sim_study.json", "sim_study_OUBMBM.csv",
                      "sim_study_OUBMCIR.csv"}
    assert a == b
    manifest = report.load_json(tmp_path / "a" / "manifest.json")
    assert manifest["total_replicates"] == 2 * 2 * 40
    meta, rows = report.read_csv(tmp_path / "a" / "sim_study_OUBMBM.csv")
    assert rows[0] == ["parameter", "statistic", "n=4", "n=5"]
    assert rows[1][:2] == ["alpha_y", "bias"]
    assert meta["seed"] == "3"


def test_simulate_then_model_select(tmp_path, capsys):
    sim = tmp_path / "sim"
    assert main(["simulate", "--model", "OUOUBM", "--tips", "8", "--out", str(sim), *SMALL]) == 0
    tree, traits = sim / "tree.nwk", sim / "traits_OUOUBM.csv"
    assert read_newick(tree).tip_count == 8
    out = tmp_path / "sel"
    code = main(["model-select", "--tree", str(tree), "--traits", str(traits), "--priors",
                 "empirical", "--out", str(out), "--tol", "0.1", *SMALL])
    assert code == 0
    assert "ranking:" in capsys.readouterr().out
    result = report.load_json(out / "model_select.json")
    counts = result["comparison"]["counts"]
    assert sum(counts) == math.ceil(0.1 * 4 * 40)
    assert sorted(result["ranking"]["order"]) == sorted(["OUBMBM", "OUOUBM", "OUBMCIR", "OUOUCIR"])
    _, bf_rows = report.read_csv(out / "bayes_factors.csv")
    assert len(bf_rows) == 5 and all(len(r) == 5 for r in bf_rows)
    assert [bf_rows[i][i] for i in range(1, 5)] == ["1.000"] * 4
    _, coef = report.read_csv(out / "coefficients.csv")
    assert coef[0] == ["method", "statistic", "b0", "b1", "b2"]
    assert coef[1][:2] == ["OLS", "estimate"]
    assert len(coef) == 1 + 3 * 5


def test_abc_reject_and_mcmc_commands(tmp_path):
    sim = tmp_path / "sim"
    main(["simulate", "--model", "OUBMBM", "--tips", "6", "--out", str(sim), *SMALL])
    common = ["--tree", str(sim / "tree.nwk"), "--traits", str(sim / "traits_OUBMBM.csv"),
              "--model", "OUBMBM", *SMALL]
    assert main(["abc-reject", *common, "--out", str(tmp_path / "r"), "--adjust"]) == 0
    _, rows = report.read_csv(tmp_path / "r" / "abc_reject_OUBMBM.csv")
    assert rows[0] == ["parameter", "mean", "sd", "5%", "95%", "2.5%", "97.5%"]
    assert main(["abc-mcmc", *common, "--out", str(tmp_path / "m"), "--chain", "60",
                 "--burn-in", "10", "--delta", "1e9"]) == 0
    res = report.load_json(tmp_path / "m" / "abc_mcmc.json")
    assert len(res["OUBMBM"]["draws"]) == 50


def test_cli_errors_exit_2(tmp_path, capsys):
    assert main(["model-select", "--out", str(tmp_path)]) == 2
    assert "--tree and --traits are required" in capsys.readouterr().err
    assert main(["abc-reject", "--tree", str(tmp_path / "none.nwk")]) == 2
