import json

import pandas as pd
import pytest

import poshash_bench
from bench_config import BenchConfig, load_config, parse_config
from embedding_schemes import SchemeKind
from errors import ConfigError, DataError, NumericError
from poshash_bench import count_params_table, main, run_benchmark


def write_config(path, **overrides):
    data = {
        "dataset": {"name": "sbm120", "sbm": {"n": 120, "blocks": 3, "p_in": 0.25, "p_out": 0.01, "seed": 1}},
        "schemes": [
            {"kind": "FullEmb", "dim": 8},
            {"kind": "PosEmb", "dim": 8, "k": 3, "levels": 1},
        ],
        "train": {"epochs": 5, "repeats": 2, "hidden": 8, "seed": 0},
    }
    data.update(overrides)
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


# ---------------------------------------------------------------- gen-sbm


def test_gen_sbm_two_cliques(tmp_path, capsys):
    code = main(["--out-dir", str(tmp_path), "gen-sbm", "--n", "100", "--blocks", "2",
                 "--p-in", "1", "--p-out", "0", "--out", "two"])
    assert code == 0
    assert "OK sbm" in capsys.readouterr().out
    edges = (tmp_path / "two.edges").read_text().splitlines()
    assert edges[0] == "# nodes 100"
    assert len(edges) - 1 == 2 * (50 * 49 // 2)
    labels = [line.split()[1] for line in (tmp_path / "two.labels").read_text().splitlines()]
    assert labels.count("0") == 50 and labels.count("1") == 50


def test_gen_sbm_invalid_probability_writes_nothing(tmp_path, capsys):
    code = main(["--out-dir", str(tmp_path), "gen-sbm", "--n", "100", "--blocks", "2",
                 "--p-in", "1.5", "--p-out", "0"])
    assert code == 2
    assert "p_in" in capsys.readouterr().err
    assert list(tmp_path.iterdir()) == []


def test_gen_sbm_is_byte_stable(tmp_path):
    args = ["gen-sbm", "--n", "80", "--blocks", "4", "--p-in", "0.3", "--p-out", "0.02"]
    main(["--seed", "3", "--out-dir", str(tmp_path / "a"), *args])
    main(["--seed", "3", "--out-dir", str(tmp_path / "b"), *args])
    for name in ("sbm.edges", "sbm.labels"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


# ---------------------------------------------------------------- partition


@pytest.fixture
def sbm_file(tmp_path):
    main(["--out-dir", str(tmp_path), "gen-sbm", "--n", "150", "--blocks", "3",
          "--p-in", "0.2", "--p-out", "0.01", "--out", "g"])
    return tmp_path / "g.edges"


def test_partition_writes_hierarchy(tmp_path, sbm_file, capsys):
    assert main(["--out-dir", str(tmp_path), "partition", str(sbm_file), "--alpha", "0.25",
                 "--levels", "3", "--out", "h1.csv"]) == 0
    out = capsys.readouterr().out
    assert "edge_cut" in out and "OK hierarchy" in out
    first = (tmp_path / "h1.csv").read_bytes()
    assert first.splitlines()[0] == b"node,z0,z1,z2"

    main(["--out-dir", str(tmp_path), "partition", str(sbm_file), "--alpha", "0.25",
          "--levels", "3", "--out", "h2.csv"])
    assert (tmp_path / "h2.csv").read_bytes() == first


def test_partition_single_part(tmp_path, sbm_file):
    main(["--out-dir", str(tmp_path), "partition", str(sbm_file), "--k", "1", "--levels", "1", "--out", "one.csv"])
    df = pd.read_csv(tmp_path / "one.csv")
    assert list(df.columns) == ["node", "z0"]
    assert (df["z0"] == 0).all()


def test_partition_keeps_original_node_ids(tmp_path, tmp_edges):
    graph = tmp_edges("7 10\n10 500\n500 900\n900 7\n7 500\n")
    assert main(["--out-dir", str(tmp_path), "partition", str(graph), "--k", "2", "--levels", "1",
                 "--out", "h.csv"]) == 0
    df = pd.read_csv(tmp_path / "h.csv")
    assert df["node"].tolist() == [7, 10, 500, 900]
    assert set(df["z0"]) <= {0, 1}



def test_partition_missing_graph(tmp_path, capsys):
    assert main(["partition", str(tmp_path / "nope.edges"), "--k", "2"]) == 3
    assert "[ERROR]" in capsys.readouterr().err


# ---------------------------------------------------------------- count-params


def test_count_params_ogb_arxiv_sizes(tmp_path, capsys):
    path = tmp_path / "count.json"
    path.write_text(json.dumps({
        "dataset": {"name": "arxiv-sized", "num_nodes": 169343},
        "schemes": [{"kind": "FullEmb", "dim": 128}, {"kind": "PosHashEmbIntra", "dim": 128}],
    }), encoding="utf-8")
    assert main(["count-params", str(path)]) == 0
    out = capsys.readouterr().out
    assert "21675904" in out and "907870" in out


def test_count_params_table():
    cfg = parse_config({
        "dataset": {"num_nodes": 625},
        "schemes": [
            {"kind": "PosEmb", "dim": 8, "k": 5, "levels": 3},
            {"kind": "HashEmb", "dim": 8, "buckets": 40, "hashes": 2},
        ],
    })
    table = count_params_table(cfg, 625)
    assert table["param_count"].tolist() == [390, 40 * 8 + 2 * 625]
    assert table["level_sizes"].iloc[0] == "5 25 125"
    assert table["memory_ratio"].iloc[0] == 390 / (625 * 8)


# ---------------------------------------------------------------- train


def test_train_rows_and_summary(tmp_path):
    cfg = load_config(write_config(tmp_path / "cfg.json"))
    df, manifest = run_benchmark(cfg, tmp_path / "out")
    assert len(df) == 2 * 2 + 2
    summary = df[df["seed"] == "summary"]
    assert summary["scheme"].tolist() == ["FullEmb", "PosEmb-1level"]
    assert "wall_seconds" not in df.columns

    raw = df[df["seed"] != "summary"]
    for scheme, group in raw.groupby("scheme"):
        row = summary[summary["scheme"] == scheme].iloc[0]
        acc = group["test_accuracy"].astype(float)
        assert abs(row["test_accuracy"] - acc.mean()) < 1e-12
        assert abs(row["test_accuracy_std"] - acc.std(ddof=0)) < 1e-12

    full = raw[raw["scheme"] == "FullEmb"]
    assert (full["memory_ratio"] == 1.0).all()
    pos = raw[raw["scheme"] == "PosEmb-1level"]
    assert (pos["param_count"] == 3 * 8).all()
    assert manifest.dataset["num_nodes"] == 120
    assert manifest.hierarchies and manifest.hierarchies[0]["level_sizes"] == [3]
    assert (tmp_path / "out" / "manifest.json").exists()


def test_single_repeat_has_zero_std(tmp_path):
    cfg = load_config(write_config(tmp_path / "cfg.json", train={"epochs": 3, "repeats": 1, "hidden": 8}))
    df, _ = run_benchmark(cfg, tmp_path / "out")
    assert (df[df["seed"] == "summary"]["test_accuracy_std"] == 0.0).all()


def test_rerun_from_manifest_is_byte_identical(tmp_path):
    cfg_path = write_config(tmp_path / "cfg.json")
    assert main(["--seed", "7", "--out-dir", str(tmp_path / "first"), "train", str(cfg_path)]) == 0
    manifest = tmp_path / "first" / "manifest.json"
    assert json.loads(manifest.read_text())["config"]["train"]["seed"] == 7
    assert main(["--out-dir", str(tmp_path / "second"), "train", str(manifest)]) == 0
    first = (tmp_path / "first" / "results.csv").read_bytes()
    assert first == (tmp_path / "second" / "results.csv").read_bytes()


@pytest.fixture
def diverging_position_runs(monkeypatch):
    """Makes every PosEmb run fail the way a blown-up optimizer step does."""
    real_train = poshash_bench.train

    def train(graph, ds, scheme, model, cfg, adj=None):
        if scheme.kind is SchemeKind.POS:
            raise NumericError("non-finite gradient in P0")
        return real_train(graph, ds, scheme, model, cfg, adj)

    monkeypatch.setattr(poshash_bench, "train", train)


def test_failed_row_does_not_abort_others(tmp_path, diverging_position_runs):
    cfg = load_config(write_config(tmp_path / "cfg.json"))
    df, manifest = run_benchmark(cfg, tmp_path / "out")
    raw = df[df["seed"] != "summary"]
    assert (raw[raw["scheme"] == "FullEmb"]["status"] == "ok").all()
    failed = raw[raw["scheme"] == "PosEmb-1level"]
    assert failed["status"].str.startswith("failed").all()
    assert (failed["param_count"] == 3 * 8).all()
    assert (failed["memory_ratio"] == 3 * 8 / (120 * 8)).all()
    assert df[df["seed"] == "summary"]["status"].tolist() == ["ok", "0/2 ok"]
    assert sorted(r["exit_code"] for r in manifest.runs) == [0, 0, 4, 4]


def test_numeric_failure_exit_code(tmp_path, capsys, diverging_position_runs):
    cfg_path = write_config(tmp_path / "cfg.json")
    assert main(["--out-dir", str(tmp_path / "out"), "train", str(cfg_path)]) == 4
    assert "[ERROR] 2 run(s) failed" in capsys.readouterr().err
    assert (tmp_path / "out" / "results.csv").exists()


def test_unfittable_memory_fraction_is_a_config_error(tmp_path, capsys):
    schemes = [
        {"kind": "FullEmb", "dim": 8},
        {"kind": "HashEmb", "dim": 8, "memory_fraction": 0.001},
    ]
    cfg_path = write_config(tmp_path / "cfg.json", schemes=schemes)
    assert main(["--out-dir", str(tmp_path / "out"), "train", str(cfg_path)]) == 2
    assert "memory_fraction" in capsys.readouterr().err
    assert not (tmp_path / "out" / "results.csv").exists()


def test_run_failing_before_build_keeps_expected_params(tmp_path, monkeypatch):
    def broken_build(*args, **kwargs):
        raise DataError("hierarchy does not cover every node")

    monkeypatch.setattr(poshash_bench, "build_scheme", broken_build)
    cfg = load_config(write_config(tmp_path / "cfg.json", train={"epochs": 2, "repeats": 1, "hidden": 8}))
    df, manifest = run_benchmark(cfg, tmp_path / "out")
    raw = df[df["seed"] != "summary"].set_index("scheme")
    assert raw.loc["FullEmb", "param_count"] == 120 * 8
    assert raw.loc["PosEmb-1level", "param_count"] == 3 * 8
    assert raw.loc["FullEmb", "memory_ratio"] == 1.0
    assert {r["exit_code"] for r in manifest.runs} == {3}




def test_wall_time_column_is_opt_in(tmp_path):
    cfg = load_config(write_config(tmp_path / "cfg.json", record_wall_time=True,
                                   train={"epochs": 2, "repeats": 1, "hidden": 8}))
    df, _ = run_benchmark(cfg, tmp_path / "out")
    assert "wall_seconds" in df.columns
    assert (df["wall_seconds"] >= 0).all()


def test_config_errors_carry_field_paths(tmp_path, capsys):
    path = write_config(tmp_path / "bad.json", schemes=[{"kind": "HashTrick", "dim": -1}])
    assert main(["train", str(path)]) == 2
    err = capsys.readouterr().err
    assert "schemes.0" in err


def test_shape_only_dataset_cannot_train(tmp_path):
    cfg = BenchConfig.model_validate({"dataset": {"num_nodes": 10}, "schemes": [{"kind": "FullEmb"}]})
    with pytest.raises(ConfigError, match="count-params"):
        run_benchmark(cfg, tmp_path)


def test_dataset_from_files(tmp_path):
    main(["--out-dir", str(tmp_path), "gen-sbm", "--n", "90", "--blocks", "3",
          "--p-in", "0.3", "--p-out", "0.01", "--out", "g"])
    path = write_config(tmp_path / "cfg.json",
                        dataset={"name": "files", "edges": "g.edges", "labels": "g.labels"},
                        train={"epochs": 2, "repeats": 1, "hidden": 8})
    df, manifest = run_benchmark(load_config(path), tmp_path / "out")
    assert manifest.dataset["num_nodes"] == 90
    assert (df["dataset"] == "files").all()


@pytest.mark.slow
def test_position_beats_random_partition_on_homophilous_graph(tmp_path):
    cfg = parse_config({
        "dataset": {"name": "sbm1000", "sbm": {"n": 1000, "blocks": 10, "p_in": 0.05, "p_out": 0.005, "seed": 0}},
        "schemes": [
            {"kind": "PosEmb", "dim": 32, "k": 10, "levels": 1},
            {"kind": "RandomPart", "dim": 32, "k": 10},
        ],
        "train": {"epochs": 200, "repeats": 5, "lr": 0.01, "hidden": 32},
    })
    df, _ = run_benchmark(cfg, tmp_path, threads=2)
    summary = df[df["seed"] == "summary"].set_index("scheme")
    assert summary.loc["PosEmb-1level", "param_count"] == summary.loc["RandomPart", "param_count"]
    gap = summary.loc["PosEmb-1level", "test_accuracy"] - summary.loc["RandomPart", "test_accuracy"]
    assert gap >= 0.05
