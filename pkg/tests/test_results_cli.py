import json

import numpy as np
import pytest

from tpuzzle.cli import main
from tpuzzle.plots import SchemaError, detect_schema
from tpuzzle.puzzle import PuzzleInstance, build_instance
from tpuzzle.results import ResultTable, config_hash, format_cell, parse_cell, read_table, strip_header


# ---------------------------------------------------------------- result tables


def test_cell_formatting_round_trips():
    x = 0.1 + 0.2
    assert parse_cell(format_cell(x)) == x
    assert format_cell(True) == "true" and parse_cell("false") is False
    assert format_cell(np.float64(1 / 3)) == format_cell(1 / 3)
    assert format_cell(None) == "" and parse_cell("") is None
    assert parse_cell("hill") == "hill" and parse_cell("12") == 12


def test_table_write_and_read(tmp_path):
    table = ResultTable.from_rows([{"n": 4, "value": 1 / 3}, {"n": 6, "value": 2.5, "tag": "x"}])
    assert table.columns == ["n", "value", "tag"]
    path = table.write(tmp_path / "t.csv", "solve", {"a": 1}, seed=3)
    back = read_table(path)
    assert back.rows[0]["value"] == 1 / 3
    assert back.meta["command"] == "solve"
    assert back.meta["seed"] == "3"
    assert back.meta["config_sha256"] == config_hash({"a": 1})
    assert json.loads(back.meta["config"]) == {"a": 1}
    assert strip_header(path.read_text()) == table.body()


def test_config_hash_ignores_key_order():
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})


def test_schema_detection():
    assert detect_schema(ResultTable(["n", "method", "mean_f_evals"], [{"n": 4}])) == "scaling"
    with pytest.raises(SchemaError):
        detect_schema(ResultTable(["n", "method", "mean_f_evals"], []))
    with pytest.raises(SchemaError):
        detect_schema(ResultTable(["foo"], [{"foo": 1}]))


# ---------------------------------------------------------------- command line


def run(*argv):
    return main([str(a) for a in argv])


def test_generate_reloads_identically(tmp_path):
    out = tmp_path / "inst.json"
    assert run("generate", "--n", 10, "--beta", 0.2, "--seed", 7, "--out", out) == 0
    assert PuzzleInstance.load(out) == build_instance(10, 10, 0.2, 0.2, seed=7)
    assert run("generate", "--n", 4, "--s-star", "0110", "--out", tmp_path / "s.json") == 0
    assert PuzzleInstance.load(tmp_path / "s.json").s_star == (0, 1, 1, 0)


def test_usage_errors(tmp_path, capsys):
    assert run("generate", "--out", tmp_path) == 2
    assert "usage" in capsys.readouterr().err
    assert run("frobnicate") == 2
    assert run("solve", "--config", tmp_path / "missing.json") == 2


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n": 3, "beta": 0.4, "seed": 5}))
    assert run("generate", "--config", cfg, "--seed", 6, "--out", tmp_path / "a.json") == 0
    inst = PuzzleInstance.load(tmp_path / "a.json")
    assert (inst.n, inst.beta_w, inst.seed) == (3, 0.4, 6)


def test_solve_bodies_independent_of_workers(tmp_path):
    for w in (1, 2):
        assert run("solve", "--sizes", 3, 4, "--instances", 2, "--trials", 3,
                   "--workers", w, "--out", tmp_path / f"w{w}") == 0
    for name in ("scaling.csv", "runs.csv"):
        a = (tmp_path / "w1" / name).read_text()
        b = (tmp_path / "w2" / name).read_text()
        assert strip_header(a) == strip_header(b)
    table = read_table(tmp_path / "w1" / "scaling.csv")
    assert {r["method"] for r in table.rows} == {"hill", "random"}
    assert {"q25_f_evals", "q75_f_evals"} <= set(table.columns)


def test_solve_single_instance(tmp_path):
    inst = tmp_path / "i.json"
    build_instance(4, 4, 0.2, 0.2, seed=1).save(inst)
    assert run("solve", "--instance", inst, "--starts", 2, "--out", tmp_path) == 0
    trace = read_table(tmp_path / "trace.csv")
    assert {"sweep", "current_loss", "f_evals_cumulative", "bitstring_hex"} <= set(trace.columns)


def test_other_commands_write_tables(tmp_path):
    assert run("noisy-solve", "--sizes", 3, "--sigmas", 0, 0.02, "--runs", 2, "--out", tmp_path) == 0
    noisy = read_table(tmp_path / "noisy.csv")
    assert noisy.rows[0]["sigma"] == 0 and noisy.rows[0]["success_rate"] == 1.0
    assert run("landscape", "--n", 3, "--betas", 0.2, "--instances", 2, "--sizes", 3, 4,
               "--concentration-instances", 2, "--export-maps", "--out", tmp_path) == 0
    assert read_table(tmp_path / "heatmap.csv").rows[0]["non_separable_fraction"] == 1.0
    assert list((tmp_path / "maps").glob("*.f64"))
    assert run("diagnose", "--sizes", 3, "--instances", 2, "--scan-n", 3, "--beta-grid", 0, 0.5,
               "--scan-instances", 2, "--out", tmp_path) == 0
    assert len(read_table(tmp_path / "single_block.csv").rows) == 2
    assert run("qsvt-verify", "--n", 1, "--K", 1, "--betas", 0, "--degrees", 2, "--out", tmp_path) == 0
    assert read_table(tmp_path / "qsvt.csv").rows[0]["deviation"] <= 1e-10
    assert run("largescale", "--rows", 2, "--cols", 2, "--D", 3, "--instances", 1, "--out", tmp_path) == 0
    summary = read_table(tmp_path / "largescale.csv")
    assert {r["cz_enabled"] for r in summary.rows} == {True, False}
    for name in ("noisy.csv", "heatmap.csv", "single_block.csv", "largescale_trace.csv"):
        assert run("plot", tmp_path / name, "--out", tmp_path / "svg") == 0
        svg = (tmp_path / "svg" / name.replace(".csv", ".svg")).read_text()
        assert svg.lstrip().startswith("<?xml")


def test_plot_is_deterministic(tmp_path):
    run("solve", "--sizes", 3, 4, "--instances", 2, "--trials", 2, "--out", tmp_path)
    run("plot", tmp_path / "scaling.csv", "--out", tmp_path / "a")
    run("plot", tmp_path / "scaling.csv", "--out", tmp_path / "b")
    assert (tmp_path / "a" / "scaling.svg").read_text() == (tmp_path / "b" / "scaling.svg").read_text()


def test_plot_rejects_empty_table(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("# command: solve\nn,method,mean_f_evals\n")
    assert run("plot", empty, "--out", tmp_path) == 2


def test_oversized_grid_is_refused(tmp_path, capsys):
    assert run("largescale", "--rows", 7, "--cols", 7, "--D", 8, "--out", tmp_path) == 4
    assert "24" in capsys.readouterr().err
