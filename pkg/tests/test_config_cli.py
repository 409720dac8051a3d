import json
import os

import pytest

from fnfront.cli import main
from fnfront.config import ConfigError, config_hash, demo_config, parse_config
from helpers import BASE, merge

SMALL = merge(BASE, {
    "grid": {"nx": 17, "nt": 65, "T": 0.25},
    "problem": {"forcing": {"expr": "100", "c0": 100.0, "c1": 100.0},
                "dirichlet": {"expr": "40*t*x"}},
    "sweep": {"eps": [0.2, 0.1]},
    "audit": {"R": 0.25, "t0": [0.125, 0.25]},
})


def _write(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
    return str(path)


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


@pytest.fixture()
def cfg_path(tmp_path):
    return _write(tmp_path / "run.json", SMALL)


def test_demo_config_parses():
    cfg = demo_config()
    assert cfg.eps_list == [0.2, 0.1, 0.05, 0.025]
    assert cfg.problem.grid.nx == 65
    assert len(cfg.hash) == 64


def test_unknown_field_reports_line_and_field():
    text = json.dumps(merge(SMALL, {"grid": {"nx": 17, "bogus": 1}}), indent=2)
    with pytest.raises(ConfigError) as ei:
        parse_config(text, "run.json")
    msg = str(ei.value)
    assert "field 'grid'" in msg and "bogus" in msg
    line = next(i for i, ln in enumerate(text.splitlines(), 1) if '"grid"' in ln)
    assert f"run.json:{line}" in msg


def test_wrong_type_reports_nested_field():
    text = json.dumps(merge(SMALL, {"operator": {"lambda": "one"}}), indent=2)
    with pytest.raises(ConfigError, match="field 'operator/lambda'"):
        parse_config(text, "run.json")


def test_invalid_json_reports_position():
    with pytest.raises(ConfigError, match=r"run.json:2:"):
        parse_config('{\n  "grid": ,\n}', "run.json")


def test_dimension_mismatch_rejected():
    raw = merge(SMALL, {"operator": {"form": "linear_trace", "matrix": [[1, 0], [0, 1]]}})
    with pytest.raises(ConfigError, match="matrix size"):
        parse_config(json.dumps(raw))


def test_unsorted_eps_rejected():
    with pytest.raises(ConfigError, match="decreasing"):
        parse_config(json.dumps(merge(SMALL, {"sweep": {"eps": [0.1, 0.2]}})))


def test_config_hash_is_key_order_independent():
    a = {"b": 1, "a": [1, 2]}
    assert config_hash(a) == config_hash({"a": [1, 2], "b": 1})


def test_cli_config_error_exit_code(tmp_path, capsys):
    bad = _write(tmp_path / "bad.json", merge(SMALL, {"grid": {"nx": "many"}}))
    assert main(["solve", "--config", bad, "--out", str(tmp_path / "o")]) == 2
    assert "field 'grid/nx'" in capsys.readouterr().err
    assert main(["solve", "--config", str(tmp_path / "nope.json")]) == 2


def test_solve_writes_field_and_per_level_diagnostics(tmp_path, cfg_path):
    out = tmp_path / "o"
    assert main(["solve", "--config", cfg_path, "--out", str(out), "--seed", "7"]) == 0
    head = (out / "field.csv").read_text().splitlines()
    assert head[0] == "x,t,u" and len(head) == 17 * 65 + 1
    diag = json.loads((out / "diagnostics.json").read_text())
    meta = diag["meta"]
    assert meta["seed"] == 7 and len(meta["config_hash"]) == 64
    assert meta["git_describe"] and meta["assumptions"]["passed"]
    levels = diag["diagnostics"]["levels"]
    assert len(levels) == 64
    assert {"outer", "residual", "monotonicity_defect"} <= set(levels[0])


def test_solve_out_as_csv_path(tmp_path, cfg_path):
    target = tmp_path / "res" / "field.csv"
    assert main(["solve", "--config", cfg_path, "--out", str(target)]) == 0
    assert target.exists() and (tmp_path / "res" / "diagnostics.json").exists()


def test_solve_is_byte_identical_on_rerun(tmp_path, cfg_path):
    for name in ("a", "b"):
        assert main(["solve", "--config", cfg_path, "--out", str(tmp_path / name)]) == 0
    for f in ("field.csv", "diagnostics.json"):
        assert _read(tmp_path / "a" / f) == _read(tmp_path / "b" / f)


def test_solver_error_exit_code_keeps_partial_diagnostics(tmp_path):
    raw = merge(SMALL, {"solver": {"max_outer": 1}})
    path = _write(tmp_path / "run.json", raw)
    assert main(["solve", "--config", path, "--out", str(tmp_path / "o")]) == 3
    diag = json.loads((tmp_path / "o" / "diagnostics.json").read_text())
    assert "outer iteration" in diag["error"]
    assert diag["eps"] == 0.1 and diag["level"] >= 1


def test_pipeline_and_report(tmp_path, cfg_path):
    sweep = str(tmp_path / "report.json")
    assert main(["sweep", "--config", cfg_path, "--out", sweep]) == 0
    rep = json.loads(_read(sweep))
    assert rep["kind"] == "sweep"
    assert rep["limit_field"]["path"] == "report_limit_field.csv"
    limit = str(tmp_path / rep["limit_field"]["path"])
    assert os.path.exists(limit)
    fb = str(tmp_path / "fb_report.json")
    code = main(["audit-fb", "--config", cfg_path, "--field", limit, "--sweep", sweep,
                 "--out", fb])
    assert code in (0, 4)
    fbr = json.loads(_read(fb))
    assert fbr["kind"] == "free_boundary"
    assert fbr["meta"]["field"]["sha256"] == rep["limit_field"]["sha256"]
    assert fbr["meta"]["field"]["eps"] == 0.1
    assert (code == 0) == fbr["passed"]
    assert os.path.exists(tmp_path / "fb_report_fb_points.csv")

    only = str(tmp_path / "sweep_only.md")
    assert main(["report", sweep, "--out", only]) == 0
    text = open(only).read()
    assert "## Uniform bound" in text and "## Porosity" not in text

    full = str(tmp_path / "summary.md")
    missing = str(tmp_path / "missing.json")
    assert main(["report", sweep, fb, missing, "--out", full]) == 0
    text = open(full).read()
    for title in ("Uniform bound", "Uniform Lipschitz bound", "Limit properties",
                  "Non-degeneracy", "Quadratic growth", "Porosity"):
        assert f"## {title}" in text
    assert "missing.json" in text
    for csv_name in ("sup_vs_eps.csv", "seminorms_vs_eps.csv", "S_vs_r.csv",
                     "porosity_vs_r.csv"):
        assert os.path.exists(tmp_path / csv_name)
    # inputs are not mutated
    assert json.loads(_read(sweep)) == rep


def test_report_malformed_json_names_file(tmp_path, capsys):
    bad = tmp_path / "broken.json"
    bad.write_text("{ not json")
    assert main(["report", str(bad), "--out", str(tmp_path / "s.md")]) == 2
    assert "broken.json" in capsys.readouterr().err


def test_audit_fb_t0_override_and_off_grid(tmp_path, cfg_path):
    out = tmp_path / "o"
    assert main(["solve", "--config", cfg_path, "--out", str(out)]) == 0
    field = str(out / "field.csv")
    fb = str(tmp_path / "fb.json")
    assert main(["audit-fb", "--config", cfg_path, "--field", field, "--t0", "0.25",
                 "--out", fb]) in (0, 4)
    assert [s["t0"] for s in json.loads(_read(fb))["slices"]] == [0.25]
    assert main(["audit-fb", "--config", cfg_path, "--field", field, "--t0", "0.1234567",
                 "--out", fb]) == 2


def test_sweep_threads_are_byte_identical(tmp_path, cfg_path):
    outs = []
    for threads in (1, 4):
        out = str(tmp_path / f"r{threads}" / "report.json")
        assert main(["sweep", "--config", cfg_path, "--threads", str(threads),
                     "--out", out]) == 0
        outs.append(out)
    assert _read(outs[0]) == _read(outs[1])
    a, b = (os.path.splitext(o)[0] + "_limit_field.csv" for o in outs)
    assert _read(a) == _read(b)
