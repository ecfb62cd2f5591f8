"""Sweep driver, aggregation, table formats, cache, and CLI behavior."""

import json
import os

import pytest

from sybilctl import experiments as xp
from sybilctl.cli import load_config_file, main, parse_overrides, parse_value
from sybilctl.engine import ConfigError, SimConfig

TINY = dict(n_honest=24, churn=False, warmup=60.0, measure_window=30.0,
            lookups_per_node=1, latency_max=0.05)

TINY_OVERRIDES = [
    "--override", "n_honest=24",
    "--override", "churn=false",
    "--override", "warmup=60",
    "--override", "measure_window=30",
    "--override", "lookups_per_node=1",
]


def tiny_cfg(**over):
    kw = dict(TINY)
    kw.update(over)
    cfg = SimConfig(**kw)
    cfg.validate()
    return cfg


# ---------------- aggregation ----------------

def test_aggregation_of_three_reports():
    reports = [
        {"success_rate": 0.9, "mean_hops": 5.0},
        {"success_rate": 1.0, "mean_hops": 6.0},
        {"success_rate": 0.8, "mean_hops": 7.0},
    ]
    row = xp.aggregate_row(reports)
    assert row["seeds"] == 3
    assert row["success_rate"] == 0.9
    assert row["mean_hops"] == 6.0
    half = 1.96 * (0.01 / 3) ** 0.5           # sample variance 0.01, n=3
    assert row["ci_lo"] == round(0.9 - half, 6)
    assert row["ci_hi"] == round(0.9 + half, 6)
    hops_half = 1.96 * (1.0 / 3) ** 0.5       # sample variance 1.0
    assert row["hops_ci_lo"] == round(6.0 - hops_half, 4)
    assert row["hops_ci_hi"] == round(6.0 + hops_half, 4)


def test_aggregation_skips_missing_hop_values():
    reports = [
        {"success_rate": 0.0, "mean_hops": None},
        {"success_rate": 1.0, "mean_hops": 4.0},
    ]
    row = xp.aggregate_row(reports)
    assert row["seeds"] == 2
    assert row["success_rate"] == 0.5
    assert row["mean_hops"] == 4.0


def test_mean_ci_edges():
    assert xp.mean_ci([]) == (None, 0.0)
    m, h = xp.mean_ci([2.5])
    assert m == 2.5 and h == 0.0


# ---------------- presets ----------------

def test_preset_shapes():
    swept, grid = xp.preset_fig4()
    assert swept == ["mode", "replicas", "maint_interval"]
    assert len(grid) == 12
    swept, grid = xp.preset_fig5()
    assert swept == ["replicas", "sybil_fraction"]
    assert len(grid) == 15
    assert len(xp.preset_fig6()[1]) == 30
    assert xp.preset_fig6()[0] == ["virtual_nodes", "replicas", "sybil_fraction"]
    assert len(xp.preset_smoke()[1]) == 4
    for name, make in xp.PRESETS.items():
        for params, cfg in make()[1]:
            cfg.validate()


def test_paper_default_is_the_headline_grid():
    _, a = xp.PRESETS["paper-default"]()
    _, b = xp.PRESETS["fig4"]()
    assert [p for p, _ in a] == [p for p, _ in b]
    assert [c for _, c in a] == [c for _, c in b]


def test_overlapping_presets_share_cache_keys():
    _, fig4 = xp.preset_fig4()
    _, fig5 = xp.preset_fig5()
    key4 = {xp.point_key(cfg, 1) for p, cfg in fig4
            if p["mode"] == "sybilcontrol" and p["maint_interval"] == 30.0}
    key5 = {xp.point_key(cfg, 1) for p, cfg in fig5 if p["sybil_fraction"] == 0.0}
    assert key4 == key5 and len(key4) == 3


# ---------------- cache ----------------

def test_point_key_separates_config_and_seed():
    a = xp.point_key(tiny_cfg(), 1)
    assert len(a) == 64 and set(a) <= set("0123456789abcdef")
    assert xp.point_key(tiny_cfg(), 2) != a
    assert xp.point_key(tiny_cfg(replicas=1), 1) != a


def test_run_point_reuses_cached_result(tmp_path):
    cache = str(tmp_path / "cache")
    cfg = tiny_cfg(n_honest=16)
    first = xp.run_point(cfg, 5, cache)
    files = os.listdir(cache)
    assert len(files) == 1
    # plant a sentinel to prove the next call reads the cache, not the sim
    path = os.path.join(cache, files[0])
    with open(path, "w") as fh:
        json.dump({"sentinel": True}, fh)
    assert xp.run_point(cfg, 5, cache) == {"sentinel": True}
    assert xp.run_point(cfg, 5, None) == first  # no cache dir: fresh run


# ---------------- sweep driver ----------------

def small_grid():
    return (["replicas"],
            [({"replicas": 0}, tiny_cfg(n_honest=16, replicas=0)),
             ({"replicas": 2}, tiny_cfg(n_honest=16, replicas=2))])


def test_sweep_grid_aggregates_rows():
    swept, grid = small_grid()
    result = xp.sweep_grid(swept, grid, seeds=[1, 2])
    assert result.columns == ["replicas"] + xp.METRIC_COLS
    assert [r["replicas"] for r in result.rows] == [0, 2]
    assert all(r["seeds"] == 2 for r in result.rows)
    assert len(result.raw) == 4
    assert result.errors == []
    for r in result.rows:
        assert 0.0 <= r["ci_lo"] <= r["success_rate"] <= r["ci_hi"]


def test_sweep_grid_with_worker_pool_matches_serial():
    swept, grid = small_grid()
    serial = xp.sweep_grid(swept, grid, seeds=[1])
    pooled = xp.sweep_grid(swept, grid, seeds=[1], workers=2)
    assert serial.rows == pooled.rows


def test_sweep_tolerates_failing_runs():
    # constructed directly, so the broken timeout only surfaces at run time
    poison = SimConfig(**dict(TINY, timeout=0.05))
    swept = ["case"]
    grid = [({"case": "ok"}, tiny_cfg(n_honest=16)), ({"case": "bad"}, poison)]
    result = xp.sweep_grid(swept, grid, seeds=[1, 2])
    assert len(result.errors) == 2
    assert all(params == {"case": "bad"} for params, _seed, _m in result.errors)
    ok_row, bad_row = result.rows
    assert ok_row["seeds"] == 2 and ok_row["success_rate"] is not None
    assert bad_row["seeds"] == 0 and bad_row["success_rate"] is None


def test_empty_seed_list_gives_empty_table():
    swept, grid = small_grid()
    result = xp.sweep_grid(swept, grid, seeds=[])
    assert result.rows == [] and result.raw == [] and result.errors == []


# ---------------- emission ----------------

GOLDEN_ROWS = [
    {"virtual_nodes": False, "replicas": 0, "success_rate": 0.75, "ci_lo": 0.7,
     "ci_hi": 0.8, "mean_hops": 5.5, "hops_ci_lo": 5.0, "hops_ci_hi": 6.0,
     "seeds": 3},
    {"virtual_nodes": True, "replicas": 2, "success_rate": 1.0, "ci_lo": 1.0,
     "ci_hi": 1.0, "mean_hops": None, "hops_ci_lo": None, "hops_ci_hi": None,
     "seeds": 0},
]
GOLDEN_COLUMNS = ["virtual_nodes", "replicas"] + xp.METRIC_COLS
GOLDEN_CSV = (
    "virtual_nodes,replicas,success_rate,ci_lo,ci_hi,"
    "mean_hops,hops_ci_lo,hops_ci_hi,seeds\r\n"
    "0,0,0.75,0.7,0.8,5.5,5.0,6.0,3\r\n"
    "1,2,1.0,1.0,1.0,,,,0\r\n"
)


def test_csv_schema_and_bytes_are_stable(tmp_path):
    p = tmp_path / "table.csv"
    xp.write_csv(str(p), GOLDEN_COLUMNS, GOLDEN_ROWS)
    assert p.read_bytes().decode() == GOLDEN_CSV
    xp.write_csv(str(p), GOLDEN_COLUMNS, GOLDEN_ROWS)
    assert p.read_bytes().decode() == GOLDEN_CSV  # byte-stable on rewrite


def test_csv_refuses_empty_table(tmp_path):
    with pytest.raises(ValueError):
        xp.write_csv(str(tmp_path / "empty.csv"), GOLDEN_COLUMNS, [])


def test_jsonl_round_trip(tmp_path):
    p = tmp_path / "table.jsonl"
    xp.write_jsonl(str(p), GOLDEN_ROWS)
    assert xp.read_jsonl(str(p)) == GOLDEN_ROWS
    first = p.read_bytes()
    xp.write_jsonl(str(p), GOLDEN_ROWS)
    assert p.read_bytes() == first
    p.write_text("\n" + first.decode() + "\n\n")
    assert xp.read_jsonl(str(p)) == GOLDEN_ROWS  # blank lines ignored


def test_emit_writes_requested_formats(tmp_path):
    swept, grid = small_grid()
    result = xp.sweep_grid(swept, grid, seeds=[1])
    paths = xp.emit(str(tmp_path), "mini", result, formats=("csv", "jsonl"), raw=True)
    names = sorted(os.path.basename(p) for p in paths)
    assert names == ["mini-runs.jsonl", "mini.csv", "mini.jsonl"]
    assert len(xp.read_jsonl(os.path.join(tmp_path, "mini-runs.jsonl"))) == 2
    table = xp.read_jsonl(os.path.join(tmp_path, "mini.jsonl"))
    assert table == result.rows
    with pytest.raises(ValueError):
        xp.emit(str(tmp_path), "mini", result, formats=("parquet",))


# ---------------- CLI ----------------

def test_cli_value_parsing():
    assert parse_value("0.5") == 0.5
    assert parse_value("true") is True
    assert parse_value("pareto") == "pareto"
    assert parse_value("[2, 3]") == [2, 3]
    assert parse_overrides(["a=1", "b = exp"]) == {"a": 1, "b": "exp"}
    with pytest.raises(ConfigError):
        parse_overrides(["missing-separator"])


def test_cli_config_file_with_and_without_section(tmp_path):
    bare = tmp_path / "bare.cfg"
    bare.write_text("n_honest = 16\nsession_dist = exp\n")
    assert load_config_file(str(bare)) == {"n_honest": 16, "session_dist": "exp"}
    ini = tmp_path / "sections.cfg"
    ini.write_text("[sim]\nn_honest = 32\n[extra]\nchurn = false\n")
    assert load_config_file(str(ini)) == {"n_honest": 32, "churn": False}


def test_cli_presets_lists_grids(capsys):
    assert main(["presets"]) == 0
    out = capsys.readouterr().out
    for name in ("paper-default", "fig4", "fig5", "fig6", "fig7", "smoke"):
        assert name in out


def test_cli_rejects_bad_inputs(tmp_path, capsys):
    assert main(["run", "--preset", "nope", "--quiet"]) == 2
    assert main(["run", "--preset", "smoke", "--quiet",
                 "--override", "bogus_knob=1"]) == 2
    assert main(["run", "--preset", "smoke", "--quiet",
                 "--override", "broken"]) == 2
    assert main(["single", "--override", "n_honest=1"]) == 2
    capsys.readouterr()


def test_cli_run_emits_tables(tmp_path, capsys, monkeypatch):
    out = tmp_path / "results"
    code = main(["run", "--preset", "smoke", "--quiet", "--workers", "1",
                 "--seeds", "1", "--out", str(out), "--format", "both",
                 *TINY_OVERRIDES])
    assert code == 0
    printed = capsys.readouterr().out.splitlines()
    assert str(out / "smoke.csv") in printed
    assert str(out / "smoke.jsonl") in printed
    header = (out / "smoke.csv").read_text().splitlines()[0]
    assert header == ("replicas,sybil_fraction,success_rate,ci_lo,ci_hi,"
                      "mean_hops,hops_ci_lo,hops_ci_hi,seeds")
    rows = xp.read_jsonl(str(out / "smoke.jsonl"))
    assert len(rows) == 4
    assert all(r["seeds"] == 1 for r in rows)

    # same sweep again, this time resolved through the output env var
    monkeypatch.setenv(xp.OUT_ENV, str(tmp_path / "envout"))
    code = main(["run", "--preset", "smoke", "--quiet", "--workers", "1",
                 "--seeds", "1", *TINY_OVERRIDES])
    assert code == 0
    capsys.readouterr()
    assert (tmp_path / "envout" / "smoke.csv").exists()


def test_cli_run_uses_cache_dir(tmp_path, capsys):
    cache = tmp_path / "cache"

    def run_args(out_name):
        return ["run", "--preset", "smoke", "--quiet", "--workers", "1",
                "--seeds", "1", "--out", str(tmp_path / out_name),
                "--cache", str(cache), *TINY_OVERRIDES]

    assert main(run_args("r1")) == 0
    n_files = len(os.listdir(cache))
    assert n_files == 4
    assert main(run_args("r2")) == 0  # same sweep, served from the cache
    assert len(os.listdir(cache)) == n_files
    assert (tmp_path / "r2" / "smoke.csv").exists()
    capsys.readouterr()


def test_cli_single_report(tmp_path, capsys):
    report_path = tmp_path / "report.json"
    code = main(["single", "--seed", "7", "--json", str(report_path),
                 *TINY_OVERRIDES, "--override", "n_honest=16"])
    assert code == 0
    report = json.loads(report_path.read_text())
    assert report["seed"] == 7
    assert 0.0 <= report["success_rate"] <= 1.0
    assert report["config"]["n_honest"] == 16
    capsys.readouterr()


def test_cli_single_baseline_flag(capsys):
    code = main(["single", "--baseline", *TINY_OVERRIDES,
                 "--override", "n_honest=16"])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["config"]["sybilcontrol"] is False
    assert report["messages"]["verify"] == 0


def test_cli_single_prints_report(capsys):
    code = main(["single", *TINY_OVERRIDES, "--override", "n_honest=16"])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["attempted"] > 0


def test_cli_unwritable_output_is_io_error(tmp_path, capsys):
    blocker = tmp_path / "file.txt"
    blocker.write_text("x")
    code = main(["run", "--preset", "smoke", "--quiet", "--workers", "1",
                 "--seeds", "1", "--out", str(blocker / "sub"),
                 *TINY_OVERRIDES])
    assert code == 1
    capsys.readouterr()
