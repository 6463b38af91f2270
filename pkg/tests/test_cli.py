import json

import pytest

from lraid.cli import (EXIT_CONFIG, EXIT_NO_ATTACK, EXIT_OK, EXIT_SCHEMA,
                       RunConfig, load_config, main, resolve_grid)


def case3_args(case3_path, out, extra=()):
    return ["--case", str(case3_path), "--capacity-scale", "1.0",
            "--u", "1", "--budget", "2", "--out", str(out), *extra]


def test_perfect_attack_small_case(case3_path, tmp_path, capsys):
    rc = main(["perfect-attack", *case3_args(case3_path, tmp_path)])
    out = capsys.readouterr().out
    assert rc == EXIT_OK
    assert "attacked meters" in out
    assert "total measurable overload" in out
    assert (tmp_path / "baseline.json").exists()
    assert (tmp_path / "resolved_config.json").exists()


def test_perfect_attack_no_feasible(case3_path, tmp_path):
    rc = main(["perfect-attack", *case3_args(case3_path, tmp_path,
                                             ["--budget", "0"])])
    assert rc == EXIT_NO_ATTACK


def test_bad_config_exit_code(tmp_path):
    rc = main(["perfect-attack", "--case", str(tmp_path / "missing.m")])
    assert rc == EXIT_CONFIG


def test_invalid_rho_exit_code(case3_path, tmp_path):
    rc = main(["perfect-attack", *case3_args(case3_path, tmp_path,
                                             ["--rho", "0.5"])])
    assert rc == EXIT_CONFIG


def test_campaign_and_report_round_trip(case3_path, tmp_path, capsys):
    out = tmp_path / "camp"
    rc = main(["campaign", *case3_args(case3_path, out),
               "--samples", "5", "--half-range", "0.25", "--seed", "11",
               "--jobs", "1"])
    assert rc == EXIT_OK
    assert (out / "campaign.jsonl").exists()
    for name in ("summary.csv", "meters.csv", "overlap.csv",
                 "branch_groups.csv", "impact_hist.csv"):
        assert (out / name).exists(), name
    first = {name: (out / name).read_bytes()
             for name in ("summary.csv", "meters.csv", "overlap.csv",
                          "branch_groups.csv", "impact_hist.csv")}
    capsys.readouterr()

    rep = tmp_path / "rep"
    rc = main(["report", *case3_args(case3_path, rep),
               str(out / "campaign.jsonl")])
    assert rc == EXIT_OK
    for name, blob in first.items():
        assert (rep / name).read_bytes() == blob, name


def test_campaign_rerun_identical_bytes(case3_path, tmp_path):
    args = lambda d: ["campaign", *case3_args(case3_path, d), "--samples", "4",
                      "--half-range", "0.25", "--seed", "11", "--jobs", "1"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(args(a)) == EXIT_OK
    assert main(args(b)) == EXIT_OK
    assert (a / "campaign.jsonl").read_bytes() == (b / "campaign.jsonl").read_bytes()


def test_report_header_only_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text(json.dumps({"schema": "lraid-campaign-v1", "n_samples": 5,
                                "n_buses": 3, "n_branches": 3,
                                "n_generators": 2, "baseline": {}}) + "\n")
    rc = main(["report", "--out", str(tmp_path / "rep"), str(path)])
    assert rc == EXIT_SCHEMA


def test_report_unknown_schema(tmp_path):
    path = tmp_path / "odd.jsonl"
    path.write_text(json.dumps({"schema": "other"}) + "\n")
    rc = main(["report", "--out", str(tmp_path / "rep"), str(path)])
    assert rc == EXIT_SCHEMA


def test_config_file_and_flag_precedence(case3_path, tmp_path):
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps({
        "case_path": str(case3_path),
        "capacity_scale": 1.0,
        "u": 1,
        "budget": 2,
        "epsilon": 0.15,
    }))
    cfg = load_config(str(cfg_file), {"epsilon": 0.25})
    assert cfg.epsilon == 0.25          # flag beats file
    assert cfg.u == 1                   # file beats default
    assert cfg.rho == 1.05              # default survives
    assert cfg.budget == 2


def test_config_defaults_are_study_values():
    cfg = RunConfig()
    assert cfg.capacity_scale == 0.65
    assert (cfg.u, cfg.budget, cfg.epsilon, cfg.rho) == (2, 10, 0.20, 1.05)
    assert cfg.samples == 10000
    assert cfg.half_range == 0.10
    assert cfg.error_target == "admittance"


def test_unknown_config_key_rejected(tmp_path):
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps({"nope": 1}))
    rc = main(["perfect-attack", "--config", str(cfg_file)])
    assert rc == EXIT_CONFIG


def test_resolved_config_echo_reproduces(case3_path, tmp_path):
    out = tmp_path / "echo"
    assert main(["perfect-attack", *case3_args(case3_path, out)]) == EXIT_OK
    echoed = json.loads((out / "resolved_config.json").read_text())
    cfg = load_config(None, echoed)
    grid = resolve_grid(cfg)
    assert grid.n_buses == 3


def test_base_dispatch_modes_resolve(case3_path, tmp_path):
    for mode in ("case-pg-raw", "opf", "case-pg"):
        cfg = load_config(None, {"case_path": str(case3_path),
                                 "capacity_scale": 1.0,
                                 "base_dispatch": mode, "gen_min": "case"})
        grid = resolve_grid(cfg)
        assert grid.n_generators == 2
