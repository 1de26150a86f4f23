import json
import os

import numpy as np
import pytest

from sleeptrack.cli import EXIT_CONFIG, EXIT_OK, SEED_ENV_VAR, main
from sleeptrack.cost_tables import load_table
from sleeptrack.sim import read_tradeoff_csv


@pytest.fixture
def tiny_network(tmp_path):
    cfg = {
        "name": "tiny",
        "kind": "finite",
        "locations": [1, 2, 3, 4, 5],
        "motion": {"steps": {"-1": 0.3, "0": 0.4, "1": 0.3}},
        "sensors": [
            {"location": 2.0, "kind": "gaussian", "noise_var": 1.0},
            {"location": 4.0, "kind": "gaussian", "noise_var": 1.0},
        ],
        "cost": "hamming",
        "energy_price": 0.1,
        "start": 3,
    }
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def test_tables_command_writes_file(tmp_path, tiny_network):
    out = tmp_path / "table.txt"
    code = main([
        "tables", "--network", tiny_network, "--source", "greedy",
        "--mc-samples", "40", "--out", str(out), "--seed", "1",
    ])
    assert code == EXIT_OK
    table = load_table(out)
    assert table.values.shape == (5, 2)
    assert table.provenance == "greedy"


def test_tables_command_requires_out(tiny_network, capsys):
    code = main(["tables", "--network", tiny_network, "--source", "asleep"])
    assert code == EXIT_CONFIG
    assert "error" in capsys.readouterr().err


def test_unknown_network_exits_config(tmp_path):
    out = tmp_path / "t.txt"
    code = main(["tables", "--network", "Q", "--source", "asleep", "--out", str(out)])
    assert code == EXIT_CONFIG


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        main(["tables", "--source", "asleep"])  # missing --network
    assert exc.value.code == 2


def test_sweep_command_csv_schema(tmp_path, tiny_network):
    out = tmp_path / "sweep.csv"
    code = main([
        "sweep", "--network", tiny_network,
        "--policy", "fcr-asleep", "--policy", "all-asleep",
        "--c-grid", "0.1,0.3", "--runs", "3", "--seed", "2",
        "--mc-samples", "30", "--workers", "1", "--out", str(out),
    ])
    assert code == EXIT_OK
    points = read_tradeoff_csv(out)
    assert len(points) == 4
    assert {pt.policy for pt in points} == {"fcr", "all-asleep"}
    assert all(pt.seed != 0 for pt in points)
    assert (tmp_path / "sweep.gp").exists()


def test_sweep_rejects_empty_policy_list(tmp_path, tiny_network):
    out = tmp_path / "sweep.csv"
    code = main([
        "sweep", "--network", tiny_network, "--c-grid", "0.1",
        "--runs", "1", "--out", str(out),
    ])
    assert code == EXIT_CONFIG


def test_sweep_rejects_unknown_policy(tmp_path, tiny_network):
    out = tmp_path / "sweep.csv"
    code = main([
        "sweep", "--network", tiny_network, "--policy", "psychic",
        "--c-grid", "0.1", "--runs", "1", "--out", str(out),
    ])
    assert code == EXIT_CONFIG


def test_sweep_rejects_unsorted_grid(tmp_path, tiny_network):
    out = tmp_path / "sweep.csv"
    code = main([
        "sweep", "--network", tiny_network, "--policy", "all-asleep",
        "--c-grid", "0.3,0.1", "--runs", "1", "--out", str(out),
    ])
    assert code == EXIT_CONFIG


def test_replay_deterministic(tmp_path, tiny_network):
    out1 = tmp_path / "a.csv"
    out2 = tmp_path / "b.csv"
    for out in (out1, out2):
        code = main([
            "replay", "--network", tiny_network, "--policy", "all-awake",
            "--seed", "9", "--out", str(out),
        ])
        assert code == EXIT_OK
    assert out1.read_text() == out2.read_text()
    lines = out1.read_text().strip().splitlines()
    assert lines[0] == "step,b,b_hat,awake,g"
    assert len(lines) > 1


def test_replay_trace_length_matches_duration(tmp_path, tiny_network, capsys):
    out = tmp_path / "trace.csv"
    code = main([
        "replay", "--network", tiny_network, "--policy", "all-asleep",
        "--seed", "3", "--out", str(out),
    ])
    assert code == EXIT_OK
    err = capsys.readouterr().err
    duration = int(err.split("duration=")[1].split()[0])
    rows = out.read_text().strip().splitlines()[1:]
    assert len(rows) == duration


def test_seed_env_override(tmp_path, tiny_network, monkeypatch):
    out1 = tmp_path / "a.csv"
    out2 = tmp_path / "b.csv"
    monkeypatch.setenv(SEED_ENV_VAR, "77")
    main(["replay", "--network", tiny_network, "--policy", "all-awake",
          "--seed", "1", "--out", str(out1)])
    monkeypatch.setenv(SEED_ENV_VAR, "78")
    main(["replay", "--network", tiny_network, "--policy", "all-awake",
          "--seed", "1", "--out", str(out2)])
    assert out1.read_text() != out2.read_text()
    monkeypatch.setenv(SEED_ENV_VAR, "notanint")
    code = main(["replay", "--network", tiny_network, "--policy", "all-awake",
                 "--out", str(out1)])
    assert code == EXIT_CONFIG
