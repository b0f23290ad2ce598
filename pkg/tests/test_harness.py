import csv
import json

import numpy as np
import pytest

from entrodyn import __version__
from entrodyn.cli import main
from entrodyn.harness import EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, ConfigError, config_hash, load_config


def _write(tmp_path, name, cfg):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _rows(path):
    with open(path) as fh:
        lines = [l for l in fh if not l.startswith("#")]
    return list(csv.DictReader(lines))


def test_qre_zero_rationality(tmp_path):
    cfg = _write(tmp_path, "q.json", {"game": {"builtin": "coordination"}, "rho": 0})
    assert main(["qre", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_OK
    out = json.loads((tmp_path / "o" / "qre.json").read_text())
    np.testing.assert_array_equal(np.ravel(out["x"]), [0.5, 0.5, 0.5, 0.5])
    assert out["meta"]["entrodyn"] == __version__


def test_simulate_check_passes_on_potential_game(tmp_path):
    cfg = _write(tmp_path, "s.json", {"game": {"builtin": "coordination"}, "T": 0.3, "x0": [[0.7, 0.3], [0.6, 0.4]], "t_end": 200})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o"), "--check"]) == EXIT_OK
    rows = _rows(tmp_path / "o" / "trajectory.csv")
    assert list(rows[0]) == ["t", "player", "action", "prob"]
    diag = _rows(tmp_path / "o" / "diagnostics.csv")
    assert list(diag[0]) == ["t", "free_energy", "field_norm"]
    f = [float(r["free_energy"]) for r in diag]
    assert all(b <= a + 1e-8 for a, b in zip(f, f[1:]))


def test_simulate_check_fails_when_not_converged(tmp_path):
    cfg = _write(tmp_path, "s.json", {"game": {"builtin": "coordination"}, "T": 0.3, "x0": [[0.7, 0.3], [0.6, 0.4]], "t_end": 0.5})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o"), "--check"]) == EXIT_CHECK


def test_malformed_config(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"game": {"builtin": "coordination"},\n "T": }')
    assert main(["simulate", "--config", str(p)]) == EXIT_CONFIG
    assert "bad.json:2" in capsys.readouterr().err


@pytest.mark.parametrize(
    "cfg",
    [
        {"game": {"builtin": "nope"}, "T": 0.1},
        {"T": 0.1},
        {"game": {"builtin": "coordination"}, "T": "hot"},
        {"game": "missing_file.json", "T": 0.1},
        {"game": {"builtin": "coordination"}, "entropy": {"kernel": "tsallis", "q": 3}, "T": 0.1},
    ],
)
def test_invalid_configs(tmp_path, cfg):
    assert main(["simulate", "--config", _write(tmp_path, "c.json", cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_missing_config_file(tmp_path):
    assert main(["qre", "--config", str(tmp_path / "none.json")]) == EXIT_CONFIG


def test_numerical_failure_exit(tmp_path):
    cfg = _write(tmp_path, "l.json", {
        "game": {"builtin": "coordination"}, "entropy": {"kernel": "tsallis", "q": 0.5}, "T": 5.0,
        "iters": 100, "schedule": {"kind": "constant", "c": 5.0},
    })
    assert main(["learn", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_NUMERICAL


def test_zero_temperature_learning_needs_flag(tmp_path):
    cfg = _write(tmp_path, "l.json", {"game": {"builtin": "coordination"}, "T": 0.0, "iters": 20, "schedule": {"kind": "harmonic", "c": 0.5}})
    out = str(tmp_path / "o")
    assert main(["learn", "--config", cfg, "--out", out]) == EXIT_NUMERICAL
    assert main(["learn", "--config", cfg, "--out", out, "--unsafe-zero-temperature"]) == EXIT_OK


def test_learn_outputs_and_determinism(tmp_path):
    cfg = _write(tmp_path, "l.json", {
        "game": {"builtin": "coordination"}, "T": 0.2, "iters": 100, "seeds": [3],
        "schedule": {"kind": "power", "c": 1, "a": 5, "b": 0.6}, "noise": {"kind": "uniform", "bound": 0.1},
        "revision": {"p": 0.5}, "delay": {"M": 2},
    })
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["learn", "--config", cfg, "--out", str(a)]) == EXIT_OK
    assert main(["learn", "--config", cfg, "--out", str(b)]) == EXIT_OK
    files = sorted(p.name for p in a.iterdir())
    assert "run_seed3.csv" in files
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    head = (a / "run_seed3.csv").read_text().splitlines()
    assert head[0].startswith(f"# entrodyn={__version__} config_sha256=")
    assert head[1] == "n,player,action_chosen,payoff,prob_0,prob_1"


def test_seed_flag_overrides(tmp_path):
    cfg = _write(tmp_path, "l.json", {"game": {"builtin": "coordination"}, "T": 0.2, "iters": 50, "seeds": [1]})
    assert main(["learn", "--config", cfg, "--out", str(tmp_path / "o"), "--seed", "9"]) == EXIT_OK
    assert (tmp_path / "o" / "run_seed9.csv").exists()


def test_portrait_zero_game_flows_to_centre(tmp_path):
    cfg = _write(tmp_path, "p.json", {"game": {"builtin": "zero"}, "temperatures": [1.0], "grid": 3, "t_end": 40})
    assert main(["portrait", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_OK
    rows = _rows(tmp_path / "o" / "portrait_T1.csv")
    last = {}
    for r in rows:
        last[r["trajectory"]] = r
    for r in last.values():
        assert abs(float(r["x1"]) - 0.5) < 1e-6 and abs(float(r["x2"]) - 0.5) < 1e-6


def test_bifurcate_outputs(tmp_path):
    cfg = _write(tmp_path, "b.json", {"game": {"builtin": "coordination"}, "temperatures": [0.3, 0.7], "grid": 7})
    assert main(["bifurcate", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_OK
    rows = _rows(tmp_path / "o" / "scan.csv")
    assert list(rows[0]) == ["T", "rest_point_id", "player", "action", "prob", "max_eig_real", "tag"]
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["critical_temperatures"][0] == pytest.approx(0.5, abs=1e-3)


def test_density_command_single_replicate_at_qre(tmp_path):
    from entrodyn.entropy import GIBBS
    from entrodyn.equilibria import qre_solve
    from entrodyn.games import coordination_game

    x = qre_solve(coordination_game(), GIBBS, 5.0, init=np.array([0.9, 0.1, 0.9, 0.1])).x
    cfg = _write(tmp_path, "f.json", {"replicates": 1, "x0": [x[:2].tolist(), x[2:].tolist()], "schedule": {"kind": "harmonic", "c": 1e-6}})
    assert main(["fig2", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_OK
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["converged_fraction"] == [1.0] * len(summary["checkpoints"])
    dens = _rows(tmp_path / "o" / "density_n0.csv")
    assert list(dens[0]) == ["x1", "x2", "count"]


def test_config_hash_ignores_private_keys():
    assert config_hash({"a": 1, "_base": "/x"}) == config_hash({"a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_load_config_reports_position(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{\n\n  oops}")
    with pytest.raises(ConfigError, match=r"c\.json:3:"):
        load_config(p)
