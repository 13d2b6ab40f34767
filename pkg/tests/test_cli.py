import csv
import json
import os

import pytest

from prfgames import Activation, PublishersGame
from prfgames.cli import COMMANDS, main
from prfgames.dynamics import run_dynamics
from prfgames.experiments import EcosystemSampler, sample_instance


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def read(path, name):
    with open(os.path.join(path, name)) as fh:
        return fh.read()


def test_help_lists_subcommands(capsys):
    code, out, _ = run(capsys, "--help")
    assert code == 0
    for name in COMMANDS:
        assert name in out
    assert "lambda=0.5" in out


def test_subcommand_help_shows_defaults(capsys):
    code, out, _ = run(capsys, "simulate", "--help")
    assert code == 0 and "--eta0" in out and "(default: 0.5)" in out


def test_missing_subcommand_is_an_error(capsys):
    assert run(capsys)[0] == 1


def test_simulate_is_deterministic_and_matches_library(capsys, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        code, summary, _ = run(capsys, "simulate", "--activation", "root", "--seed", 7, "--out", out)
        assert code == 0 and summary.startswith("simulate: converged")
    for name in ("trajectory.csv", "report.json", "game.json"):
        assert read(a, name) == read(b, name)
    manifests = [json.loads(read(p, "manifest.json")) for p in (a, b)]
    for m in manifests:
        del m["values"]["out"]
    assert manifests[0] == manifests[1]
    game = sample_instance(EcosystemSampler(), 3, 3, 3, 0.5, Activation("root"), 7)
    assert read(a, "game.json") == game.to_json()
    traj, report, _ = run_dynamics(game, seed=7)
    assert read(a, "report.json") == report.to_json()
    assert read(a, "trajectory.csv") == traj.to_csv()


def test_invalid_lambda_names_the_field(capsys, tmp_path):
    code, _, err = run(capsys, "simulate", "--lambda", -1, "--out", tmp_path)
    assert code == 1 and "lambda" in err
    assert not os.path.exists(tmp_path / "report.json")


def test_non_convergence_exit_status(capsys, tmp_path):
    code, summary, _ = run(capsys, "simulate", "--max-rounds", 5, "--out", tmp_path)
    assert code == 2 and "not converged" in summary
    assert json.loads(read(tmp_path, "report.json"))["converged"] is False


def test_config_precedence_and_sources(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"lambda": 0.8, "n": 2, "activation": "log"}))
    code, _, _ = run(capsys, "simulate", "--config", cfg, "--n", 4, "--out", tmp_path / "o")
    assert code == 0
    manifest = json.loads(read(tmp_path / "o", "manifest.json"))
    assert manifest["values"]["n"] == 4 and manifest["sources"]["n"] == "flag"
    assert manifest["values"]["lambda"] == 0.8 and manifest["sources"]["lambda"] == "config"
    assert manifest["values"]["k"] == 3 and manifest["sources"]["k"] == "default"
    assert json.loads(read(tmp_path / "o", "game.json"))["n"] == 4


def test_config_game_is_used(capsys, tmp_path):
    game = sample_instance(EcosystemSampler(), 2, 2, 2, 0.4, Activation("linear"), 99)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"game": game.to_dict()}))
    assert run(capsys, "simulate", "--config", cfg, "--out", tmp_path / "o")[0] == 0
    assert PublishersGame.from_json(read(tmp_path / "o", "game.json")).to_json() == game.to_json()


def test_config_errors(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"lambda": 0.5, "temperature": 3}))
    code, _, err = run(capsys, "simulate", "--config", cfg, "--out", tmp_path)
    assert code == 1 and "temperature" in err
    cfg.write_text(json.dumps({"eta0": 0.0}))
    code, _, err = run(capsys, "simulate", "--config", cfg, "--out", tmp_path)
    assert code == 1 and "eta0" in err
    code, _, err = run(capsys, "simulate", "--config", tmp_path / "missing.json", "--out", tmp_path)
    assert code == 1 and "config" in err


def test_unwritable_output(capsys, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    code, _, err = run(capsys, "equilibrium", "--out", blocker / "sub")
    assert code == 1 and err.startswith("prfgames equilibrium: error")


def test_concavity_flags_exponential(capsys, tmp_path):
    code, summary, _ = run(capsys, "concavity", "--activation", "exponential", "--samples", 100, "--out", tmp_path)
    assert code == 0 and "activation_concave=false" in summary
    assert json.loads(read(tmp_path, "concavity.json"))["activation_concave"] is False


@pytest.mark.parametrize("equation,alpha", [("exact", 0.21320), ("scaled", 0.50769)])
def test_equilibrium_values(capsys, tmp_path, equation, alpha):
    code, _, _ = run(capsys, "equilibrium", "--activation", "linear", "--param", 2.0, "--equation", equation,
                     "--out", tmp_path)
    assert code == 0
    payload = json.loads(read(tmp_path, "equilibrium.json"))
    assert payload["alpha"] == pytest.approx(alpha, abs=1e-5)
    assert payload["users_welfare"] == pytest.approx(1 - (1 - payload["alpha"]) ** 2 * 0.25, abs=1e-12)


def test_counterexample_output(capsys, tmp_path):
    code, _, _ = run(capsys, "counterexample", "--param", 10, "--ahat", 0.5, "--out", tmp_path)
    assert code == 0
    payload = json.loads(read(tmp_path, "counterexample.json"))
    assert payload["n"] == 2 and payload["second_derivative"] == pytest.approx(0.656, abs=5e-4)
    assert PublishersGame.from_dict(payload["game"]).n == 2
    code, _, err = run(capsys, "counterexample", "--activation", "linear", "--ahat", 0.5, "--out", tmp_path)
    assert code == 1 and err


def test_small_sweep(capsys, tmp_path):
    code, _, _ = run(capsys, "sweep", "--grid", "0.2,1", "--activations", "linear", "--instances", 3,
                     "--bootstrap", 50, "--jobs", 1, "--out", tmp_path)
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "sweep.csv")))
    assert len(rows) == 2 * 3 and {r["metric"] for r in rows} == {"publishers_welfare", "users_welfare", "rounds"}
    assert json.loads(read(tmp_path, "sweep_manifest.json"))["spec"]["instances_per_point"] == 3


def test_bad_grid_rejected(capsys, tmp_path):
    code, _, err = run(capsys, "sweep", "--grid", "0.2,abc", "--out", tmp_path)
    assert code == 1 and "grid" in err


def test_small_regret_audit(capsys, tmp_path):
    code, _, _ = run(capsys, "regret-audit", "--grid", "0.5", "--activations", "root", "--instances", 2,
                     "--T", 20, "--jobs", 1, "--out", tmp_path)
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "regret_audit.csv")))
    assert len(rows) == 1 and rows[0]["metric"] == "average_regret"


def test_small_softmax_trace(capsys, tmp_path):
    code, _, _ = run(capsys, "softmax-trace", "--T", 40, "--k", 2, "--out", tmp_path)
    assert code == 0
    payload = json.loads(read(tmp_path, "softmax_trace.json"))
    assert payload["checkpoints"][-1] == 40 and len(payload["slopes"]) == 3
    code, _, err = run(capsys, "softmax-trace", "--T", 40, "--k", 5, "--out", tmp_path)
    assert code == 1 and err
