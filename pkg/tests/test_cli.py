import json

import pytest

from fedjcpba import cli, config, fedsim, jcpba


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def records(text):
    return [json.loads(line) for line in text.splitlines()]


def write(tmp_path, text, name="scenario.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_solve_default_revalidates(capsys):
    code, out, _ = run(capsys, "solve")
    assert code == 0
    (rec,) = records(out)
    assert rec["schema_version"] == 1 and rec["command"] == "solve"
    assert rec["config_hash"] == config.default_scenario().digest()
    assert rec["violations"] == []

    # independent re-check of the emitted allocation
    sc = fedsim.Scenario.from_config(config.default_scenario())
    clients = fedsim.build_clients(sc, fedsim.round_channel(sc, 0))
    a = rec["allocation"]
    alloc = jcpba.evaluate(clients, a["beta"], a["bandwidth_hz"])
    assert jcpba.validate_allocation(alloc, clients, sc.constraints) == []
    assert alloc.objective == pytest.approx(a["objective_s"], rel=1e-12)


def test_oracle_check_two_clients(capsys, tmp_path):
    path = write(tmp_path, "population:\n  n_clients: 2\n")
    code, out, _ = run(capsys, "oracle-check", "--config", path)
    (rec,) = records(out)
    assert {"bcd_objective_s", "oracle_objective_s", "relative_gap"} <= set(rec)
    assert rec["oracle_objective_s"] >= rec["joint_optimum_s"] * (1 - 1e-9)
    assert code == (0 if rec["within_tolerance"] else 1)
    assert abs(rec["relative_gap"]) <= 0.01


def test_oracle_check_too_many_clients(capsys):
    code, _, err = run(capsys, "oracle-check")
    assert code == 4
    assert "error" in err


def test_sweep_six_cells(capsys, tmp_path):
    code, _, _ = run(capsys, "sweep", "--rounds", "2", "--out", str(tmp_path))
    assert code == 0
    recs = records((tmp_path / "sweep.jsonl").read_text())
    cells = [r for r in recs if r["kind"] == "cell"]
    assert len(cells) == 6
    assert {tuple(c["speed_range"]) for c in cells} == {(1.0, 1.5), (0.5, 2.0), (0.2, 2.5)}
    csv_lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert len(csv_lines) == 7 and csv_lines[0].startswith("lo,hi,policy")


def test_simulate_outputs(capsys, tmp_path):
    code, _, _ = run(capsys, "simulate", "--rounds", "3", "--seed", "5",
                     "--policy", "ubfp", "--out", str(tmp_path))
    assert code == 0
    recs = records((tmp_path / "simulate.jsonl").read_text())
    assert [r["kind"] for r in recs] == ["round"] * 3 + ["summary"]
    assert all(r["seed"] == 5 and r["policy"] == "ubfp" for r in recs)
    assert recs[-1]["synthetic_training"] is True
    assert len((tmp_path / "simulate.csv").read_text().splitlines()) == 4


def test_simulate_byte_identical(capsys, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run(capsys, "simulate", "--rounds", "4", "--seed", "3", "--out", str(out))[0] == 0
    assert (a / "simulate.jsonl").read_bytes() == (b / "simulate.jsonl").read_bytes()
    assert (a / "simulate.csv").read_bytes() == (b / "simulate.csv").read_bytes()


def test_replay_from_embedded_fields(capsys, tmp_path):
    path = write(tmp_path, "population:\n  n_clients: 4\nsimulation:\n  rounds: 2\n")
    _, first, _ = run(capsys, "simulate", "--config", path, "--seed", "9")
    head = records(first)[0]
    cfg = cli.apply_overrides(config.load_scenario(path), seed=head["seed"])
    assert cfg.digest() == head["config_hash"]
    assert cli.dumps_records(cli.cmd_simulate(cfg).records) == first


@pytest.mark.parametrize("text,code", [
    ("link: [unclosed\n", 3),
    ("constraints:\n  beta_min: 0.9\n  beta_max: 0.5\n", 4),
    ("nonsense: 1\n", 4),
    ("constraints:\n  gamma_min: 0.05\n", 5),
])
def test_exit_codes(capsys, tmp_path, text, code):
    got, _, err = run(capsys, "solve", "--config", write(tmp_path, text))
    assert got == code
    assert err


def test_infeasible_names_constraint(capsys, tmp_path):
    _, _, err = run(capsys, "solve", "--config",
                    write(tmp_path, "constraints:\n  gamma_min: 0.05\n"))
    assert "C5" in err


def test_missing_config_file(capsys, tmp_path):
    assert run(capsys, "solve", "--config", str(tmp_path / "nope.yaml"))[0] == 3


def test_usage_error(capsys):
    with pytest.raises(SystemExit) as err:
        cli.main(["simulate", "--policy", "greedy"])
    assert err.value.code == 2
