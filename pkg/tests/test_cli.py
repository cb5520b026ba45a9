import os

import pandas as pd
import pytest

import app
from pipeline.scenario import dump_scenario, load_scenario, parse_scenario
from verification.suite import CHECK_NAMES

from conftest import SCENARIO_DIR

CONSTANT = """
[scenario]
seed = 7

[algebra]
dimension = 3
ranks = 1, 2

[path]
generator = zero

[sampling]
samples = 6
pairs = 6
initial_conditions = 3
grid_points = 11
suite_grid = 11
constant_grid = 16
"""


@pytest.fixture(autouse=True)
def clean_settings(monkeypatch):
    for name in ("PROPAGATOR_LOG_LEVEL", "PROPAGATOR_BACKEND", "PROPAGATOR_ATOL",
                 "PROPAGATOR_INTEGRATED_TOL", "PROPAGATOR_ALGEBRAIC_TOL"):
        monkeypatch.delenv(name, raising=False)
    app.get_settings.cache_clear()
    yield
    app.get_settings.cache_clear()


def test_list_prints_the_check_names(capsys):
    assert app.main(["verify", "--list"]) == 0
    assert capsys.readouterr().out.split() == list(CHECK_NAMES)


def test_missing_seed_is_a_configuration_error(scenario_file, capsys):
    config = scenario_file(CONSTANT.replace("seed = 7", ""))
    assert app.main(["verify", "--config", config]) == 2
    assert "seed" in capsys.readouterr().err


def test_unknown_key_is_rejected(scenario_file):
    config = scenario_file(CONSTANT + "colour = blue\n")
    assert app.main(["simulate", "--config", config, "--output", "unused.csv"]) == 2


def test_missing_config_file(tmp_path):
    assert app.main(["verify", "--config", str(tmp_path / "absent.ini")]) == 4


def test_config_is_required():
    assert app.main(["verify"]) == 2


def test_bad_environment_is_a_configuration_error(monkeypatch, scenario_file):
    monkeypatch.setenv("PROPAGATOR_BACKEND", "euler")
    assert app.main(["verify", "--config", scenario_file(CONSTANT)]) == 2


def test_simulate_on_constant_path(scenario_file, tmp_path):
    config = scenario_file(CONSTANT)
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    assert app.main(["simulate", "--config", config, "--output", str(first)]) == 0
    assert app.main(["simulate", "--config", config, "--output", str(second)]) == 0
    assert first.read_bytes() == second.read_bytes()
    assert first.read_bytes().startswith(b"t,quantity,value\n")

    df = pd.read_csv(first)
    assert len(df) == 11 * 8
    residuals = df[df["quantity"] != "norm"]
    assert residuals["value"].abs().max() <= 1e-12
    norms = df[df["quantity"] == "norm"]["value"]
    assert norms.max() - norms.min() <= 1e-12


def test_simulate_needs_an_output(scenario_file):
    assert app.main(["simulate", "--config", scenario_file(CONSTANT)]) == 2


def test_dump_config_round_trips(scenario_file, capsys):
    config = scenario_file(CONSTANT)
    assert app.main(["simulate", "--dump-config", "--config", config]) == 0
    dumped = capsys.readouterr().out
    assert parse_scenario(dumped) == load_scenario(config)


def test_seed_override(scenario_file, capsys):
    assert app.main(["verify", "--dump-config", "--seed", "99", "--config", scenario_file(CONSTANT)]) == 0
    assert "seed = 99" in capsys.readouterr().out


def test_estimate_constants_on_constant_path(scenario_file, capsys):
    assert app.main(["estimate-constants", "--config", scenario_file(CONSTANT)]) == 0
    values = dict(line.split() for line in capsys.readouterr().out.splitlines())
    assert float(values["C_J_empirical"]) == 0.0
    assert float(values["C_J_bound"]) == 0.0
    assert float(values["K_J"]) == 0.0


def test_verify_and_compare_on_constant_path(scenario_file, tmp_path, capsys):
    config = scenario_file(CONSTANT)
    report = tmp_path / "reports.csv"
    assert app.main(["verify", "--config", config, "--output", str(report)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(" fail " not in line for line in lines)
    table = pd.read_csv(report)
    assert list(table.columns) == ["name", "status", "residual", "threshold", "context"]
    assert "fail" not in set(table["status"])

    assert app.main(["compare-propagators", "--config", config]) == 0
    assert all(line.startswith("omega_vs_g_") for line in capsys.readouterr().out.splitlines())


def test_shipped_dump_is_stable():
    scenario = load_scenario(os.path.join(SCENARIO_DIR, "rotation_m2.ini"))
    assert parse_scenario(dump_scenario(scenario)) == scenario


@pytest.mark.slow
def test_estimate_constants_on_m2_rotation(capsys):
    assert app.main(["estimate-constants", "--config", os.path.join(SCENARIO_DIR, "rotation_m2.ini")]) == 0
    values = dict(line.split() for line in capsys.readouterr().out.splitlines())
    assert float(values["C_J_empirical"]) == pytest.approx(4.0, rel=1e-6)
    assert float(values["C_J_bound"]) == pytest.approx(16.0)
    assert float(values["square_summable_constant"]) == pytest.approx(2.0)


@pytest.mark.slow
def test_failing_scenario_exits_with_one():
    config = os.path.join(SCENARIO_DIR, "failing", "coarse_step_m2.ini")
    assert app.main(["verify", "--config", config]) == 1


def test_atol_comes_from_the_environment(monkeypatch, scenario_file, capsys):
    skewed = CONSTANT.replace("generator = zero", "generator = matrix\nentries = 0, -1, 0; 1, 0, 0; 0, 0, 1e-7")
    config = scenario_file(skewed)
    assert app.main(["estimate-constants", "--config", config]) == 2
    assert "anti-Hermitian" in capsys.readouterr().err

    monkeypatch.setenv("PROPAGATOR_ATOL", "1e-05")
    app.get_settings.cache_clear()
    assert load_scenario(config).atol == 1e-5
    assert app.main(["simulate", "--dump-config", "--config", config]) == 0
    assert "atol = 1e-05" in capsys.readouterr().out
    assert app.main(["estimate-constants", "--config", config]) == 0


@pytest.mark.slow
def test_simulate_on_m2_rotation(tmp_path):
    output = tmp_path / "m2.csv"
    assert app.main(["simulate", "--config", os.path.join(SCENARIO_DIR, "rotation_m2.ini"), "--output", str(output)]) == 0
    df = pd.read_csv(output)
    assert len(df) == 1001 * 8
    assert df["t"].nunique() == 1001 and df["quantity"].nunique() == 8


@pytest.mark.slow
@pytest.mark.parametrize("name, global_agreement", [("rotation_m2.ini", True), ("three_block_m3.ini", False)])
def test_compare_propagators_on_shipped_scenarios(name, global_agreement, capsys):
    assert app.main(["compare-propagators", "--config", os.path.join(SCENARIO_DIR, name)]) == 0
    rows = [line.split() for line in capsys.readouterr().out.splitlines()]
    on_b0 = [row for row in rows if row[0].startswith("omega_vs_g_on_b0")]
    global_ = [row for row in rows if row[0].startswith("omega_vs_g_global")]
    assert on_b0 and all(row[1] == "pass" for row in on_b0)
    assert global_ and all(row[1] == "info" for row in global_)
    gaps = [float(row[2]) for row in global_]
    if global_agreement:
        assert max(gaps) < 1e-7
    else:
        assert max(gaps) > 1e-6
