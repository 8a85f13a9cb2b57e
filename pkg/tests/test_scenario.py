import glob
import os

import numpy as np
import pytest

from cli.scenario import load_scenario, with_overrides
from conftest import SCENARIOS, scenario_path
from utils.errors import ScenarioError

BASE = """
[symbol]
A = 0.5
{symbol}

[initial]
S0 = x^2/2
{initial}

[domain]
x_min = -1
x_max = 1
T = 1
h_t = {h_t}
"""


def write(tmp_path, symbol="", initial="", h_t="0.01", extra=""):
    path = tmp_path / "case.ini"
    path.write_text(BASE.format(symbol=symbol, initial=initial, h_t=h_t) + extra)
    return str(path)


@pytest.mark.parametrize("path", sorted(glob.glob(os.path.join(SCENARIOS, "*.ini"))))
def test_presets_load(path):
    scenario = load_scenario(path)
    assert scenario.name == os.path.splitext(os.path.basename(path))[0]
    assert scenario.model is not None


def test_preset_values():
    s = load_scenario(scenario_path("quadratic_jump_tunnel"))
    assert s.jumps == ((1.0, "exp(-x^2)"),)
    assert s.h_schedule == (0.2, 0.1, 0.05)
    assert s.compare_window == (-0.5, 0.5)
    assert len(s.x0_grid) == 1201


def test_defaults(tmp_path):
    s = load_scenario(write(tmp_path))
    assert s.V == "0"
    assert s.rho0_text == "1"
    assert s.a_field == "auto"
    assert s.x0_range == (-1.0, 1.0)
    assert s.levels == (5, 6, 7)


def test_phi0_is_squared(tmp_path):
    s = load_scenario(write(tmp_path, initial="phi0 = exp(-x^2)"))
    assert s.rho0(1.0) == pytest.approx(float(np.exp(-2.0)))
    with pytest.raises(ScenarioError):
        load_scenario(write(tmp_path, initial="phi0 = 1\nrho0 = 1"))


def test_malformed_expression_names_key_and_offset(tmp_path):
    with pytest.raises(ScenarioError) as err:
        load_scenario(write(tmp_path, symbol="V = x +* 2"))
    assert "symbol.V" in str(err.value)
    assert "offset 3" in str(err.value)


def test_unknown_identifier_and_variables(tmp_path):
    with pytest.raises(ScenarioError, match="initial.rho0"):
        load_scenario(write(tmp_path, initial="rho0 = exp(-y)"))
    with pytest.raises(ScenarioError, match="symbol.V"):
        load_scenario(write(tmp_path, symbol="V = t"))


def test_time_step_must_divide_horizon(tmp_path):
    with pytest.raises(ScenarioError, match="does not divide"):
        load_scenario(write(tmp_path, h_t="0.03"))


def test_unknown_section(tmp_path):
    with pytest.raises(ScenarioError, match="unknown section"):
        load_scenario(write(tmp_path, extra="\n[plots]\nkind = line\n"))


def test_jumps_parsing(tmp_path):
    s = load_scenario(write(tmp_path, symbol="jumps = 1 : 0.5; -2 : exp(-x^2)"))
    assert s.jumps == ((1.0, "0.5"), (-2.0, "exp(-x^2)"))
    with pytest.raises(ScenarioError, match="symbol.jumps"):
        load_scenario(write(tmp_path, symbol="jumps = 0 : 1"))


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_scenario(str(tmp_path / "nope.ini"))


def test_overrides(tmp_path):
    s = load_scenario(write(tmp_path))
    changed = with_overrides(s, out_dir=str(tmp_path / "out"), seed=9)
    assert changed.seed == 9
    assert changed.out_dir.endswith("out")
    assert with_overrides(s) is s


def test_bump_count_must_be_positive(tmp_path):
    with pytest.raises(ScenarioError, match="verify.bump_count"):
        load_scenario(write(tmp_path, extra="\n[verify]\nbump_count = 0\n"))


def test_limit_study_reference_time(tmp_path):
    assert load_scenario(write(tmp_path)).regularization["t_ref"] == 1.0
    s = load_scenario(write(tmp_path, extra="\n[regularization]\nepsilon = 1e-2\nt_ref = 0.5\n"))
    assert s.regularization["t_ref"] == 0.5
    with pytest.raises(ScenarioError, match="regularization.t_ref"):
        load_scenario(write(tmp_path, extra="\n[regularization]\nt_ref = 0\n"))
