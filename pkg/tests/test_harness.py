# Copyright 2024 Vioshim
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.


from __future__ import annotations

import asyncio
from pathlib import Path

import pytest

from classes.errors import ConfigLoadError
from classes.report import (
    CheckOutcome,
    ConvergenceTable,
    OutputFormat,
    Provenance,
    RunReport,
    emit,
    load_report,
)
from classes.scenario import FlowKind, SpaceKind, parse_config, parse_mapping
from main import EXIT_CONFIG, EXIT_OK, execute_file, main, summarize


def _report(**kwargs) -> RunReport:
    return RunReport(scenario="sample", flow="graph-heat", provenance=Provenance(config_hash="0" * 64), **kwargs)


def test_defaults_are_materialized():
    scenario = parse_mapping({})
    assert scenario.name == "scenario"
    assert scenario.flow == FlowKind.EntropyJko
    assert scenario.space.kind == SpaceKind.TwoPoint
    assert scenario.grid.T == 1.0
    assert scenario.time_grid().steps == 10


def test_name_defaults_to_file_stem(write_config):
    path = write_config(
        """
        flow = "entropy-jko"
        [space]
        kind = "two-point"
        """,
        name="tiny",
    )
    assert parse_config(path).name == "tiny"


@pytest.mark.parametrize(
    "text, key",
    [
        ("[grid]\nh = -0.1\n", "grid.h"),
        ("[grid]\nh = 0.3\n", "grid.h"),
        ("[grid]\nh_list = [0.1, 0.2, 0.05]\n", "grid.h_list"),
        ("[space]\nkind = \"sphere\"\n", "space.kind"),
        ("[space]\nkind = \"path\"\nsize = 4\n[initial]\npoint = 7\n", "initial.point"),
        ("seed = \"x\"\n", "seed"),
        ("flow = \"quadratic-hilbert\"\n", "flow"),
    ],
)
def test_invalid_values_name_their_key(write_config, text, key):
    with pytest.raises(ConfigLoadError) as info:
        parse_config(write_config(text))
    assert info.value.key == key


def test_unknown_key_suggestion(write_config):
    with pytest.raises(ConfigLoadError) as info:
        parse_config(write_config("[grd]\nh = 0.1\n"))
    assert info.value.key == "grd"
    assert "did you mean 'grid'?" in str(info.value)


def test_unreadable_files(tmp_path):
    with pytest.raises(ConfigLoadError):
        parse_config(tmp_path / "missing.toml")

    broken = tmp_path / "broken.toml"
    broken.write_text("[grid\n", encoding="utf-8")
    with pytest.raises(ConfigLoadError):
        parse_config(broken)


def test_echo_round_trip(scenarios, tmp_path):
    for path in sorted(scenarios.glob("*.toml")):
        scenario = parse_config(path)
        echo = tmp_path / f"{scenario.name}.json"
        echo.write_text(scenario.echo(), encoding="utf-8")
        again = parse_config(echo)
        assert again == scenario
        assert again.config_hash == scenario.config_hash


def test_series_must_match_times():
    with pytest.raises(ValueError):
        _report(times=(0.0, 1.0), series={"energy": (1.0,)})


def test_header_only_csv(tmp_path):
    files = emit(_report(), OutputFormat.CSV, tmp_path)
    assert files[0].read_text(encoding="utf-8") == "t\n"
    assert files[1].read_text(encoding="utf-8") == "name,invariant,ok,worst,tol\n"


def test_csv_is_deterministic(tmp_path):
    report = _report(
        times=(0.0, 0.5, 1.0),
        series={"energy": (1.0, 0.5, 0.25), "mass": (1.0, 1.0, 1.0)},
        checks=(CheckOutcome.upper("mass", "mass is conserved", 1e-15, 1e-12),),
        tables=(ConvergenceTable.from_errors("refine", [0.1, 0.05, 0.025], [0.2, 0.1, 0.05]),),
    )
    first = [p.read_bytes() for p in emit(report, OutputFormat.CSV, tmp_path / "a")]
    second = [p.read_bytes() for p in emit(report, OutputFormat.CSV, tmp_path / "b")]
    assert first == second
    assert first[0].decode().splitlines()[1] == "0,1,1"
    assert first[1].decode().splitlines()[1].startswith("mass,mass is conserved,true,")


def test_json_round_trip(tmp_path):
    report = _report(
        times=(0.0, 0.1),
        series={"energy": (0.5, 0.25)},
        traces={"speed": ((0.05,), (2.0,))},
        checks=(CheckOutcome.upper("speed", "bounded speed", 3.0, 1.0),),
        tables=(ConvergenceTable.from_errors("refine", [0.1, 0.05, 0.025], [0.2, 0.1, 0.05]),),
        values={"checks": 1.0},
    )
    (path,) = emit(report, OutputFormat.JSON, tmp_path)
    loaded = load_report(path)
    assert loaded == report
    assert not loaded.ok
    assert [c.name for c in loaded.failed] == ["speed"]


def test_convergence_table_orders():
    table = ConvergenceTable.from_errors("refine", [0.1, 0.05, 0.025], [0.2, 0.1, 0.05])
    assert table.rows[0].order is None
    assert table.rows[1].order == pytest.approx(1.0)
    assert table.fitted_order == pytest.approx(1.0)


def test_suites_are_registered(runner):
    assert set(runner.suites) == {"Transport", "MinimizingMovement", "DirichletFlow", "EntropyFlow"}


def test_convergence_needs_three_steps(runner, scenarios):
    scenario = parse_config(scenarios / "two_point_heat.toml")
    with pytest.raises(ConfigLoadError) as info:
        runner.convergence(scenario)
    assert info.value.key == "grid.h_list"


def test_two_point_heat_passes(runner, scenarios):
    scenario = parse_config(scenarios / "two_point_heat.toml")
    assert runner.validate(scenario).ok
    report = runner.run(scenario)
    assert report.checks
    assert report.ok, [c.name for c in report.failed]


def test_execute_file_exit_codes(write_config, scenarios, tmp_path):
    out = tmp_path / "out"
    path, code = execute_file("run", str(scenarios / "two_point_heat.toml"), str(out))
    assert code == EXIT_OK
    assert (out / "two_point_heat" / "two_point_heat.csv").is_file()
    assert (out / "two_point_heat" / "scenario.json").is_file()

    _, code = execute_file("run", str(write_config("[grid]\nh = -1.0\n", name="bad")), str(out))
    assert code == EXIT_CONFIG


def test_cli_round_trip(scenarios, tmp_path, capsys):
    out = tmp_path / "out"
    config = str(scenarios / "two_point_heat.toml")
    assert asyncio.run(main(["run", config, "--out", str(out), "--format", "json"])) == EXIT_OK

    assert summarize(out / "two_point_heat") == EXIT_OK
    assert "two_point_heat (graph-heat)" in capsys.readouterr().out
    assert summarize(tmp_path / "nowhere") == EXIT_CONFIG


SCENARIO_FILES = sorted((Path(__file__).resolve().parent.parent / "scenarios").glob("*.toml"))


@pytest.mark.slow
@pytest.mark.parametrize("path", SCENARIO_FILES, ids=lambda path: path.stem)
def test_shipped_scenarios_pass(runner, path):
    report = runner.run(parse_config(path))
    assert report.checks
    assert report.ok, [(c.name, c.worst, c.tol) for c in report.failed]


@pytest.mark.slow
@pytest.mark.parametrize("name", ["torus64_kuwada", "torus64_scaled_kuwada"])
def test_kuwada_scenarios(runner, scenarios, name):
    report = runner.run(parse_config(scenarios / f"{name}.toml"))
    (kuwada,) = [c for c in report.checks if c.name == "kuwada"]
    assert kuwada.ok, (kuwada.worst, kuwada.tol)
    assert len(report.traces["speed2"][0]) == 10
