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

import importlib
from dataclasses import replace
from enum import StrEnum
from logging import Logger, getLogger
from pathlib import Path, PurePath
from typing import TYPE_CHECKING, Any, Callable, Mapping, Optional, Sequence

from classes.errors import ConfigLoadError
from classes.report import CheckOutcome, ConvergenceTable, OutputFormat, Provenance, RunReport, emit
from classes.space import validate_metric

if TYPE_CHECKING:
    from classes.scenario import Scenario

__all__ = ("Command", "Suite", "Runner", "handler")

ROOT = Path(__file__).resolve().parent.parent
ANY_FLOW = "*"

Handler = Callable[["Scenario"], Any]


class Command(StrEnum):
    Validate = "validate"
    Run = "run"
    Convergence = "convergence"
    Compare = "compare"


def handler(command: Command, *flows: str):
    """Mark a suite method as the handler of `command` for the given flows ("*" for all of them)."""

    def decorator(func: Callable) -> Callable:
        routes = getattr(func, "__routes__", [])
        func.__routes__ = [*routes, *((command, str(flow)) for flow in flows)]
        return func

    return decorator


class Suite:
    """Group of handlers one flow package contributes to the runner."""

    def __init__(self, runner: Runner) -> None:
        """Initialize the suite

        Parameters
        ----------
        runner : Runner
            Runner instance
        """
        self.runner = runner

    def routes(self) -> list[tuple[Command, str, Handler]]:
        items = []
        for name in dir(type(self)):
            func = getattr(type(self), name)
            for command, flow in getattr(func, "__routes__", ()):
                items.append((command, flow, getattr(self, name)))
        return items


class Runner:
    def __init__(
        self,
        log: Logger,
        out: Path | str = "out",
        format: OutputFormat | str = OutputFormat.CSV,
        seed: Optional[int] = None,
    ) -> None:
        self.log = log
        self.out = Path(out)
        self.format = OutputFormat(format)
        self.seed = seed
        self.handlers: dict[tuple[Command, str], list[Handler]] = {}
        self.suites: dict[str, Suite] = {}

    def add_suite(self, suite: Suite) -> None:
        name = type(suite).__name__
        if name in self.suites:
            self.log.warning("Suite %s was already registered, replacing it", name)
        self.suites[name] = suite
        for command, flow, func in suite.routes():
            self.handlers.setdefault((command, flow), []).append(func)

    def load_suites(self, path: Path | str = ROOT / "flows") -> None:
        """Import every flow package under `path` and let its `setup(runner)` register the suites."""
        path = Path(path)
        for item in map(PurePath, sorted(path.glob("*/__init__.py"))):
            route = ".".join(item.relative_to(path.parent).parts[:-1])
            try:
                module = importlib.import_module(route)
                module.setup(self)
            except Exception as e:
                self.log.exception(
                    "Exception while loading %s",
                    route,
                    exc_info=e,
                )
            else:
                self.log.info(
                    "Successfully loaded %s",
                    route,
                )

    def prepare(self, scenario: Scenario) -> Scenario:
        """Apply the command-line seed override."""
        return scenario if self.seed is None else replace(scenario, seed=self.seed)

    def report(
        self,
        scenario: Scenario,
        times: Sequence[float] = (),
        series: Optional[Mapping[str, Sequence[float]]] = None,
        checks: Sequence[CheckOutcome] = (),
        tables: Sequence[ConvergenceTable] = (),
        traces: Optional[Mapping[str, tuple[Sequence[float], Sequence[float]]]] = None,
        values: Optional[Mapping[str, float]] = None,
    ) -> RunReport:
        """Assemble a RunReport with the provenance of `scenario`."""
        return RunReport(
            scenario=scenario.name,
            flow=str(scenario.flow),
            provenance=Provenance(config_hash=scenario.config_hash),
            times=tuple(float(t) for t in times),
            series={k: tuple(float(x) for x in v) for k, v in (series or {}).items()},
            traces={k: (tuple(map(float, t)), tuple(map(float, v))) for k, (t, v) in (traces or {}).items()},
            checks=tuple(checks),
            tables=tuple(tables),
            values={k: float(v) for k, v in (values or {}).items()},
        )

    def _handlers(self, command: Command, scenario: Scenario) -> list[Handler]:
        return self.handlers.get((command, str(scenario.flow)), [])

    def _space_checks(self, scenario: Scenario) -> list[CheckOutcome]:
        if not scenario.finite:
            return []

        metric = validate_metric(scenario.distances())
        worst = max((v.excess for v in metric.violations), default=0.0)
        nodes = scenario.time_grid().nodes
        measure = scenario.measure_family().check(nodes)
        family = scenario.metric_family()
        estimate = family.estimate_log_lipschitz(nodes)
        return [
            CheckOutcome(
                "metric-axioms", "distance tables are metrics", metric.ok, worst, 1e-9, f"{len(metric.violations)}"
            ),
            CheckOutcome.upper(
                "measure-bound",
                "|f_t| <= C and |f_t - f_s| <= L*|t - s|",
                max(measure.bound_excess, measure.lipschitz_excess),
                measure.tol,
            ),
            CheckOutcome.upper(
                "metric-loglip",
                "|log d_t - log d_s| <= L|t - s|",
                estimate - family.lipschitz,
                1e-9 * max(1.0, family.lipschitz),
            ),
        ]

    def validate(self, scenario: Scenario) -> RunReport:
        """Space checks plus every validation handler of the flow and the wildcard."""
        scenario = self.prepare(scenario)
        checks = self._space_checks(scenario)
        for func in [*self._handlers(Command.Validate, scenario), *self.handlers.get((Command.Validate, ANY_FLOW), [])]:
            checks.extend(func(scenario))
        return self.report(scenario, checks=checks, values={"checks": len(checks)})

    def _dispatch(self, command: Command, scenario: Scenario) -> RunReport:
        scenario = self.prepare(scenario)
        funcs = self._handlers(command, scenario)
        if not funcs:
            raise ConfigLoadError("flow", f"{command} is not available for flow {scenario.flow}")
        self.log.info("Starting %s of %s (%s)", command, scenario.name, scenario.flow)
        report = funcs[0](scenario)
        if report.failed:
            for item in report.failed:
                self.log.warning("Check %s failed: worst %.6g against %.6g", item.name, item.worst, item.tol)
        self.log.info("Finished %s of %s: %d/%d checks pass", command, scenario.name, *self._tally(report))
        return report

    @staticmethod
    def _tally(report: RunReport) -> tuple[int, int]:
        return sum(item.ok for item in report.checks), len(report.checks)

    def run(self, scenario: Scenario) -> RunReport:
        return self._dispatch(Command.Run, scenario)

    def convergence(self, scenario: Scenario) -> RunReport:
        if len(scenario.grid.h_list) < 3:
            raise ConfigLoadError("grid.h_list", "a convergence study needs at least three step sizes")
        return self._dispatch(Command.Convergence, scenario)

    def compare(self, scenario: Scenario) -> RunReport:
        return self._dispatch(Command.Compare, scenario)

    def execute(self, command: Command | str, scenario: Scenario) -> RunReport:
        match Command(command):
            case Command.Validate:
                return self.validate(scenario)
            case Command.Run:
                return self.run(scenario)
            case Command.Convergence:
                return self.convergence(scenario)
            case Command.Compare:
                return self.compare(scenario)

    def write(self, report: RunReport, scenario: Scenario) -> list[Path]:
        """Emit `report` into `<out>/<scenario>/` next to the JSON echo of the scenario."""
        directory = self.out / scenario.name
        files = emit(report, self.format, directory)
        echo = directory / "scenario.json"
        echo.write_text(scenario.echo() + "\n", encoding="utf-8")
        return [*files, echo]
