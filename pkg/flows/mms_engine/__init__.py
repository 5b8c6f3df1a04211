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

import math
from typing import TYPE_CHECKING

from classes.errors import StepError
from classes.report import CheckOutcome, RunReport
from classes.runner import Command, Runner, Suite, handler
from flows.mms_engine.ledger import apriori_check, ede_ledger, monotone_proximity_check, slope_bound_check
from flows.mms_engine.problem import DiscreteSolution
from flows.mms_engine.scheme import mm_step, refine_study

if TYPE_CHECKING:
    from classes.scenario import Scenario

__all__ = ("MinimizingMovement", "scheme_checks", "setup")

ORDER_SLACK = 0.3


def scheme_checks(solution: DiscreteSolution) -> list[CheckOutcome]:
    """A-priori, proximity and slope checks, plus the EDE ledger when interpolants were cached."""
    apriori = apriori_check(solution)
    proximity = monotone_proximity_check(solution)
    slopes = slope_bound_check(solution)
    checks = [
        CheckOutcome.from_report(
            "apriori",
            "E <= E_0 + L*T and sum d^2/2h <= E_0 - inf E + L*T",
            apriori,
            max(apriori.energy_peak - apriori.energy_bound, apriori.dissipation - apriori.dissipation_bound),
        ),
        CheckOutcome.from_report(
            "monotone-proximity",
            "d^2(x_r1, x_prev) <= d^2(x_r2, x_prev) + 4 r1 r2 L*",
            proximity,
            proximity.worst_excess,
        ),
        CheckOutcome.from_report(
            "slope-bound", "Dsp_n = d(x_n, x_prev)/h, Dsl finite", slopes, slopes.worst_slope_excess
        ),
    ]
    if solution.interpolants:
        ledger = ede_ledger(solution)
        checks.append(
            CheckOutcome.upper(
                "ede-ledger",
                "|E_N + 1/2 int Dsp^2 + 1/2 int Dsl^2 - E_0 - int dE| <= budget",
                ledger.cumulative_residual,
                ledger.budget,
            )
        )
    return checks


class MinimizingMovement(Suite):
    """Refinement studies and step checks shared by every flow with a minimizing-movement problem."""

    def _table_checks(self, scenario: Scenario, order_band: bool) -> RunReport:
        problem = scenario.step_problem()
        grid = scenario.grid
        table = refine_study(
            problem,
            scenario.initial_point(),
            grid.h_list,
            T=grid.T,
            label=f"{scenario.flow}-refine",
        )
        fitted = table.fitted_order if table.fitted_order is not None else math.nan
        if order_band:
            gap = abs(fitted - 1.0) if math.isfinite(fitted) else math.inf
            check = CheckOutcome.upper("observed-order", "|fitted order - 1| <= 0.3", gap, ORDER_SLACK)
        else:
            check = CheckOutcome("observed-order", "fitted order is finite", math.isfinite(fitted), fitted, 0.0)
        self.runner.log.info("Refinement of %s: fitted order %.3f", scenario.name, fitted)
        return self.runner.report(scenario, checks=[check], tables=[table], values={"fitted_order": fitted})

    @handler(Command.Convergence, "graph-heat", "quadratic-hilbert")
    def linear_convergence(self, scenario: Scenario) -> RunReport:
        return self._table_checks(scenario, order_band=True)

    @handler(Command.Convergence, "entropy-jko")
    def entropy_convergence(self, scenario: Scenario) -> RunReport:
        return self._table_checks(scenario, order_band=False)

    @handler(Command.Validate, "graph-heat", "quadratic-hilbert", "entropy-jko", "identify")
    def step_descent(self, scenario: Scenario) -> list[CheckOutcome]:
        """One step from the initial point must not raise the proximal objective."""
        problem = scenario.step_problem()
        h = scenario.grid.h
        try:
            _, info = mm_step(problem, scenario.initial_point(), 0.0, h)
        except StepError as e:
            self.runner.log.warning("First step of %s failed: %s", scenario.name, e)
            excess = e.residual if e.residual is not None else math.inf
            return [CheckOutcome("step-descent", "E_h(x_1) + d^2/2h <= E_h(x_0)", False, excess, problem.tol)]
        return [
            CheckOutcome.upper(
                "step-descent",
                "E_h(x_1) + d^2/2h <= E_h(x_0)",
                info.objective - info.start_objective,
                problem.tol + 1e-12 * abs(info.start_objective),
            )
        ]


def setup(runner: Runner) -> None:
    """Load the suite

    Parameters
    ----------
    runner : Runner
        Runner instance
    """
    runner.add_suite(MinimizingMovement(runner))
