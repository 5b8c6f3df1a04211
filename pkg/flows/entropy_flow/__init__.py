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
from typing import TYPE_CHECKING, Sequence

import numpy as np

from classes.report import CheckOutcome, ConvergenceTable, RunReport
from classes.runner import Command, Runner, Suite, handler
from flows.entropy_flow.diagnostics import backend_agreement, ede_report
from flows.entropy_flow.identify import FlowComparison, gap_halving, identify_vs_adjoint_heat
from flows.entropy_flow.jko import jko_run, jko_step
from flows.mms_engine import scheme_checks

if TYPE_CHECKING:
    from classes.scenario import Scenario

__all__ = ("EntropyFlow", "setup")

MASS_TOL = 1e-10
FORM_TOL = 1e-12
AGREEMENT_TOL = 1e-5
AGREEMENT_INSTANCES = 25


class EntropyFlow(Suite):
    """Dynamic JKO flows of the relative entropy and their identification with the forward adjoint heat flow."""

    @handler(Command.Run, "entropy-jko")
    def entropy_jko(self, scenario: Scenario) -> RunReport:
        problem = scenario.jko_problem()
        functional = problem.functional
        grid = scenario.time_grid()
        solution = jko_run(
            scenario.initial_measure(),
            grid,
            problem,
            interp_nodes_per_step=scenario.solver.quadrature_nodes,
        )

        times = [float(t) for t in solution.times]
        states = [np.asarray(mu, dtype=float) for mu in solution.states]
        masses = [float(mu.sum()) for mu in states]
        forms = [
            abs(functional.relative_entropy(mu, t) - functional.split_entropy(mu, t)) for t, mu in zip(times, states)
        ]
        descent = max((d.objective - d.start_objective for d in solution.diagnostics), default=0.0)
        slack = problem.tol + FORM_TOL * max(1.0, *(abs(e) for e in solution.energies))
        checks = [
            CheckOutcome.upper("mass", "sum mu_n = 1", max(abs(m - 1.0) for m in masses), MASS_TOL),
            CheckOutcome.upper("step-descent", "S(mu_n) + W^2/2h <= S(mu_prev)", descent, slack),
            CheckOutcome.upper(
                "entropy-lower-bound",
                "S_t >= -C - log sum m",
                functional.lower_bound - min(solution.energies),
                FORM_TOL,
            ),
            CheckOutcome.upper("entropy-forms", "Ent(mu|m_t) = Ent(mu|m) + sum f_t mu", max(forms), FORM_TOL),
        ]
        if problem.measure.lipschitz == 0:
            rise = max((b - a for a, b in zip(solution.energies, solution.energies[1:])), default=0.0)
            checks.append(CheckOutcome.upper("entropy-monotone", "S(mu_n) <= S(mu_prev)", rise, slack))
        checks.extend(scheme_checks(solution))

        values = {"final_entropy": solution.energies[-1]}
        geometry = scenario.geometry()
        if geometry is not None or solution.interpolants:
            ede = ede_report(solution, problem, geometry)
            values |= {
                f"ede_{ede.mode}_residual": ede.residual,
                "ede_half_speed": ede.half_speed,
                "ede_half_slope": ede.half_slope,
                "ede_drift": ede.drift,
            }

        return self.runner.report(
            scenario,
            times=times,
            series={
                "entropy": solution.energies,
                "speed2": [0.0, *(v**2 for v in solution.speeds)],
                "mass": masses,
                "equilibrium_gap": [float(np.abs(mu - functional.minimizer(t)).sum()) for t, mu in zip(times, states)],
            },
            checks=checks,
            values=values,
        )

    def _compare(self, scenario: Scenario, steps: Sequence[float]) -> list[FlowComparison]:
        geometry = scenario.geometry()
        measure = scenario.measure_family()
        return [
            identify_vs_adjoint_heat(
                geometry,
                measure,
                scenario.initial_density(),
                scenario.grid.T,
                h,
                backend=scenario.solver.backend,
            )
            for h in steps
        ]

    @staticmethod
    def _start_gap(scenario: Scenario) -> float:
        """Σ|μ_0 − m_0/|m_0||, the distance from the initial measure to the initial equilibrium."""
        m0 = scenario.measure_family().measure_at(0.0)
        return float(np.abs(scenario.initial_measure() - m0 / m0.sum()).sum())

    def _gap_check(self, scenario: Scenario, comparisons: Sequence[FlowComparison]) -> CheckOutcome:
        start = self._start_gap(scenario)
        worst = max(item.terminal_gap for item in comparisons)
        return CheckOutcome.upper(
            "identification-gap",
            "terminal |mu_JKO - mu_heat| below |mu_0 - m_0|",
            worst,
            start,
            ", ".join(f"h={item.h:g}: {item.terminal_gap:.3e}" for item in comparisons),
        )

    @staticmethod
    def _halving_check(comparisons: Sequence[FlowComparison]) -> CheckOutcome:
        halving = gap_halving(comparisons)
        return CheckOutcome.upper(
            "identification-order",
            "gap(h)/gap(h/2) = 2 +- 25%",
            halving.worst_deviation,
            halving.band,
            ", ".join(f"{ratio:.3f}" for ratio in halving.ratios),
        )

    @handler(Command.Run, "identify")
    def identify(self, scenario: Scenario) -> RunReport:
        (comparison,) = self._compare(scenario, [scenario.grid.h])
        return self.runner.report(
            scenario,
            times=comparison.times,
            series={"l1_gap": comparison.l1_gaps, "w_gap": comparison.w_gaps},
            checks=[self._gap_check(scenario, [comparison])],
            values={"terminal_gap": comparison.terminal_gap, "start_gap": self._start_gap(scenario)},
        )

    @handler(Command.Compare, "identify")
    def compare(self, scenario: Scenario) -> RunReport:
        """Identification at h and h/2."""
        h = scenario.grid.h
        coarse, fine = self._compare(scenario, [h, h / 2])
        ratio = coarse.terminal_gap / fine.terminal_gap if fine.terminal_gap > 0 else math.nan
        self.runner.log.info("Identification of %s: gap ratio %.3f under halving", scenario.name, ratio)
        return self.runner.report(
            scenario,
            times=coarse.times,
            series={"l1_gap": coarse.l1_gaps, "w_gap": coarse.w_gaps},
            traces={"l1_gap_halved": (fine.times, fine.l1_gaps)},
            checks=[self._gap_check(scenario, [coarse, fine]), self._halving_check([coarse, fine])],
            tables=[
                ConvergenceTable.from_errors(
                    "identification", [coarse.h, fine.h], [coarse.terminal_gap, fine.terminal_gap]
                )
            ],
            values={"gap_ratio": ratio, "start_gap": self._start_gap(scenario)},
        )

    @handler(Command.Convergence, "identify")
    def identify_convergence(self, scenario: Scenario) -> RunReport:
        comparisons = self._compare(scenario, scenario.grid.h_list)
        table = ConvergenceTable.from_errors(
            "identification",
            [item.h for item in comparisons],
            [item.terminal_gap for item in comparisons],
        )
        fitted = table.fitted_order if table.fitted_order is not None else math.nan
        return self.runner.report(
            scenario,
            checks=[self._gap_check(scenario, comparisons), self._halving_check(comparisons)],
            tables=[table],
            values={"fitted_order": fitted, "start_gap": self._start_gap(scenario)},
        )

    @handler(Command.Validate, "entropy-jko")
    def solver_checks(self, scenario: Scenario) -> list[CheckOutcome]:
        """Backend agreement on seeded instances and the equilibrium as a fixed point of one step."""
        h = scenario.grid.h
        agreement = backend_agreement(instances=AGREEMENT_INSTANCES, h=h, seed=scenario.seed, tol=AGREEMENT_TOL)

        problem = scenario.jko_problem()
        equilibrium = problem.functional.minimizer(h)
        moved = float(np.abs(jko_step(equilibrium, h, h, problem) - equilibrium).sum())
        return [
            CheckOutcome.upper(
                "backend-agreement",
                "|objective(exact-small) - objective(scaling)| <= 1e-5",
                agreement.worst_gap,
                agreement.tol,
                f"{len(agreement.exact)} instances",
            ),
            CheckOutcome.upper("equilibrium-fixed-point", "step from m_t/|m_t| stays there", moved, FORM_TOL),
        ]


def setup(runner: Runner) -> None:
    """Load the suite

    Parameters
    ----------
    runner : Runner
        Runner instance
    """
    runner.add_suite(EntropyFlow(runner))
