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
from dataclasses import replace
from typing import TYPE_CHECKING

import numpy as np

from classes.report import CheckOutcome, ConvergenceTable, RunReport
from classes.runner import Command, Runner, Suite, handler
from flows.dirichlet_flow.checks import (
    MACHINE_TOL,
    contraction_check,
    dissipation_refinement,
    entropy_dissipation_check,
    evi_residual,
    jko_equivalence_check,
    maximum_principle_check,
    subdifferential_residual,
)
from flows.dirichlet_flow.form import (
    AdjointMode,
    AdjointTrajectory,
    HeatScheme,
    adjoint_propagator,
    dirichlet_problem,
    forward_adjoint_flow,
    heat_flow,
)
from flows.dirichlet_flow.hilbert import HilbertKind, quadratic_testbed_run
from flows.entropy_flow.diagnostics import kuwada_check
from flows.mms_engine import scheme_checks
from flows.mms_engine.scheme import run_scheme

if TYPE_CHECKING:
    from classes.scenario import Scenario

__all__ = ("DirichletFlow", "setup")

ALGEBRA_TOL = 1e-10
ENDPOINT_TOL = 5e-3
ORDER_SLACK = 0.3


def scalar_endpoint(T: float) -> float:
    """x_T = ½e^{−2T} + T − ½ for E_t(x) = (x − t)² from x_0 = 0."""
    return 0.5 * math.exp(-2.0 * T) + T - 0.5


def _linear_checks(solution, structure, scenario: Scenario) -> list[CheckOutcome]:
    checks = scenario.checks
    subdifferential = subdifferential_residual(solution, structure, tol=ALGEBRA_TOL)
    evi = evi_residual(solution, structure, trials=checks.trials, seed=scenario.seed, tol=ALGEBRA_TOL)
    contraction = contraction_check(
        structure,
        scenario.initial_point(),
        scenario.partner_state(),
        solution.grid,
        slack=checks.envelope_slack,
    )
    return [
        CheckOutcome.from_report(
            "contraction",
            "|u_t - v_t|^2_t <= e^{2Lt}|u_0 - v_0|^2_0 + slack*h*|u_0 - v_0|^2_0",
            contraction,
            contraction.worst_excess,
        ),
        CheckOutcome.upper(
            "subdifferential",
            "M(u_n - u_prev)/h + grad E(u_n) = 0",
            subdifferential.worst,
            subdifferential.tol,
        ),
        CheckOutcome.upper("evi", "<(u_n - u_prev)/h, u_n - y> + E(u_n) - E(y) <= 0", evi.worst, evi.tol),
    ]


def _entropy(trajectory: AdjointTrajectory) -> list[float]:
    values = []
    for k, rho in enumerate(trajectory.densities):
        m = trajectory.form.masses(trajectory.times[k])
        positive = rho > 0
        values.append(float(np.sum(rho[positive] * np.log(rho[positive]) * m[positive])))
    return values


class DirichletFlow(Suite):
    """Heat flows of time-dependent Dirichlet forms, their adjoints and the quadratic Hilbert testbed."""

    @handler(Command.Run, "graph-heat")
    def graph_heat(self, scenario: Scenario) -> RunReport:
        form = scenario.graph_form()
        grid = scenario.time_grid()
        u0 = scenario.initial_function()

        states, _ = heat_flow(u0, grid, form, scenario.solver.scheme)
        _, P = heat_flow(u0, grid, form, HeatScheme.ImplicitEuler)
        middle = float(grid.nodes[grid.steps // 2])
        _, head = heat_flow(u0, grid, form, t=middle)
        _, tail = heat_flow(u0, grid, form, s=middle)
        composition = float(np.abs(tail.compose(head).matrix() - P.matrix()).max())

        rng = np.random.default_rng(scenario.seed)
        u, v = rng.uniform(-1.0, 1.0, size=(2, form.n))
        pairing = P.pairing_gap(adjoint_propagator(P), u, v)
        principle = maximum_principle_check(P, trials=scenario.checks.trials, seed=scenario.seed, tol=ALGEBRA_TOL)
        equivalence = jko_equivalence_check(form, u0, grid, tol=ALGEBRA_TOL)

        solution = run_scheme(
            dirichlet_problem(form, u0),
            u0,
            grid,
            interp_nodes_per_step=scenario.solver.quadrature_nodes,
        )
        checks = [
            CheckOutcome.upper("propagator-composition", "P_{t,r} P_{r,s} = P_{t,s}", composition, ALGEBRA_TOL),
            CheckOutcome.upper(
                "maximum-principle",
                "0 <= P u <= 1 for 0 <= u <= 1, P 1 = 1",
                principle.worst,
                principle.tol,
                f"{principle.trials} trials",
            ),
            CheckOutcome.upper("duality", "<P u, v>_{m_t} = <u, P* v>_{m_s}", pairing, ALGEBRA_TOL),
            CheckOutcome.upper(
                "jko-equivalence",
                "minimizing movement of the Dirichlet energy = implicit Euler heat steps",
                equivalence.max_gap,
                equivalence.tol,
            ),
            *_linear_checks(solution, form, scenario),
            *scheme_checks(solution),
        ]

        gaps = [float(np.abs(np.asarray(x) - y).max()) for x, y in zip(solution.states, states)]
        slopes = solution.interpolants
        return self.runner.report(
            scenario,
            times=grid.nodes,
            series={
                "energy": solution.energies,
                "speed2": [0.0, *(v**2 for v in solution.speeds)],
                "heat_gap": gaps,
                "weighted_mean": [float(form.masses(t) @ x) for t, x in zip(grid.nodes, states)],
            },
            traces={
                "slope2": (
                    [r for item in slopes for r in item.nodes],
                    [s**2 for s in solution.slope_series()],
                )
            },
            checks=checks,
            values={"final_energy": solution.energies[-1]},
        )

    @handler(Command.Run, "quadratic-hilbert")
    def quadratic_hilbert(self, scenario: Scenario) -> RunReport:
        problem = scenario.hilbert_problem()
        grid = scenario.time_grid()
        x0 = scenario.initial_state()

        states, oracle, testbed = quadratic_testbed_run(problem, x0, grid)
        solution = run_scheme(
            problem.as_problem(),
            x0,
            grid,
            interp_nodes_per_step=scenario.solver.quadrature_nodes,
        )
        order_gap = abs(testbed.observed_order - 1.0) if math.isfinite(testbed.observed_order) else math.inf
        checks = [
            CheckOutcome.upper("observed-order", "|log2(e_h / e_{h/2}) - 1| <= 0.3", order_gap, ORDER_SLACK),
            *_linear_checks(solution, problem, scenario),
            *scheme_checks(solution),
        ]
        values = {
            "sup_error": testbed.sup_error,
            "halved_error": testbed.halved_error,
            "observed_order": testbed.observed_order,
            "endpoint_norm": float(np.linalg.norm(testbed.endpoint)),
        }
        if problem.kind == HilbertKind.ScalarExample and not np.any(x0):
            expected = scalar_endpoint(grid.end)
            endpoint = float(testbed.endpoint[0])
            values |= {"endpoint": endpoint, "expected_endpoint": expected}
            checks.insert(
                0,
                CheckOutcome.upper(
                    "scalar-endpoint",
                    "|x_T - (e^{-2T}/2 + T - 1/2)| <= 5e-3",
                    abs(endpoint - expected),
                    ENDPOINT_TOL,
                ),
            )

        return self.runner.report(
            scenario,
            times=grid.nodes,
            series={
                "energy": solution.energies,
                "speed2": [0.0, *(v**2 for v in solution.speeds)],
                "oracle_gap": [problem.norm(float(t), x - y) for t, x, y in zip(grid.nodes, states, oracle)],
            },
            checks=checks,
            values=values,
        )

    @handler(Command.Run, "adjoint-forward")
    def adjoint_forward(self, scenario: Scenario) -> RunReport:
        form = scenario.graph_form()
        grid = scenario.time_grid()
        checks_spec = scenario.checks
        trajectory = forward_adjoint_flow(scenario.initial_density(), grid, form, scenario.solver.mode)

        masses = trajectory.masses()
        drift = max(abs(m - masses[0]) for m in masses)
        lowest = min(float(rho.min()) for rho in trajectory.densities)

        _, P = heat_flow(np.ones(form.n), grid, form)
        rng = np.random.default_rng(scenario.seed)
        u, v = rng.uniform(-1.0, 1.0, size=(2, form.n))
        pairing = P.pairing_gap(adjoint_propagator(P), u, v)

        checks = [
            CheckOutcome.upper("duality", "<P u, v>_{m_t} = <u, P* v>_{m_s}", pairing, ALGEBRA_TOL),
            CheckOutcome.upper("positivity", "rho_t >= 0", max(0.0, -lowest), MACHINE_TOL),
        ]
        if trajectory.mode == AdjointMode.Algebraic:
            checks.append(CheckOutcome.upper("mass", "sum rho_t m_t = sum rho_0 m_0", drift, ALGEBRA_TOL))

        values = {"mass_drift": drift}
        traces = {}
        if form.geometry is not None:
            dissipation = entropy_dissipation_check(trajectory)
            values["dissipation_residual"] = dissipation.max_relative
            traces["dissipation_relative"] = (dissipation.times, dissipation.relative_errors)

            kuwada = kuwada_check(trajectory, scenario.sample_times(), checks_spec.delta, checks_spec.slack)
            checks.append(
                CheckOutcome.from_report(
                    "kuwada",
                    f"|mu'|^2_t <= (1 + {checks_spec.slack:g}) I(rho_t)",
                    kuwada,
                    kuwada.worst_excess,
                    1e-12,
                )
            )
            traces["speed2"] = (kuwada.times, kuwada.speeds_squared)
            traces["fisher"] = (kuwada.times, kuwada.fisher)

        return self.runner.report(
            scenario,
            times=trajectory.times,
            series={"mass": masses, "entropy": _entropy(trajectory)},
            traces=traces,
            checks=checks,
            values=values,
        )

    @handler(Command.Convergence, "adjoint-forward")
    def adjoint_convergence(self, scenario: Scenario) -> RunReport:
        """Direct against algebraic forward-adjoint densities under step refinement."""
        form = scenario.graph_form()
        rho0 = scenario.initial_density()
        h_list = scenario.grid.h_list

        errors = []
        for h in h_list:
            grid = scenario.time_grid(h)
            algebraic = forward_adjoint_flow(rho0, grid, form, AdjointMode.Algebraic)
            direct = forward_adjoint_flow(rho0, grid, form, AdjointMode.DirectPde)
            gaps = [float(np.abs(algebraic.measure(k) - direct.measure(k)).sum()) for k in range(len(grid.nodes))]
            errors.append(max(gaps))
        table = ConvergenceTable.from_errors("direct-vs-algebraic", h_list, errors)

        if max(errors) <= ALGEBRA_TOL:
            order = CheckOutcome.upper(
                "observed-order", "static measures give identical flows", max(errors), ALGEBRA_TOL
            )
        else:
            fitted = table.fitted_order if table.fitted_order is not None else math.nan
            gap = abs(fitted - 1.0) if math.isfinite(fitted) else math.inf
            order = CheckOutcome.upper("observed-order", "|fitted order - 1| <= 0.3", gap, ORDER_SLACK)
        checks, tables = [order], [table]

        if form.geometry is not None:
            refinement = dissipation_refinement(
                lambda n: replace(scenario, space=replace(scenario.space, size=n)).graph_form(),
                lambda points: replace(scenario, space=replace(scenario.space, size=len(points))).initial_density(),
                n0=scenario.n,
                h0=scenario.grid.h,
                T=scenario.grid.T,
                levels=3,
            )
            residuals = refinement.residuals
            steps = [level.h for level in refinement.levels]
            tables.append(ConvergenceTable.from_errors("dissipation", steps, residuals))
            checks.append(
                CheckOutcome(
                    "dissipation-refinement",
                    "relative dissipation residual decreases under (h, dx) halving",
                    refinement.monotone,
                    residuals[-1],
                    residuals[0],
                )
            )

        return self.runner.report(scenario, checks=checks, tables=tables)


def setup(runner: Runner) -> None:
    """Load the suite

    Parameters
    ----------
    runner : Runner
        Runner instance
    """
    runner.add_suite(DirichletFlow(runner))
