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

import numpy as np
import pytest
from scipy.optimize import brentq

from classes.errors import ConvergenceError, DomainError, OrderingError, SchemeError, StepError
from classes.space import TimeGrid
from flows.mms_engine.ledger import apriori_check, ede_ledger, monotone_proximity_check, slope_bound_check
from flows.mms_engine.problem import scalar_quadratic_problem, zero_energy_problem
from flows.mms_engine.scheme import (
    GRADED_PANELS,
    interpolate_step,
    mm_step,
    refine_study,
    run_scheme,
    variational_interpolant,
)


def exact_scalar(t: float) -> float:
    return 0.5 * math.exp(-2 * t) + t - 0.5


@pytest.fixture
def scalar():
    return scalar_quadratic_problem()


@pytest.mark.parametrize("h", [0.5, 0.1, 1e-3])
def test_scalar_step_closed_form(scalar, h):
    x, info = mm_step(scalar, 0.2, 0.4, 0.4 + h)
    t_n = 0.4 + h
    # first-order condition 2(x − t) + (x − x_prev)/h = 0
    root = brentq(lambda y: 2 * (y - t_n) + (y - 0.2) / h, -10, 10, xtol=1e-15)
    assert x == pytest.approx(root, abs=1e-12)
    assert info.objective <= info.start_objective
    assert info.slope_bound == pytest.approx(abs(x - 0.2) / h)


def test_zero_energy_keeps_the_state():
    problem = zero_energy_problem()
    x0 = np.array([0.3, -1.0])
    solution = run_scheme(problem, x0, TimeGrid(T=1.0, h=0.25))

    assert solution.complete
    for state in solution.states:
        np.testing.assert_array_equal(state, x0)
    assert solution.speeds == (0.0,) * 4
    assert ede_ledger(solution).cumulative_residual == 0.0


def test_interpolant_at_step_end_is_the_step(scalar):
    x, _ = mm_step(scalar, 0.1, 0.2, 0.3)
    assert variational_interpolant(scalar, 0.1, 0.2, 0.3, 0.3) == pytest.approx(x)
    mid = variational_interpolant(scalar, 0.1, 0.2, 0.3, 0.25)
    assert mid == pytest.approx((0.1 + 2 * 0.05 * 0.25) / (1 + 2 * 0.05))

    with pytest.raises(DomainError):
        variational_interpolant(scalar, 0.1, 0.2, 0.3, 0.2)
    with pytest.raises(DomainError):
        mm_step(scalar, 0.1, 0.3, 0.3)


def test_scalar_endpoint(scalar):
    solution = run_scheme(scalar, 0.0, TimeGrid(T=1.0, h=1e-3), interp_nodes_per_step=0)
    assert solution.states[-1] == pytest.approx(0.56767, abs=5e-3)
    assert solution.at(0.5) == solution.states[500]


def test_ledger_on_scalar_problem(scalar):
    solution = run_scheme(scalar, 0.0, TimeGrid(T=1.0, h=1e-2))
    ledger = ede_ledger(solution)

    assert len(ledger.steps) == 100
    assert ledger.cumulative_residual <= 1e-4
    assert ledger.ok
    assert len(ledger.cumulative()) == 100


def test_ledger_needs_interpolants(scalar):
    solution = run_scheme(scalar, 0.0, TimeGrid(T=1.0, h=0.1), interp_nodes_per_step=0)
    with pytest.raises(DomainError):
        ede_ledger(solution)


@pytest.mark.parametrize("h", [0.1, 0.01])
def test_apriori_bounds(scalar, h):
    solution = run_scheme(scalar, 0.0, TimeGrid(T=1.0, h=h))
    report = apriori_check(solution)
    assert report.ok, report.violations
    assert report.energy_peak <= report.energy_bound
    assert math.isfinite(report.c3)

    assert monotone_proximity_check(solution).ok
    slopes = slope_bound_check(solution)
    assert slopes.ok, slopes.violations
    assert slopes.nodes == sum(len(cache.nodes) for cache in solution.interpolants)
    assert slopes.nodes >= 6 * GRADED_PANELS * solution.steps


def test_refine_study_against_exact_flow(scalar):
    table = refine_study(scalar, 0.0, [0.1, 0.05, 0.025], eval_times=[0.25, 0.5, 0.75, 1.0], reference=exact_scalar)
    errors = table.errors
    assert errors[0] > errors[1] > errors[2]
    assert table.fitted_order >= 0.9


def test_refine_study_self_gaps(scalar):
    table = refine_study(scalar, 0.0, [0.1, 0.05, 0.025], T=1.0)
    assert len(table.rows) == 2
    assert table.rows[1].order is not None


@pytest.mark.parametrize(
    "h_list, T",
    [
        ([0.1, 0.05], 1.0),
        ([0.1, 0.1, 0.05], 1.0),
        ([0.05, 0.1, 0.2], 1.0),
        ([0.3, 0.15, 0.075], 1.0),
    ],
)
def test_refine_study_rejects_bad_lists(scalar, h_list, T):
    with pytest.raises(OrderingError):
        refine_study(scalar, 0.0, h_list, T=T)


def test_failing_inner_solver_keeps_partial_solution(scalar):
    def inner(t, tau, anchor, t_metric):
        if t > 0.5:
            raise ConvergenceError("no progress", residual=0.25)
        return scalar.inner_solver(t, tau, anchor, t_metric)

    problem = replace(scalar, inner_solver=inner)
    with pytest.raises(SchemeError) as info:
        run_scheme(problem, 0.0, TimeGrid(T=1.0, h=0.1), interp_nodes_per_step=0)

    partial = info.value.partial
    assert partial.steps == 5
    assert not partial.complete
    assert isinstance(info.value.__cause__, StepError)
    assert info.value.__cause__.residual == 0.25


def test_step_increasing_objective_is_rejected(scalar):
    problem = replace(scalar, inner_solver=lambda t, tau, anchor, t_metric: anchor + 10.0)
    with pytest.raises(StepError):
        mm_step(problem, 0.0, 0.0, 0.1)


def test_interpolation_panels_grade_towards_the_step_start(scalar):
    graded = interpolate_step(scalar, 0.1, 0.2, 0.6, nodes=3, panels=3)
    assert len(graded.nodes) == 9
    assert sum(graded.weights) == pytest.approx(0.4)
    assert list(graded.nodes) == sorted(graded.nodes)
    assert 0.2 < graded.nodes[0] < 0.25
    assert sum(r < 0.3 for r in graded.nodes) == 3
    assert sum(r < 0.4 for r in graded.nodes) == 6

    single = interpolate_step(scalar, 0.1, 0.2, 0.6, nodes=3, panels=1)
    assert len(single.nodes) == 3
    bisected = interpolate_step(scalar, 0.1, 0.2, 0.6, nodes=3, panels=1, rate=0.0, depth=2)
    assert len(bisected.nodes) == 12
    assert sum(bisected.weights) == pytest.approx(0.4)

    with pytest.raises(DomainError):
        interpolate_step(scalar, 0.1, 0.2, 0.6, panels=0)


def test_fixed_panels_cache_three_nodes_per_panel(scalar):
    solution = run_scheme(scalar, 0.0, TimeGrid(T=0.5, h=0.1), interp_panels=1, interp_tol=None)
    assert [len(cache.nodes) for cache in solution.interpolants] == [3] * 5
