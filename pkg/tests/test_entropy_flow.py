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
from scipy.integrate import quad

import flows.entropy_flow.jko as jko_module
from classes.errors import (
    ConvergenceError,
    DimensionError,
    DomainError,
    MarginalError,
    OrderingError,
    UnsupportedGeometryError,
)
from classes.scenario import parse_config
from classes.space import GridGeometry, MeasureFamily, MetricFamily, TimeGrid, path_distances
from flows.dirichlet_flow.form import GraphForm, forward_adjoint_flow
from flows.entropy_flow.diagnostics import (
    EdeMode,
    backend_agreement,
    ede_report,
    kuwada_check,
    metric_speed_estimate,
    random_instances,
)
from flows.entropy_flow.fisher import fisher_information
from flows.entropy_flow.identify import FlowComparison, gap_halving, identify_vs_adjoint_heat
from flows.entropy_flow.jko import (
    Backend,
    EntropyFunctional,
    EntropyJkoProblem,
    jko_objective,
    jko_run,
    jko_step,
    solve_jko,
)
from flows.mms_engine.ledger import apriori_check, ede_ledger
from flows.mms_engine.scheme import run_scheme

BACKENDS = [Backend.ExactSmall, Backend.Scaling]


def test_relative_entropy_of_a_dirac():
    functional = EntropyFunctional(MeasureFamily.static(np.ones(2), T=1.0))
    assert functional.relative_entropy([1.0, 0.0], 0.0) == pytest.approx(math.log(2))
    assert functional.relative_entropy([0.5, 0.5], 0.0) == pytest.approx(0.0, abs=1e-15)


def test_entropy_forms_agree(rng):
    V = np.array([1.0, 2.0, 3.0])
    functional = EntropyFunctional(MeasureFamily.linear(np.ones(3), V, T=1.0))
    mu = np.array([0.2, 0.3, 0.5])

    expected = float(np.sum(mu * np.log(3 * mu)) + 0.5 * V @ mu)
    assert functional.relative_entropy(mu, 0.5) == pytest.approx(expected)
    assert functional.split_entropy(mu, 0.5) == pytest.approx(expected)
    assert functional.entropy_rate(mu, 0.5) == pytest.approx(V @ mu)

    assert functional.lower_bound == pytest.approx(-3.0)
    for _ in range(10):
        sample = rng.dirichlet(np.ones(3))
        assert functional.relative_entropy(sample, float(rng.uniform())) >= functional.lower_bound

    with pytest.raises(DimensionError):
        functional.relative_entropy([0.5, 0.5], 0.0)


@pytest.mark.parametrize("backend", BACKENDS)
def test_two_point_step(backend):
    nu = solve_jko([1.0, 0.0], [0.5, 0.5], path_distances(2), 0.5, backend=backend)
    # ν₁/ν₀ = e^{−1} balances log(ν₁/ν₀) against the unit transport cost at h = ½
    assert nu[1] == pytest.approx(1 / (1 + math.e), abs=1e-4)
    assert nu.sum() == pytest.approx(1.0)


@pytest.mark.parametrize("backend", BACKENDS)
def test_equilibrium_is_a_fixed_point(backend):
    measure = MeasureFamily.linear(np.ones(4), [0.0, 1.0, 0.5, -1.0], T=1.0)
    problem = EntropyJkoProblem(EntropyFunctional(measure), MetricFamily.constant(path_distances(4), T=1.0), backend)
    equilibrium = problem.functional.minimizer(0.5)
    np.testing.assert_allclose(jko_step(equilibrium, 0.5, 0.1, problem), equilibrium, atol=1e-14)


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("mu", [[0.6, 0.3, 0.1], [1.0, 0.0, 0.0], [0.0, 0.5, 0.5]])
def test_three_point_step_matches_grid_search(backend, mu, simplex_search):
    positions = np.array([0.0, 0.5, 1.0])
    D = np.abs(positions[:, None] - positions[None, :])
    mu, masses, h = np.array(mu), np.array([0.2, 0.3, 0.5]), 0.1

    best, _ = simplex_search(mu, masses, positions, h)
    nu = solve_jko(mu, masses, D, h, backend=backend)
    assert jko_objective(nu, mu, masses, D, h) == pytest.approx(best, abs=2e-3)


def test_step_rejects_unnormalized_measure():
    with pytest.raises(MarginalError):
        solve_jko([0.7, 0.7], [0.5, 0.5], path_distances(2), 0.5)


def test_random_instances_are_seeded():
    first, second = random_instances(3, seed=7), random_instances(3, seed=7)
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a.mu_prev, b.mu_prev)
        assert a.distances.shape == (a.masses.size, a.masses.size)
        assert 2 <= a.masses.size <= 10


@pytest.mark.slow
def test_backends_agree():
    report = backend_agreement(h=0.5, seed=0)
    assert len(report.gaps) == 25
    assert report.tol == 1e-5
    assert report.ok, report.gaps


@pytest.mark.slow
def test_entropy_decreases_on_a_static_space():
    n = 8
    geometry = GridGeometry(n=n)
    measure = MeasureFamily.static(np.ones(n), T=0.2)
    problem = EntropyJkoProblem(EntropyFunctional(measure), MetricFamily.constant(geometry.distances(), T=0.2))
    mu0 = np.exp(2 * np.cos(2 * math.pi * geometry.points))
    solution = jko_run(mu0 / mu0.sum(), TimeGrid(T=0.2, h=0.05), problem)

    energies = solution.energies
    assert all(b <= a for a, b in zip(energies, energies[1:]))
    assert energies[-1] < energies[0]
    for state in solution.states:
        assert np.all(state >= 0)
        assert state.sum() == pytest.approx(1.0)


def test_stationary_ede_report():
    n = 8
    geometry = GridGeometry(n=n)
    measure = MeasureFamily.static(np.ones(n), T=0.3)
    problem = EntropyJkoProblem(EntropyFunctional(measure), MetricFamily.constant(geometry.distances(), T=0.3))
    solution = jko_run(np.full(n, 1 / n), TimeGrid(T=0.3, h=0.1), problem)

    report = ede_report(solution, problem, geometry)
    assert report.residual == pytest.approx(0.0, abs=1e-12)
    assert report.half_speed == pytest.approx(0.0, abs=1e-12)


def test_fisher_information_of_constants():
    geometry = GridGeometry(n=32)
    assert fisher_information(np.ones(32), 0.0, geometry) == 0.0

    with pytest.raises(UnsupportedGeometryError):
        fisher_information(np.ones(32), 0.0, "torus")
    with pytest.raises(DimensionError):
        fisher_information(np.ones(16), 0.0, geometry)
    with pytest.raises(DomainError):
        fisher_information(-np.ones(32), 0.0, geometry)


def test_fisher_information_of_a_cosine():
    geometry = GridGeometry(n=256)
    rho = 1.0 + 0.5 * np.cos(2 * math.pi * geometry.points)

    def integrand(x):
        return (math.pi * math.sin(2 * math.pi * x)) ** 2 / (1.0 + 0.5 * math.cos(2 * math.pi * x))

    expected, _ = quad(integrand, 0.0, 1.0)
    assert fisher_information(rho, 0.0, geometry) == pytest.approx(expected, rel=1e-3)


def test_kuwada_on_a_stationary_flow():
    n = 16
    geometry = GridGeometry(n=n)
    form = GraphForm.torus(geometry, MeasureFamily.static(np.ones(n), T=0.2))
    trajectory = forward_adjoint_flow(np.ones(n), TimeGrid(T=0.2, h=0.05), form)

    report = kuwada_check(trajectory, [0.0, 0.05, 0.1], delta=0.05)
    assert report.ok
    assert max(report.fisher) == pytest.approx(0.0, abs=1e-20)

    with pytest.raises(DomainError):
        metric_speed_estimate(trajectory, 0.0, 0.0, MetricFamily.constant(geometry.distances(), T=0.2))


def test_identification_from_equilibrium():
    n = 16
    comparison = identify_vs_adjoint_heat(
        GridGeometry(n=n), MeasureFamily.static(np.ones(n), T=0.2), np.ones(n), T=0.2, h=0.05
    )
    assert len(comparison.times) == 5
    assert comparison.worst_gap <= 1e-8

    with pytest.raises(DomainError):
        identify_vs_adjoint_heat(
            GridGeometry(n=n, periodic=False), MeasureFamily.static(np.ones(n), T=0.2), np.ones(n), T=0.2, h=0.05
        )


@pytest.mark.slow
def test_identification_tracks_heat_flow():
    n = 16
    geometry = GridGeometry(n=n)
    measure = MeasureFamily.static(np.ones(n), T=0.1)
    rho0 = 1.0 + 0.5 * np.cos(2 * math.pi * geometry.points)
    comparison = identify_vs_adjoint_heat(geometry, measure, rho0, T=0.1, h=0.05, backend=Backend.ExactSmall)

    start = float(np.abs(rho0 / n - 1 / n).sum())
    assert comparison.terminal_gap < start


def test_step_that_only_ties_with_staying_returns_the_start(monkeypatch):
    monkeypatch.setattr(jko_module, "_exact_small", lambda mu, masses, D, tau, tol, max_iter: mu.copy())
    mu = np.array([0.7, 0.3])
    nu = solve_jko(mu, [0.5, 0.5], path_distances(2), 0.5)
    np.testing.assert_allclose(nu, mu, atol=1e-15)


def test_step_worse_than_staying_is_an_error(monkeypatch):
    monkeypatch.setattr(jko_module, "_exact_small", lambda mu, masses, D, tau, tol, max_iter: np.array([0.0, 1.0]))
    with pytest.raises(ConvergenceError) as info:
        solve_jko([1.0, 0.0], [0.5, 0.5], path_distances(2), 0.5)
    # the far Dirac pays the unit transport cost on top of the same entropy
    assert info.value.residual == pytest.approx(1.0)


def test_first_step_from_a_path_endpoint(scenarios):
    scenario = parse_config(scenarios / "path3_entropy.toml")
    problem = scenario.jko_problem()
    mu0 = scenario.initial_measure()
    h = scenario.grid.h

    for t in (h, 0.1 * h, 1e-3 * h):
        nu = jko_step(mu0, h, t, problem)
        assert nu.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(nu >= 0)
        stay = problem.functional.relative_entropy(mu0, h)
        D = problem.metric.metric_at(h)
        assert jko_objective(nu, mu0, problem.measure.measure_at(h), D, t) <= stay + 1e-12
    assert jko_step(mu0, h, h, problem)[1] > 0


@pytest.mark.slow
def test_path_endpoint_flow_completes(scenarios):
    scenario = parse_config(scenarios / "path3_entropy.toml")
    problem = scenario.jko_problem()
    solution = jko_run(scenario.initial_measure(), scenario.time_grid(), problem, interp_nodes_per_step=3)

    assert solution.complete
    assert ede_ledger(solution).ok
    report = apriori_check(solution)
    assert report.ok, report.violations
    assert report.dissipation <= report.dissipation_bound
    assert math.isfinite(report.c3)


def test_apriori_bounds_of_an_entropy_flow(scenarios):
    scenario = parse_config(scenarios / "path3_entropy.toml")
    problem = scenario.jko_problem()
    solution = jko_run(scenario.initial_measure(), TimeGrid(T=0.1, h=0.05), problem, interp_nodes_per_step=3)

    report = apriori_check(solution)
    assert report.ok, report.violations
    assert report.energy_peak <= report.energy_bound + 1e-9
    assert 0 < report.dissipation <= report.dissipation_bound


def test_three_point_ledger_shrinks_with_more_nodes(scenarios):
    scenario = parse_config(scenarios / "path3_entropy.toml")
    grid = TimeGrid(T=0.1, h=0.1)
    mu0 = scenario.initial_measure()

    residuals = []
    for nodes, tol in ((3, 1e-9), (6, 1e-10)):
        problem = replace(scenario.jko_problem(), tol=tol).as_problem()
        solution = run_scheme(problem, mu0, grid, interp_nodes_per_step=nodes, interp_panels=1, interp_tol=None)
        residuals.append(ede_ledger(solution).cumulative_residual)

    coarse, fine = residuals
    assert coarse > 0
    assert fine <= coarse / 4, residuals


def test_three_point_ledger_is_within_budget(scenarios):
    scenario = parse_config(scenarios / "path3_entropy.toml")
    problem = scenario.jko_problem()
    solution = jko_run(scenario.initial_measure(), TimeGrid(T=0.1, h=0.05), problem, interp_nodes_per_step=3)

    ledger = ede_ledger(solution)
    assert ledger.ok, (ledger.cumulative_residual, ledger.budget)
    report = ede_report(solution, problem)
    assert report.mode == EdeMode.Ledger
    assert abs(report.residual) <= ledger.budget


def test_ede_drift_follows_a_moving_potential():
    n = 8
    geometry = GridGeometry(n=n)
    V = np.cos(2 * math.pi * geometry.points)
    measure = MeasureFamily.linear(np.ones(n), V, T=0.2)
    problem = EntropyJkoProblem(EntropyFunctional(measure), MetricFamily.constant(geometry.distances(), T=0.2))
    mu0 = np.exp(np.sin(2 * math.pi * geometry.points))
    solution = jko_run(mu0 / mu0.sum(), TimeGrid(T=0.2, h=0.05), problem)

    report = ede_report(solution, problem, geometry)
    rates = [problem.functional.entropy_rate(mu, float(t)) for t, mu in zip(solution.times, solution.states)]
    assert report.mode == EdeMode.Surrogate
    assert report.drift == pytest.approx(0.5 * 0.05 * sum(a + b for a, b in zip(rates, rates[1:])))
    assert report.drift != 0.0
    assert report.energy_start == pytest.approx(problem.functional.relative_entropy(mu0 / mu0.sum(), 0.0))
    assert report.half_slope > 0


def _translate(profile, speed):
    def trajectory(t):
        return np.roll(profile, int(round(t * speed)))

    return trajectory


@pytest.mark.parametrize("delta", [0.4, 0.2, 0.1])
def test_speed_of_a_translation_is_exact(delta):
    profile = np.array([0.2, 0.5, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0])
    metric = MetricFamily.constant(path_distances(8), T=1.0)
    # one point every 0.1 time units on a unit-spaced path
    speed = metric_speed_estimate(_translate(profile, 10.0), 0.0, delta, metric)
    assert speed == pytest.approx(10.0, rel=1e-6)


def test_speed_estimate_settles_as_delta_halves(line_w2):
    positions = np.arange(100) / 100
    metric = MetricFamily.constant(np.abs(positions[:, None] - positions[None, :]), T=1.0)

    def trajectory(t):
        return np.exp(-((positions - 0.3 - 1.1 * t) ** 2) / (2 * 0.06**2))

    speeds = []
    for delta in (0.08, 0.04, 0.02):
        speed = metric_speed_estimate(trajectory, 0.0, delta, metric)
        mu, nu = trajectory(0.0), trajectory(delta)
        exact = math.sqrt(line_w2(mu / mu.sum(), nu / nu.sum(), positions)[0]) / delta
        assert speed == pytest.approx(exact, rel=1e-4)
        speeds.append(speed)

    assert all(s == pytest.approx(1.1, rel=0.03) for s in speeds), speeds
    assert abs(speeds[2] - speeds[1]) <= 0.03 * 1.1
    assert abs(speeds[1] - speeds[0]) <= 0.03 * 1.1


def test_kuwada_along_a_moving_bump():
    n = 64
    geometry = GridGeometry(n=n)
    form = GraphForm.torus(geometry, MeasureFamily.static(np.ones(n), T=0.075))
    rho0 = np.exp(2 * np.cos(2 * math.pi * geometry.points))
    trajectory = forward_adjoint_flow(rho0 / rho0.mean(), TimeGrid(T=0.075, h=0.0025), form)

    report = kuwada_check(trajectory, [0.0, 0.01, 0.02, 0.03, 0.04], delta=0.02, slack=0.15)
    assert report.ok, report.excess
    assert all(v > 0 for v in report.speeds_squared)
    assert report.fisher[0] > report.fisher[-1] > 0


def _comparison(h, gap):
    return FlowComparison(times=(0.0, 0.2), l1_gaps=(0.5, gap), w_gaps=(0.0, 0.0), h=h, grid_size=8)


def test_identification_gap_halves_with_the_step():
    report = gap_halving([_comparison(0.04, 0.08), _comparison(0.02, 0.04), _comparison(0.01, 0.0222)])
    assert report.steps == (0.04, 0.02, 0.01)
    assert report.ratios == pytest.approx((2.0, 0.04 / 0.0222))
    assert report.ok

    stalled = gap_halving([_comparison(0.04, 0.08), _comparison(0.02, 0.0667)])
    assert stalled.worst_deviation == pytest.approx(1 - 0.08 / 0.0667 / 2)
    assert not stalled.ok
    assert not gap_halving([_comparison(0.04, 0.08), _comparison(0.02, 0.0)]).ok


@pytest.mark.parametrize(
    "comparisons",
    [
        [_comparison(0.04, 0.08)],
        [_comparison(0.04, 0.08), _comparison(0.03, 0.06)],
        [_comparison(0.02, 0.04), _comparison(0.04, 0.08)],
    ],
)
def test_identification_halving_needs_halved_steps(comparisons):
    with pytest.raises(OrderingError):
        gap_halving(comparisons)
