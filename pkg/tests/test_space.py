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
from itertools import permutations

import numpy as np
import pytest

from classes.errors import BoundaryError, DegenerateMetricError, DimensionError, DomainError
from classes.space import (
    GridGeometry,
    MeasureFamily,
    MetricFamily,
    TimeGrid,
    ViolationKind,
    path_distances,
    snapshot,
    torus_distances,
    validate_metric,
)


def test_time_grid_nodes():
    grid = TimeGrid(T=1.0, h=0.25)
    assert grid.steps == 4
    np.testing.assert_allclose(grid.nodes, [0, 0.25, 0.5, 0.75, 1.0])
    assert grid.index(0.3) == 2
    assert grid.upper(0.3) == pytest.approx(0.5)
    assert grid.lower(0.3) == pytest.approx(0.25)
    assert grid.index(0.0) == 0
    assert grid.refined().steps == 8


@pytest.mark.parametrize("T, h", [(1.0, 0.0), (1.0, -0.1), (0.0, 0.1)])
def test_time_grid_rejects_bad_steps(T, h):
    with pytest.raises(DomainError):
        TimeGrid(T=T, h=h)


def test_distance_tables():
    np.testing.assert_allclose(path_distances(3, 0.5)[0], [0, 0.5, 1.0])
    torus = torus_distances(4, 1.0)
    np.testing.assert_allclose(torus[0], [0, 0.25, 0.5, 0.25])
    assert validate_metric(torus).ok


def test_validate_metric_single_triangle_violation():
    D = np.array([[0.0, 1.0, 3.0], [1.0, 0.0, 1.0], [3.0, 1.0, 0.0]])
    report = validate_metric(D)
    assert not report
    (violation,) = report.violations
    assert violation.kind == ViolationKind.Triangle
    assert violation.points == (0, 1, 2)
    assert violation.excess == pytest.approx(1.0)


def test_validate_metric_matches_brute_force(rng):
    A = rng.uniform(0.1, 2.0, size=(5, 5))
    D = A + A.T
    np.fill_diagonal(D, 0.0)

    expected = {
        (i, j, k)
        for i, j, k in permutations(range(5), 3)
        if i < k and D[i, k] > D[i, j] + D[j, k] + 1e-9
    }
    found = {v.points for v in validate_metric(D).of(ViolationKind.Triangle)}
    assert found == expected


def test_validate_metric_other_axioms():
    D = np.array([[0.5, 1.0], [2.0, 0.0]])
    report = validate_metric(D)
    assert report.of(ViolationKind.Diagonal)
    assert report.of(ViolationKind.Symmetry)

    with pytest.raises(DimensionError):
        validate_metric(np.zeros((2, 3)))


def test_validate_metric_euclidean_points(rng):
    points = rng.normal(size=(6, 2))
    D = np.linalg.norm(points[:, None] - points[None, :], axis=-1)
    assert validate_metric(D).ok


def test_conformal_metric_value():
    family = MetricFamily.exponential([[0.0, 2.0], [2.0, 0.0]], T=1.0, rate=0.1)
    assert family.metric_at(1.0)[0, 1] == pytest.approx(2 * math.exp(0.1))
    assert family.metric_at(1.0)[0, 0] == 0.0


@pytest.mark.parametrize("rate", [0.0, 0.3, -0.7])
def test_log_lipschitz_of_conformal_family(rate):
    family = MetricFamily.exponential(path_distances(4), T=1.0, rate=rate)
    estimate = family.estimate_log_lipschitz(np.linspace(0, 1, 11))
    assert estimate == pytest.approx(abs(rate), abs=1e-12)


def test_log_lipschitz_of_tabulated_family():
    tables = np.array([path_distances(3), 2 * path_distances(3), 3 * path_distances(3)])
    times = np.array([0.0, 0.5, 1.0])
    family = MetricFamily.tabulated(times, tables)

    mask = ~np.eye(3, dtype=bool)
    logs = [np.log(family.metric_at(t)[mask]) for t in times]
    brute = max(
        float(np.max(np.abs(logs[b] - logs[a]))) / (times[b] - times[a]) for a in range(3) for b in range(a + 1, 3)
    )
    assert family.estimate_log_lipschitz(times) == pytest.approx(brute)
    assert family.lipschitz == pytest.approx(2 * math.log(2))


def test_degenerate_metric():
    tables = np.array([path_distances(2), np.zeros((2, 2))])
    with pytest.raises(DegenerateMetricError):
        MetricFamily.tabulated([0.0, 1.0], tables)

    with pytest.raises(DegenerateMetricError):
        MetricFamily.constant(np.zeros((2, 2)), T=1.0).estimate_log_lipschitz([0.0, 1.0])


def test_metric_time_outside_horizon():
    family = MetricFamily.constant(path_distances(2), T=1.0)
    with pytest.raises(DomainError):
        family.metric_at(1.5)
    with pytest.raises(DomainError):
        family.estimate_log_lipschitz([0.5])


def test_measure_at_linear_potential():
    family = MeasureFamily.linear([1.0, 1.0], [1.0, 1.0], T=1.0)
    np.testing.assert_allclose(family.measure_at(math.log(2)), [0.25, 0.25])


def test_sinusoidal_rate():
    V = np.array([1.0, -2.0, 0.5])
    analytic = MeasureFamily.sinusoidal(np.ones(3), V, T=1.0, amplitude=0.5, frequency=2.0)
    numeric = MeasureFamily.sinusoidal(np.ones(3), V, T=1.0, amplitude=0.5, frequency=2.0, analytic=False)

    np.testing.assert_allclose(analytic.f_rate(0.0), V)
    np.testing.assert_allclose(numeric.f_rate(0.3), analytic.f_rate(0.3), rtol=1e-8)
    assert analytic.check(np.linspace(0, 1, 21)).ok


def test_tabulated_rate_at_boundary():
    family = MeasureFamily.tabulated(np.ones(2), [0.0, 1.0], [[0.0, 0.0], [1.0, -1.0]])
    np.testing.assert_allclose(family.f_rate(0.5), [1.0, -1.0], rtol=1e-6)
    with pytest.raises(BoundaryError):
        family.f_rate(0.0)


def test_measure_check_flags_wrong_declaration():
    family = MeasureFamily.linear(np.ones(2), [1.0, 0.0], T=1.0)
    wrong = MeasureFamily(base=family.base, T=1.0, potential=family.potential, lipschitz=0.5, bound=0.5)
    report = wrong.check([0.0, 1.0])
    assert not report.ok
    assert report.bound_excess == pytest.approx(0.5)
    assert report.lipschitz_excess == pytest.approx(0.5)


def test_snapshot_point_count():
    metric = MetricFamily.constant(path_distances(3), T=1.0)
    measure = MeasureFamily.static(np.ones(3), T=1.0)
    snap = snapshot(metric, measure, 0.5)
    assert snap.measure.sum() == pytest.approx(1.0)

    with pytest.raises(DimensionError):
        snapshot(metric, MeasureFamily.static(np.ones(2), T=1.0), 0.5)


def test_grid_geometry():
    torus = GridGeometry(n=8)
    assert torus.spacing == pytest.approx(0.125)
    assert torus.scale(0.5) == 1.0

    conformal = GridGeometry(n=8, metric=MetricFamily.exponential(torus.distances(), T=1.0, rate=0.2))
    assert conformal.scale(1.0) == pytest.approx(math.exp(0.2))

    interval = GridGeometry(n=5, periodic=False)
    assert interval.spacing == pytest.approx(0.25)
    np.testing.assert_allclose(interval.distances()[0, -1], 1.0)
