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

import numpy as np
import pytest
from scipy.optimize import brentq

from classes.errors import DomainError, MarginalError, OrderingError
from classes.space import MetricFamily, path_distances
from flows.transport.dynamic import dynamic_distance_chain, dynamic_distance_scaled
from flows.transport.entropic import sinkhorn
from flows.transport.exact import ProbabilityVector, kantorovich, wasserstein, wasserstein_loglip_check


def _random_measure(rng, n):
    w = rng.uniform(0.05, 1.0, size=n)
    return w / w.sum()


def test_probability_vector_validation():
    assert len(ProbabilityVector.normalized([1.0, 3.0])) == 2
    with pytest.raises(MarginalError):
        ProbabilityVector(np.array([0.5, 0.4]))
    with pytest.raises(MarginalError):
        ProbabilityVector(np.array([1.5, -0.5]))


def test_identical_marginals_cost_nothing(rng):
    mu = _random_measure(rng, 5)
    value, coupling, _ = kantorovich(mu, mu, path_distances(5))
    assert value == pytest.approx(0.0, abs=1e-12)
    assert coupling.marginal_residual <= 1e-9


def test_two_point_diracs():
    value, coupling, _ = kantorovich([1.0, 0.0], [0.0, 1.0], path_distances(2))
    assert value == pytest.approx(1.0)
    np.testing.assert_allclose(coupling.plan, [[0.0, 1.0], [0.0, 0.0]], atol=1e-12)


def test_three_point_line():
    mu, nu = [0.5, 0.3, 0.2], [0.2, 0.3, 0.5]
    value, _, _ = kantorovich(mu, nu, path_distances(3))
    assert value == pytest.approx(0.6, abs=1e-10)


def test_matches_monotone_coupling_on_a_line(rng, line_w2):
    positions = np.sort(rng.uniform(0, 3, size=6))
    D = np.abs(positions[:, None] - positions[None, :])
    for _ in range(5):
        mu, nu = _random_measure(rng, 6), _random_measure(rng, 6)
        value, _, _ = kantorovich(mu, nu, D)
        assert value == pytest.approx(float(line_w2(mu, nu, positions)[0]), abs=1e-9)


def test_symmetry_and_triangle(rng):
    points = rng.normal(size=(6, 2))
    D = np.linalg.norm(points[:, None] - points[None, :], axis=-1)
    a, b, c = (_random_measure(rng, 6) for _ in range(3))

    assert wasserstein(a, b, D) == pytest.approx(wasserstein(b, a, D), abs=1e-9)
    assert wasserstein(a, c, D) <= wasserstein(a, b, D) + wasserstein(b, c, D) + 1e-9


def test_duality(rng):
    D = path_distances(7, 0.5)
    mu, nu = _random_measure(rng, 7), _random_measure(rng, 7)
    value, _, duals = kantorovich(mu, nu, D)

    assert abs(duals.gap) <= 1e-9 * (1 + value)
    assert duals.feasibility_excess(D**2) <= 1e-9
    assert duals.psi[0] == 0.0


def test_mass_mismatch():
    with pytest.raises(MarginalError):
        kantorovich([0.5, 0.5], [0.7, 0.5], path_distances(2))


def test_log_lipschitz_of_wasserstein(rng):
    family = MetricFamily.exponential(path_distances(4), T=1.0, rate=0.3)
    mu, nu = _random_measure(rng, 4), _random_measure(rng, 4)
    report = wasserstein_loglip_check(family, mu, nu, np.linspace(0, 1, 5))

    assert report.pairs == 10
    assert report.worst_ratio == pytest.approx(0.3, rel=1e-6)
    assert report.ok


def test_sinkhorn_constant_cost_gives_product_plan():
    mu = np.full(3, 1 / 3)
    nu = np.array([0.2, 0.3, 0.5])
    _, coupling = sinkhorn(mu, nu, np.ones((3, 3)), eps=0.5)
    np.testing.assert_allclose(coupling.plan, np.outer(mu, nu), atol=1e-12)


def test_sinkhorn_two_point_fixed_point():
    mu, nu, eps = [0.7, 0.3], [0.4, 0.6], 0.1
    _, coupling = sinkhorn(mu, nu, path_distances(2), eps=eps)

    # off-diagonal mass x fixes the plan; the kernel pins the cross ratio to e^{2/eps}
    def cross_ratio(x):
        return math.log((0.7 - x) * (0.6 - x)) - math.log(x * (x - 0.3)) - 2 / eps

    x = brentq(cross_ratio, 0.3 + 1e-14, 0.6 - 1e-12, xtol=1e-15)
    expected = np.array([[0.7 - x, x], [x - 0.3, 0.6 - x]])
    np.testing.assert_allclose(coupling.plan, expected, atol=1e-8)


def test_sinkhorn_cost_decreases_towards_exact():
    mu, nu = [0.5, 0.3, 0.2], [0.2, 0.3, 0.5]
    D = path_distances(3)
    exact, _, _ = kantorovich(mu, nu, D)
    costs = [sinkhorn(mu, nu, D, eps=eps)[0] for eps in (1.0, 0.1, 0.01)]

    assert costs[0] >= costs[1] - 1e-9
    assert costs[1] >= costs[2] - 1e-9
    assert costs[2] >= exact - 1e-9
    assert costs[2] - exact < costs[0] - exact


@pytest.mark.parametrize("eps", [0.01, 0.005])
def test_sinkhorn_small_regularization_settles(eps):
    mu, nu = [0.5, 0.3, 0.2], [0.2, 0.3, 0.5]
    D = path_distances(3)
    exact, _, _ = kantorovich(mu, nu, D)
    cost, coupling = sinkhorn(mu, nu, D, eps=eps)

    assert coupling.marginal_residual <= 1e-8
    # entropic optimality bounds the excess cost by eps times the entropy range
    assert exact - 1e-9 <= cost <= exact + eps * math.log(9) + 1e-9


def test_sinkhorn_rejects_bad_regularization():
    with pytest.raises(DomainError):
        sinkhorn([1.0, 0.0], [0.0, 1.0], path_distances(2), eps=0.0)


@pytest.mark.parametrize(
    "lam, s, t, gap, expected",
    [
        (1.0, 1.0, math.e, 1.0, math.e - 1),
        (2.0, 1.0, 4.0, 3.0, 54 / math.log(4)),
        (1.5, 2.0, 2.0, 1.0, 3.0),
    ],
)
def test_scaled_line_closed_form(lam, s, t, gap, expected):
    assert dynamic_distance_scaled(lam, s, t, gap) == pytest.approx(expected)


def test_scaled_line_value():
    assert dynamic_distance_scaled(2.0, 1.0, 4.0, 3.0) == pytest.approx(38.9528, abs=1e-4)
    with pytest.raises(DomainError):
        dynamic_distance_scaled(1.0, 0.0, 1.0, 1.0)


def test_chain_endpoints_and_symmetry(rng):
    tables = []
    for _ in range(3):
        points = rng.normal(size=(5, 2))
        tables.append(np.linalg.norm(points[:, None] - points[None, :], axis=-1))
    family = MetricFamily.tabulated([0.0, 0.5, 1.0], np.array(tables))

    assert dynamic_distance_chain(2, 2, 0.1, 0.9, family) == 0.0
    assert dynamic_distance_chain(0, 3, 0.5, 0.5, family) == pytest.approx(family.squared_at(0.5)[0, 3])

    forward = dynamic_distance_chain(0, 3, 0.1, 0.9, family, n_slices=8)
    backward = dynamic_distance_chain(3, 0, 0.9, 0.1, family, n_slices=8, reverse=True)
    assert forward == pytest.approx(backward, rel=1e-10)

    with pytest.raises(OrderingError):
        dynamic_distance_chain(0, 3, 0.1, 0.9, family, n_slices=-1)


@pytest.mark.parametrize("s, t, reverse", [(0.9, 0.1, False), (0.1, 0.9, True)])
def test_chain_orientation_must_be_explicit(s, t, reverse):
    family = MetricFamily.constant(path_distances(4), T=1.0)
    with pytest.raises(OrderingError):
        dynamic_distance_chain(0, 3, s, t, family, n_slices=4, reverse=reverse)
    assert dynamic_distance_chain(0, 3, 0.5, 0.5, family, reverse=reverse) == pytest.approx(9.0)


@pytest.mark.slow
def test_chain_approaches_logarithmic_mean():
    family = MetricFamily.conformal(
        path_distances(200, 1 / 199), T=math.e, scaling=lambda t: 0.5 * math.log(t), lipschitz=0.5
    )
    value = dynamic_distance_chain(0, 199, 1.0, math.e, family)
    assert value == pytest.approx(math.e - 1, abs=1e-2)
