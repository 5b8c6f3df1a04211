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
from dataclasses import dataclass
from enum import StrEnum
from logging import getLogger
from typing import Any, Callable, Optional, Protocol, Sequence, runtime_checkable

import numpy as np

from classes.errors import DomainError
from classes.space import GridGeometry, Matrix, MetricFamily, Vector
from flows.entropy_flow.fisher import fisher_information
from flows.entropy_flow.jko import Backend, EntropyJkoProblem, jko_objective, solve_jko
from flows.mms_engine.ledger import ede_ledger
from flows.mms_engine.problem import DiscreteSolution
from flows.transport.exact import wasserstein

__all__ = (
    "EdeMode",
    "NodeTrajectory",
    "KuwadaReport",
    "EdeReport",
    "JkoInstance",
    "AgreementReport",
    "metric_speed_estimate",
    "kuwada_check",
    "ede_report",
    "random_instances",
    "backend_agreement",
)

logger = getLogger(__name__)


@runtime_checkable
class NodeTrajectory(Protocol):
    """Densities at grid nodes over a graph form, as the forward adjoint heat flow produces them."""

    times: tuple[float, ...]
    densities: tuple[Vector, ...]
    form: Any

    def measure(self, k: int) -> Vector: ...


Trajectory = DiscreteSolution | NodeTrajectory | Callable[[float], Vector]


def _node(times: Sequence[float], t: float) -> int:
    nodes = np.asarray(times, dtype=float)
    k = int(np.argmin(np.abs(nodes - t)))
    if abs(nodes[k] - t) > 1e-9 * max(1.0, abs(t)):
        raise DomainError(f"t={t:.6g} is not a node of the trajectory")
    return k


def _measure(trajectory: Trajectory, t: float) -> Vector:
    match trajectory:
        case NodeTrajectory():
            mu = trajectory.measure(_node(trajectory.times, t))
        case DiscreteSolution():
            mu = np.asarray(trajectory.states[_node(trajectory.times, t)], dtype=float)
        case _:
            mu = np.asarray(trajectory(t), dtype=float)
    return mu / mu.sum()


def metric_speed_estimate(trajectory: Trajectory, t: float, delta: float, metric: MetricFamily) -> float:
    """W_t(μ_t, μ_{t+δ})/δ with the exact solver.

    Trajectories given as solutions are read at their nodes, so t and t + δ must be nodes.
    """
    if delta <= 0:
        raise DomainError("delta must be positive")
    return wasserstein(_measure(trajectory, t), _measure(trajectory, t + delta), metric.metric_at(t)) / delta


@dataclass(frozen=True, slots=True)
class KuwadaReport:
    times: tuple[float, ...]
    speeds_squared: tuple[float, ...]
    fisher: tuple[float, ...]
    slack: float

    @property
    def excess(self) -> list[float]:
        return [v - (1.0 + self.slack) * i for v, i in zip(self.speeds_squared, self.fisher)]

    @property
    def worst_excess(self) -> float:
        return max(self.excess, default=0.0)

    @property
    def ok(self) -> bool:
        return all(value <= 1e-12 for value in self.excess)


def _grid_metric(trajectory: NodeTrajectory) -> tuple[GridGeometry, MetricFamily]:
    geometry = trajectory.form.geometry
    if geometry is None:
        raise DomainError("the Kuwada check needs a grid trajectory")
    metric = geometry.metric or MetricFamily.constant(geometry.distances(), trajectory.form.T)
    return geometry, metric


def kuwada_check(
    trajectory: NodeTrajectory,
    times: Sequence[float],
    delta: float,
    slack: float = 0.15,
) -> KuwadaReport:
    """|μ̇|²_t over [t, t + δ] against the Fisher information of ρ_t along a forward-adjoint heat flow."""
    geometry, metric = _grid_metric(trajectory)
    form = trajectory.form

    speeds, fisher = [], []
    for t in times:
        speeds.append(metric_speed_estimate(trajectory, t, delta, metric) ** 2)
        rho = trajectory.densities[_node(trajectory.times, t)]
        fisher.append(fisher_information(rho, t, geometry, form.measure))

    report = KuwadaReport(
        times=tuple(float(t) for t in times),
        speeds_squared=tuple(speeds),
        fisher=tuple(fisher),
        slack=slack,
    )
    if not report.ok:
        logger.warning("Kuwada inequality fails by %.3e at slack %.2f", report.worst_excess, slack)
    return report


class EdeMode(StrEnum):
    Surrogate = "surrogate"
    Ledger = "ledger"


@dataclass(frozen=True, slots=True)
class EdeReport:
    """S_T − S_0 + ½∫|μ̇|² + ½∫slope² − ∫∂_r S_r; negative values are slack in the one-sided inequality."""

    mode: EdeMode
    energy_start: float
    energy_end: float
    half_speed: float
    half_slope: float
    drift: float

    @property
    def residual(self) -> float:
        return math.fsum([self.energy_end, -self.energy_start, self.half_speed, self.half_slope, -self.drift])


def ede_report(
    solution: DiscreteSolution,
    problem: EntropyJkoProblem,
    geometry: Optional[GridGeometry] = None,
) -> EdeReport:
    """Energy-dissipation balance of a JKO trajectory.

    With a grid geometry the slope is the Fisher surrogate at the nodes and the speed the node-to-node
    W_{t_n} speed, both integrated by the right-endpoint rule; ∂_r S_r uses the trapezoid rule. Without
    one the discrete ledger of the cached interpolants is reported instead.
    """
    if geometry is None:
        ledger = ede_ledger(solution)
        return EdeReport(
            mode=EdeMode.Ledger,
            energy_start=solution.energies[0],
            energy_end=solution.energies[-1],
            half_speed=math.fsum(step.half_speed for step in ledger.steps),
            half_slope=math.fsum(step.half_slope for step in ledger.steps),
            drift=math.fsum(step.drift for step in ledger.steps),
        )

    h = solution.grid.h
    functional = problem.functional
    times = [float(t) for t in solution.times]
    slopes, rates = [], []
    for t, mu in zip(times, solution.states):
        mu = np.asarray(mu, dtype=float)
        rho = mu / problem.measure.measure_at(t)
        slopes.append(fisher_information(rho, t, geometry, problem.measure))
        rates.append(functional.entropy_rate(mu, t))

    return EdeReport(
        mode=EdeMode.Surrogate,
        energy_start=solution.energies[0],
        energy_end=solution.energies[-1],
        half_speed=0.5 * h * math.fsum(v**2 for v in solution.speeds),
        half_slope=0.5 * h * math.fsum(slopes[1:]),
        drift=0.5 * h * math.fsum(a + b for a, b in zip(rates, rates[1:])),
    )


@dataclass(frozen=True, slots=True)
class JkoInstance:
    mu_prev: Vector
    masses: Vector
    distances: Matrix


def random_instances(count: int, seed: int = 0, max_points: int = 10) -> list[JkoInstance]:
    """Seeded step instances on random points of [0, 1] with between 2 and `max_points` points."""
    rng = np.random.default_rng(seed)
    instances = []
    for _ in range(count):
        n = int(rng.integers(2, max_points + 1))
        points = np.sort(rng.uniform(0.0, 1.0, n))
        masses = rng.uniform(0.5, 1.5, n)
        instances.append(
            JkoInstance(
                mu_prev=rng.dirichlet(np.ones(n)),
                masses=masses / masses.sum(),
                distances=np.abs(points[:, None] - points[None, :]),
            )
        )
    return instances


@dataclass(frozen=True, slots=True)
class AgreementReport:
    exact: tuple[float, ...]
    scaling: tuple[float, ...]
    tol: float

    @property
    def gaps(self) -> list[float]:
        return [abs(a - b) for a, b in zip(self.exact, self.scaling)]

    @property
    def worst_gap(self) -> float:
        return max(self.gaps, default=0.0)

    @property
    def ok(self) -> bool:
        return self.worst_gap <= self.tol


def backend_agreement(
    instances: int | Sequence[JkoInstance] = 25,
    h: float = 0.5,
    seed: int = 0,
    tol: float = 1e-5,
) -> AgreementReport:
    """Step objectives of both backends on the same instances."""
    if isinstance(instances, int):
        instances = random_instances(instances, seed)

    exact, scaling = [], []
    for item in instances:
        for backend, values in ((Backend.ExactSmall, exact), (Backend.Scaling, scaling)):
            nu = solve_jko(item.mu_prev, item.masses, item.distances, h, backend=backend)
            values.append(jko_objective(nu, item.mu_prev, item.masses, item.distances, h))

    report = AgreementReport(exact=tuple(exact), scaling=tuple(scaling), tol=tol)
    logger.info("Backend agreement over %d instances: worst gap %.3e", len(exact), report.worst_gap)
    return report
