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
from dataclasses import dataclass, replace
from logging import getLogger
from typing import Callable, Optional, Protocol, Sequence

import numpy as np
from numpy.typing import ArrayLike

from classes.errors import DomainError
from classes.space import GridGeometry, Matrix, TimeGrid, Vector
from flows.dirichlet_flow.form import (
    AdjointTrajectory,
    GraphForm,
    HeatScheme,
    Propagator,
    dirichlet_problem,
    forward_adjoint_flow,
    heat_flow,
)
from flows.dirichlet_flow.hilbert import QuadraticHilbertProblem
from flows.entropy_flow.fisher import fisher_information
from flows.mms_engine.problem import DiscreteSolution
from flows.mms_engine.scheme import run_scheme

__all__ = (
    "LinearStructure",
    "MaximumPrincipleReport",
    "DissipationReport",
    "DissipationRefinement",
    "ContractionReport",
    "ResidualReport",
    "EquivalenceReport",
    "maximum_principle_check",
    "entropy_dissipation_check",
    "dissipation_refinement",
    "contraction_check",
    "subdifferential_residual",
    "jko_equivalence_check",
    "evi_residual",
)

logger = getLogger(__name__)

MACHINE_TOL = 1e-12


class LinearStructure(Protocol):
    """Weighted inner products and energy gradients shared by graph forms and the Hilbert testbed."""

    def mass_matrix(self, t: float) -> Matrix: ...

    def gradient(self, t: float, x: ArrayLike) -> Vector: ...

    def norm(self, t: float, x: ArrayLike) -> float: ...


def _trials(count: int | ArrayLike, n: int, seed: int, low: float = 0.0, high: float = 1.0) -> Matrix:
    if isinstance(count, int):
        return np.random.default_rng(seed).uniform(low, high, size=(count, n))
    return np.atleast_2d(np.asarray(count, dtype=float))


@dataclass(frozen=True, slots=True)
class MaximumPrincipleReport:
    trials: int
    undershoot: float
    overshoot: float
    constants_gap: float
    tol: float = MACHINE_TOL

    @property
    def worst(self) -> float:
        return max(self.undershoot, self.overshoot, self.constants_gap)

    @property
    def ok(self) -> bool:
        return self.worst <= self.tol


def maximum_principle_check(
    P: Propagator,
    trials: int | ArrayLike = 20,
    seed: int = 0,
    tol: float = MACHINE_TOL,
) -> MaximumPrincipleReport:
    """0 <= P u <= 1 for [0, 1]-valued trials, and P·1 = 1."""
    trials = _trials(trials, P.n, seed)
    images = np.array([P.apply(u) for u in trials]) if trials.size else np.zeros((0, P.n))
    return MaximumPrincipleReport(
        trials=len(trials),
        undershoot=float(max(0.0, -images.min(initial=0.0))),
        overshoot=float(max(0.0, images.max(initial=1.0) - 1.0)),
        constants_gap=float(np.abs(P.apply(np.ones(P.n)) - 1.0).max(initial=0.0)),
        tol=tol,
    )


def _entropy(trajectory: AdjointTrajectory, k: int) -> float:
    rho = trajectory.densities[k]
    m = trajectory.form.masses(trajectory.times[k])
    positive = rho > 0
    return float(np.sum(rho[positive] * np.log(rho[positive]) * m[positive]))


@dataclass(frozen=True, slots=True)
class DissipationReport:
    """Centered difference of t ↦ Σρ log ρ m_t against −Fisher + Σ(∂_t f)ρ m_t at sampled nodes."""

    times: tuple[float, ...]
    lhs: tuple[float, ...]
    rhs: tuple[float, ...]
    drift: tuple[float, ...]
    relative_errors: tuple[float, ...]

    @property
    def max_relative(self) -> float:
        return max(self.relative_errors, default=0.0)


def entropy_dissipation_check(
    trajectory: AdjointTrajectory,
    times: Optional[Sequence[float]] = None,
) -> DissipationReport:
    """Compare d/dt Σρ log ρ m_t with −I(ρ_t) + Σ(∂_t f_t)ρ_t m_t along a forward-adjoint trajectory.

    Samples are interior nodes; the default takes all of them.
    """
    form = trajectory.form
    nodes = np.asarray(trajectory.times)
    if len(nodes) < 3:
        raise DomainError("entropy dissipation needs at least two steps")
    h = float(nodes[1] - nodes[0])

    if times is None:
        indices = list(range(1, len(nodes) - 1))
    else:
        indices = [int(round(t / h)) for t in times]
        if any(not 1 <= k <= len(nodes) - 2 for k in indices):
            raise DomainError("sample times must be interior grid nodes")

    rows = []
    for k in indices:
        t = float(nodes[k])
        rho = trajectory.densities[k]
        lhs = (_entropy(trajectory, k + 1) - _entropy(trajectory, k - 1)) / (2 * h)
        drift = float(np.sum(form.measure.f_rate(t) * rho * form.masses(t)))
        rhs = -fisher_information(rho, t, form.geometry, form.measure) + drift
        rows.append((t, lhs, rhs, drift, abs(lhs - rhs) / max(abs(rhs), MACHINE_TOL)))

    columns = list(zip(*rows)) if rows else [(), (), (), (), ()]
    return DissipationReport(*(tuple(float(x) for x in column) for column in columns))


@dataclass(frozen=True, slots=True)
class DissipationLevel:
    n: int
    h: float
    residual: float


@dataclass(frozen=True, slots=True)
class DissipationRefinement:
    levels: tuple[DissipationLevel, ...]

    @property
    def residuals(self) -> list[float]:
        return [level.residual for level in self.levels]

    @property
    def monotone(self) -> bool:
        return all(b < a for a, b in zip(self.residuals, self.residuals[1:]))


def dissipation_refinement(
    form_factory: Callable[[int], GraphForm],
    initial: Callable[[Vector], Vector],
    n0: int,
    h0: float,
    T: float,
    levels: int = 3,
    sample_times: Optional[Sequence[float]] = None,
) -> DissipationRefinement:
    """Largest relative dissipation residual under simultaneous halving of h and Δx.

    `form_factory(n)` builds the form on an n-point grid and `initial(points)` the initial density
    there. Samples default to the interior nodes of the coarsest grid. Level ℓ samples the entropy
    every h0/2^ℓ but integrates with 2^ℓ implicit-Euler substeps per sample, so the integration
    step shrinks like Δx² and the time error keeps pace with the O(Δx²) error of the Fisher
    surrogate instead of cancelling against it.
    """
    coarse = TimeGrid(T=T, h=h0)
    if sample_times is None:
        sample_times = [float(t) for t in coarse.nodes[1:-1]]

    results = []
    for level in range(levels):
        n, h, substeps = n0 * 2**level, h0 / 2**level, 2**level
        form = form_factory(n)
        if not isinstance(form.geometry, GridGeometry):
            raise DomainError("dissipation refinement needs grid forms")
        rho0 = np.asarray(initial(form.geometry.points), dtype=float)
        rho0 = rho0 / np.sum(rho0 * form.masses(0.0))
        fine = forward_adjoint_flow(rho0, TimeGrid(T=T, h=h / substeps), form)
        trajectory = replace(fine, times=fine.times[::substeps], densities=fine.densities[::substeps])
        report = entropy_dissipation_check(trajectory, sample_times)
        results.append(DissipationLevel(n=n, h=h, residual=report.max_relative))
        logger.debug("dissipation level %d (n=%d, h=%g): %.3e", level, n, h, report.max_relative)

    return DissipationRefinement(levels=tuple(results))


@dataclass(frozen=True, slots=True)
class ContractionReport:
    """Squared gaps ‖u_t − v_t‖²_t against e^{2Lt}‖u_0 − v_0‖²_0 plus slack·h·‖u_0 − v_0‖²_0."""

    times: tuple[float, ...]
    gaps: tuple[float, ...]
    bounds: tuple[float, ...]
    envelope: tuple[float, ...]
    lipschitz: float

    @property
    def worst_excess(self) -> float:
        return max((g - b for g, b in zip(self.gaps, self.bounds)), default=0.0)

    @property
    def ok(self) -> bool:
        return self.worst_excess <= MACHINE_TOL * max(1.0, self.gaps[0] if self.gaps else 1.0)

    @property
    def envelope_ok(self) -> bool:
        """Looser e^{(3L − K)t} envelope with K = 0."""
        return all(g <= e + MACHINE_TOL for g, e in zip(self.gaps, self.envelope))


def _evolve(structure: GraphForm | QuadraticHilbertProblem, x0: ArrayLike, grid: TimeGrid) -> list[Vector]:
    if isinstance(structure, GraphForm):
        states, _ = heat_flow(x0, grid, structure, HeatScheme.ImplicitEuler)
        return states
    solution = run_scheme(structure.as_problem(), np.asarray(x0, dtype=float), grid, interp_nodes_per_step=0)
    return [np.asarray(x, dtype=float) for x in solution.states]


def contraction_check(
    structure: GraphForm | QuadraticHilbertProblem,
    u0: ArrayLike,
    v0: ArrayLike,
    grid: TimeGrid,
    slack: float = 10.0,
) -> ContractionReport:
    """Gronwall contraction of two implicit trajectories in the time-dependent norms.

    L is the log-Lipschitz constant of the norm family: L*/2 for graph forms with
    ‖u‖²_t = Σ m_t u², the declared constant for the Hilbert testbed.
    """
    if isinstance(structure, GraphForm):
        L = structure.measure.lipschitz / 2
    else:
        L = structure.norm_lipschitz

    u, v = _evolve(structure, u0, grid), _evolve(structure, v0, grid)
    times = [float(t) for t in grid.nodes]
    gaps = [structure.norm(t, a - b) ** 2 for t, a, b in zip(times, u, v)]
    g0 = gaps[0]
    return ContractionReport(
        times=tuple(times),
        gaps=tuple(gaps),
        bounds=tuple(math.exp(2 * L * t) * g0 + slack * grid.h * g0 for t in times),
        envelope=tuple(math.exp(3 * L * t) * g0 + slack * grid.h * g0 for t in times),
        lipschitz=L,
    )


@dataclass(frozen=True, slots=True)
class ResidualReport:
    residuals: tuple[float, ...]
    tol: float

    @property
    def worst(self) -> float:
        return max(self.residuals, default=0.0)

    @property
    def ok(self) -> bool:
        return self.worst <= self.tol


def subdifferential_residual(
    solution: DiscreteSolution,
    structure: LinearStructure,
    tol: float = 1e-10,
) -> ResidualReport:
    """Size of M_{t_n}(u_n − u_{n−1})/h + ∇E_{t_n}(u_n) at every step.

    Residuals are scaled by max(1, (‖M u_n‖ + ‖M u_{n−1}‖)/h + ‖∇E(u_n)‖), the size of the terms before
    cancellation, so steps near equilibrium are read in absolute terms.
    """
    h = solution.grid.h
    residuals = []
    for n in range(1, solution.steps + 1):
        t = float(solution.times[n])
        u, u_prev = np.asarray(solution.states[n], dtype=float), np.asarray(solution.states[n - 1], dtype=float)
        M = structure.mass_matrix(t)
        inertia = M @ (u - u_prev) / h
        force = structure.gradient(t, u)
        scale = (np.linalg.norm(M @ u) + np.linalg.norm(M @ u_prev)) / h + np.linalg.norm(force)
        residuals.append(float(np.linalg.norm(inertia + force) / max(1.0, scale)))
    return ResidualReport(residuals=tuple(residuals), tol=tol)


@dataclass(frozen=True, slots=True)
class EquivalenceReport:
    steps: int
    max_gap: float
    tol: float = 1e-10

    @property
    def ok(self) -> bool:
        return self.max_gap <= self.tol


def jko_equivalence_check(form: GraphForm, u0: ArrayLike, grid: TimeGrid, tol: float = 1e-10) -> EquivalenceReport:
    """Minimizing movement of the Dirichlet energy against implicit-Euler heat steps, node by node."""
    solution = run_scheme(dirichlet_problem(form, u0), np.asarray(u0, dtype=float), grid, interp_nodes_per_step=0)
    heat, _ = heat_flow(u0, grid, form, HeatScheme.ImplicitEuler)
    gap = max(float(np.abs(np.asarray(x) - y).max(initial=0.0)) for x, y in zip(solution.states, heat))
    return EquivalenceReport(steps=solution.steps, max_gap=gap, tol=tol)


def evi_residual(
    solution: DiscreteSolution,
    structure: LinearStructure,
    trials: int | ArrayLike = 10,
    t: Optional[float] = None,
    seed: int = 0,
    tol: float = 1e-10,
) -> ResidualReport:
    """⟨(u_n − u_{n−1})/h, u_n − y⟩_{t_n} + E_{t_n}(u_n) − E_{t_n}(y) over trials y.

    Every step is tested unless `t` selects the step ending at the node covering it. Residuals
    are scaled by max(1, |E_{t_n}(y)|) and must stay <= tol.
    """
    problem = solution.problem
    h = solution.grid.h
    n_dim = np.asarray(solution.states[0]).size
    spread = 1.0 + max(float(np.abs(np.asarray(x)).max(initial=0.0)) for x in solution.states)
    trials = _trials(trials, n_dim, seed, -spread, spread)

    steps = range(1, solution.steps + 1) if t is None else [max(1, solution.grid.index(t))]
    residuals = []
    for n in steps:
        t_n = float(solution.times[n])
        u, u_prev = np.asarray(solution.states[n], dtype=float), np.asarray(solution.states[n - 1], dtype=float)
        M = structure.mass_matrix(t_n)
        velocity = M @ (u - u_prev) / h
        energy = problem.energy(t_n, u)
        for y in trials:
            other = problem.energy(t_n, y)
            value = float(velocity @ (u - y)) + energy - other
            residuals.append(value / max(1.0, abs(other)))
    return ResidualReport(residuals=tuple(residuals), tol=tol)
