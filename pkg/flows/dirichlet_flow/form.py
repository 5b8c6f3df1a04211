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
from dataclasses import dataclass, field
from enum import StrEnum
from logging import getLogger
from typing import Callable, Optional

import numpy as np
from numpy.typing import ArrayLike
from scipy.linalg import cho_factor, cho_solve, lu_factor, lu_solve

from classes.errors import DimensionError, DomainError, SolverError
from classes.space import GridGeometry, Matrix, MeasureFamily, TimeGrid, Vector
from flows.mms_engine.problem import StepProblem

__all__ = (
    "HeatScheme",
    "AdjointMode",
    "GraphForm",
    "PropagatorStep",
    "Propagator",
    "AdjointTrajectory",
    "dirichlet_energy",
    "laplacian",
    "heat_step",
    "heat_flow",
    "adjoint_propagator",
    "forward_adjoint_flow",
    "dirichlet_problem",
)

logger = getLogger(__name__)


class HeatScheme(StrEnum):
    ImplicitEuler = "implicit-euler"
    CrankNicolson = "crank-nicolson"


class AdjointMode(StrEnum):
    Algebraic = "algebraic"
    DirectPde = "direct-pde"


@dataclass(frozen=True, slots=True)
class GraphForm:
    """Time-dependent Dirichlet form E_t(u) = ¼ Σ_{i,j} w_t(i,j)(u_i − u_j)² on a weighted graph.

    Attributes
    ----------
    conductance : Callable[[float], Matrix]
        w_t, symmetric, nonnegative, zero diagonal
    measure : MeasureFamily
        Vertex measure family m_t
    lipschitz : float
        L_w with |log w_t − log w_s| <= L_w|t − s| on positive entries
    geometry : GridGeometry, optional
        Grid the form was built on, when it comes from a 1-D torus or interval
    delta : float
        Step of the centered difference used for ∂_t w
    """

    conductance: Callable[[float], Matrix] = field(compare=False)
    measure: MeasureFamily
    lipschitz: float = 0.0
    geometry: Optional[GridGeometry] = None
    delta: float = 1e-6

    @classmethod
    def static(cls, W: ArrayLike, measure: MeasureFamily) -> GraphForm:
        W = np.asarray(W, dtype=float)
        if W.shape != (measure.n_points, measure.n_points):
            raise DimensionError(f"conductance shape {W.shape} does not match {measure.n_points} vertices")
        if not np.array_equal(W, W.T) or np.any(W < 0) or np.any(np.diag(W) != 0):
            raise DomainError("conductances must be symmetric, nonnegative and zero on the diagonal")
        return cls(conductance=lambda t: W, measure=measure)

    @classmethod
    def torus(cls, geometry: GridGeometry, measure: MeasureFamily) -> GraphForm:
        """Nearest-neighbour form w_{k,k+1} = e^{−2g(t)}·(m_{t,k} + m_{t,k+1})/(2Δx²).

        The conductance scaling pairs with distances e^{g(t)}·d, so the graph Laplacian
        approximates the weighted Laplacian of the conformally scaled grid.
        """
        if geometry.n != measure.n_points:
            raise DimensionError(f"grid has {geometry.n} points, measure {measure.n_points}")
        n, dx = geometry.n, geometry.spacing
        left = np.arange(n if geometry.periodic else n - 1)
        right = (left + 1) % n

        def conductance(t: float) -> Matrix:
            m = measure.measure_at(t)
            values = (m[left] + m[right]) / (2 * dx**2) / geometry.scale(t) ** 2
            W = np.zeros((n, n))
            W[left, right] = values
            W[right, left] = values
            return W

        rate = geometry.metric.lipschitz if geometry.metric is not None else 0.0
        return cls(
            conductance=conductance,
            measure=measure,
            lipschitz=2.0 * rate + measure.lipschitz,
            geometry=geometry,
        )

    @property
    def n(self) -> int:
        return self.measure.n_points

    @property
    def T(self) -> float:
        return self.measure.T

    def weights(self, t: float) -> Matrix:
        return np.asarray(self.conductance(t), dtype=float)

    def stiffness(self, t: float) -> Matrix:
        """Un-normalized Laplacian matrix L with (Lu)_i = Σ_j w_t(i,j)(u_i − u_j)."""
        W = self.weights(t)
        return np.diag(W.sum(axis=1)) - W

    def masses(self, t: float) -> Vector:
        return self.measure.measure_at(t)

    def mass_matrix(self, t: float) -> Matrix:
        return np.diag(self.masses(t))

    def gradient(self, t: float, u: ArrayLike) -> Vector:
        return self.stiffness(t) @ np.asarray(u, dtype=float)

    def weights_rate(self, t: float) -> Matrix:
        """∂_t w_t by centered differences, one-sided at the ends of [0, T]."""
        low, high = max(0.0, t - self.delta), min(self.T, t + self.delta)
        return (self.weights(high) - self.weights(low)) / (high - low)

    def energy_rate(self, t: float, u: ArrayLike) -> float:
        u = np.asarray(u, dtype=float)
        gap = u[:, None] - u[None, :]
        return 0.25 * float(np.sum(self.weights_rate(t) * gap**2))

    def norm(self, t: float, u: ArrayLike) -> float:
        u = np.asarray(u, dtype=float)
        return math.sqrt(float(np.sum(self.masses(t) * u**2)))


def _check_vector(form: GraphForm, u: ArrayLike) -> Vector:
    u = np.asarray(u, dtype=float)
    if u.shape != (form.n,):
        raise DimensionError(f"expected a vector of {form.n} values, got shape {u.shape}")
    return u


def dirichlet_energy(form: GraphForm, u: ArrayLike, t: float) -> float:
    u = _check_vector(form, u)
    gap = u[:, None] - u[None, :]
    return 0.25 * float(np.sum(form.weights(t) * gap**2))


def laplacian(form: GraphForm, u: ArrayLike, t: float) -> Vector:
    """(Δ_t u)_i = (1/m_{t,i}) Σ_j w_t(i,j)(u_j − u_i)."""
    u = _check_vector(form, u)
    return -form.gradient(t, u) / form.masses(t)


def _factor(matrix: Matrix, t: float):
    lu, piv = lu_factor(matrix, check_finite=True)
    if np.any(np.diag(lu) == 0):
        raise SolverError(f"singular heat step system at t={t!r}")
    return lu, piv


def _step_matrix(form: GraphForm, t_prev: float, t_n: float, scheme: HeatScheme) -> Matrix:
    """One-step propagator P with u_n = P u_prev."""
    h = t_n - t_prev
    if not h > 0:
        raise DomainError(f"heat step must move forward in time, got {t_prev!r} -> {t_n!r}")

    M = form.mass_matrix(t_n)
    match HeatScheme(scheme):
        case HeatScheme.ImplicitEuler:
            rhs = M
            A = M + h * form.stiffness(t_n)
        case HeatScheme.CrankNicolson:
            previous = form.stiffness(t_prev) / form.masses(t_prev)[:, None]
            rhs = M - 0.5 * h * (M @ previous)
            A = M + 0.5 * h * form.stiffness(t_n)
    return lu_solve(_factor(A, t_n), rhs)


def heat_step(
    u_prev: ArrayLike,
    t_prev: float,
    t_n: float,
    form: GraphForm,
    scheme: HeatScheme | str = HeatScheme.ImplicitEuler,
) -> Vector:
    """One heat step; implicit Euler solves (M_{t_n} + h·L_{t_n}) u = M_{t_n} u_prev.

    Raises
    ------
    SolverError
        Singular step system
    """
    return _step_matrix(form, t_prev, t_n, HeatScheme(scheme)) @ _check_vector(form, u_prev)


@dataclass(frozen=True, slots=True)
class PropagatorStep:
    """One factor mapping values at `source` to values at `target`."""

    source: float
    target: float
    matrix: Matrix
    source_measure: Vector
    target_measure: Vector


@dataclass(frozen=True, slots=True)
class Propagator:
    """Ordered one-step factors from time `s` to time `t`.

    `kind` tags the composition law: "heat" for forward heat factors, "reversed" for the same
    factors read backwards, "adjoint" for algebraic adjoints.
    """

    s: float
    t: float
    steps: tuple[PropagatorStep, ...]
    n: int
    kind: str = "heat"

    @classmethod
    def identity(cls, n: int, t: float, kind: str = "heat") -> Propagator:
        return cls(s=t, t=t, steps=(), n=n, kind=kind)

    def apply(self, u: ArrayLike) -> Vector:
        u = np.asarray(u, dtype=float)
        for step in self.steps:
            u = step.matrix @ u
        return u

    def trajectory(self, u: ArrayLike) -> list[Vector]:
        states = [np.asarray(u, dtype=float)]
        for step in self.steps:
            states.append(step.matrix @ states[-1])
        return states

    def matrix(self) -> Matrix:
        result = np.eye(self.n)
        for step in self.steps:
            result = step.matrix @ result
        return result

    def compose(self, first: Propagator) -> Propagator:
        """self ∘ first, for first ending where self starts."""
        if not math.isclose(first.t, self.s, rel_tol=0, abs_tol=1e-12):
            raise DomainError(f"cannot compose propagators meeting at {first.t!r} and {self.s!r}")
        return Propagator(s=first.s, t=self.t, steps=first.steps + self.steps, n=self.n, kind=self.kind)

    def split(self, k: int) -> tuple[Propagator, Propagator]:
        """(first k factors, remaining factors)."""
        if not 0 <= k <= len(self.steps):
            raise DomainError(f"split index {k} outside 0..{len(self.steps)}")
        middle = self.steps[k].source if k < len(self.steps) else self.t
        return (
            Propagator(s=self.s, t=middle, steps=self.steps[:k], n=self.n, kind=self.kind),
            Propagator(s=middle, t=self.t, steps=self.steps[k:], n=self.n, kind=self.kind),
        )

    def reversed(self) -> Propagator:
        """Same factors read from `t` back to `s`, with source and target of each swapped."""
        steps = tuple(
            PropagatorStep(
                source=step.target,
                target=step.source,
                matrix=step.matrix,
                source_measure=step.target_measure,
                target_measure=step.source_measure,
            )
            for step in reversed(self.steps)
        )
        return Propagator(s=self.t, t=self.s, steps=steps, n=self.n, kind="reversed")

    def pairing_gap(self, adjoint: Propagator, u: ArrayLike, v: ArrayLike) -> float:
        """|⟨P u, v⟩_{m_t} − ⟨u, P* v⟩_{m_s}|."""
        if not self.steps:
            return 0.0
        target, source = self.steps[-1].target_measure, self.steps[0].source_measure
        left = float(np.sum(self.apply(u) * np.asarray(v) * target))
        right = float(np.sum(np.asarray(u) * adjoint.apply(v) * source))
        return abs(left - right)


def _grid_times(grid: TimeGrid, s: float, t: Optional[float]) -> list[float]:
    nodes = grid.nodes
    t = grid.end if t is None else t
    first, last = grid.index(s), grid.index(t)
    if not (math.isclose(nodes[first], s, abs_tol=1e-12) and math.isclose(nodes[last], t, abs_tol=1e-12)):
        raise DomainError(f"heat flow endpoints {s!r}, {t!r} must be grid nodes")
    if first > last:
        raise DomainError(f"heat flow needs s <= t, got {s!r} > {t!r}")
    return [float(x) for x in nodes[first : last + 1]]


def heat_flow(
    u0: ArrayLike,
    grid: TimeGrid,
    form: GraphForm,
    scheme: HeatScheme | str = HeatScheme.ImplicitEuler,
    s: float = 0.0,
    t: Optional[float] = None,
) -> tuple[list[Vector], Propagator]:
    """Heat trajectory from s to t on the grid nodes, with the recorded propagator."""
    u0 = _check_vector(form, u0)
    times = _grid_times(grid, s, t)
    steps = tuple(
        PropagatorStep(
            source=a,
            target=b,
            matrix=_step_matrix(form, a, b, HeatScheme(scheme)),
            source_measure=form.masses(a),
            target_measure=form.masses(b),
        )
        for a, b in zip(times, times[1:])
    )
    propagator = Propagator(s=times[0], t=times[-1], steps=steps, n=form.n)
    logger.debug("heat flow %s over %d steps on %d vertices", scheme, len(steps), form.n)
    return propagator.trajectory(u0), propagator


def adjoint_propagator(P: Propagator) -> Propagator:
    """Algebraic adjoint: each factor becomes M_s⁻¹ Pᵀ M_t and the order is reversed."""
    steps = tuple(
        PropagatorStep(
            source=step.target,
            target=step.source,
            matrix=(step.matrix.T * step.target_measure[None, :]) / step.source_measure[:, None],
            source_measure=step.target_measure,
            target_measure=step.source_measure,
        )
        for step in reversed(P.steps)
    )
    return Propagator(s=P.t, t=P.s, steps=steps, n=P.n, kind="adjoint")


@dataclass(frozen=True, slots=True)
class AdjointTrajectory:
    """Densities ρ_n with respect to m_{t_n}; μ_n = ρ_n·m_{t_n}."""

    times: tuple[float, ...]
    densities: tuple[Vector, ...]
    form: GraphForm = field(repr=False)
    mode: AdjointMode = AdjointMode.Algebraic

    def measure(self, k: int) -> Vector:
        return self.densities[k] * self.form.masses(self.times[k])

    def masses(self) -> list[float]:
        return [float(self.measure(k).sum()) for k in range(len(self.times))]

    def at(self, t: float) -> Vector:
        """Density at the node closest to t."""
        k = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        return self.densities[k]


def forward_adjoint_flow(
    rho0: ArrayLike,
    grid: TimeGrid,
    form: GraphForm,
    mode: AdjointMode | str = AdjointMode.Algebraic,
) -> AdjointTrajectory:
    """Forward-in-time adjoint heat flow ∂ρ = Δ_tρ + ρ∂_t f_t.

    The algebraic mode applies the adjoint of the reversed implicit-Euler propagator, which is
    (M_{t_n} + hL_{t_n})ρ_n = M_{t_{n−1}}ρ_{n−1} and conserves Σρm_t exactly. The direct mode
    solves (I + hM⁻¹L − h·diag(∂_t f))ρ_n = ρ_{n−1}.
    """
    rho0 = _check_vector(form, rho0)
    if np.any(rho0 < 0):
        raise DomainError("densities must be nonnegative")

    times = [float(t) for t in grid.nodes]
    match AdjointMode(mode):
        case AdjointMode.Algebraic:
            _, heat = heat_flow(np.ones(form.n), grid, form)
            densities = adjoint_propagator(heat.reversed()).trajectory(rho0)
        case AdjointMode.DirectPde:
            densities = [rho0]
            identity = np.eye(form.n)
            for a, b in zip(times, times[1:]):
                h = b - a
                A = identity + h * form.stiffness(b) / form.masses(b)[:, None] - h * np.diag(form.measure.f_rate(b))
                densities.append(lu_solve(_factor(A, b), densities[-1]))

    return AdjointTrajectory(times=tuple(times), densities=tuple(densities), form=form, mode=AdjointMode(mode))


def dirichlet_problem(form: GraphForm, u0: Optional[ArrayLike] = None) -> StepProblem:
    """The Dirichlet energy under the weighted norms ‖u‖²_t = Σ m_t u² as a minimizing-movement problem.

    The inner solver minimizes E_t(u) + ‖u − anchor‖²_{t_metric}/(2τ) through a Cholesky
    factorization of L_t + M_{t_metric}/τ. With `u0` given, L* = L_w·E_0(u0)·e^{L_w T}, which
    bounds |∂_t E_t| on every state the scheme reaches from u0.
    """

    def metric(t: float, x: ArrayLike, y: ArrayLike) -> float:
        return form.norm(t, np.asarray(x) - np.asarray(y))

    def inner_solver(t: float, tau: float, anchor: ArrayLike, t_metric: float) -> Vector:
        m = form.masses(t_metric)
        A = form.stiffness(t) + np.diag(m) / tau
        return cho_solve(cho_factor(A), m * np.asarray(anchor, dtype=float) / tau)

    def slope(t_metric: float, t: float, x: ArrayLike) -> float:
        return math.sqrt(float(np.sum(form.gradient(t, x) ** 2 / form.masses(t_metric))))

    lipschitz = math.inf
    if u0 is not None:
        lipschitz = form.lipschitz * dirichlet_energy(form, u0, 0.0) * math.exp(form.lipschitz * form.T)

    return StepProblem(
        metric=metric,
        energy=lambda t, x: dirichlet_energy(form, x, t),
        energy_rate=form.energy_rate,
        inner_solver=inner_solver,
        lower_bound=0.0,
        lipschitz=lipschitz,
        tol=1e-12,
        space="graph" if form.geometry is None else ("torus" if form.geometry.periodic else "interval"),
        slope=slope,
    )

