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
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike
from scipy.linalg import eigh

from classes.errors import ProblemError
from classes.space import Matrix, TimeGrid, Vector
from flows.mms_engine.problem import StepProblem
from flows.mms_engine.scheme import run_scheme

__all__ = (
    "HilbertKind",
    "QuadraticHilbertProblem",
    "HilbertReport",
    "rk4_trajectory",
    "quadratic_testbed_run",
)

logger = getLogger(__name__)

ORACLE_SUBSTEPS = 100
ORACLE_CAP = 20_000


class HilbertKind(StrEnum):
    ScalarExample = "scalar-example"
    Rotating = "rotating"
    Still = "still"


def _constant(value):
    return lambda t: value


@dataclass(frozen=True, slots=True)
class QuadraticHilbertProblem:
    """E_t(x) = ½xᵀQ_t x + b_tᵀx + c_t on ℝⁿ under the inner products ⟨x, y⟩_t = xᵀA_t y.

    `lipschitz` is L with ‖x‖_t <= e^{L|t−s|}‖x‖_s and `energy_lipschitz` the L* of the energies
    on the states the flow visits.
    """

    dimension: int
    inner: Callable[[float], Matrix] = field(compare=False)
    inner_rate: Callable[[float], Matrix] = field(compare=False)
    quadratic: Callable[[float], Matrix] = field(compare=False)
    quadratic_rate: Callable[[float], Matrix] = field(compare=False)
    linear: Callable[[float], Vector] = field(compare=False)
    linear_rate: Callable[[float], Vector] = field(compare=False)
    constant: Callable[[float], float] = field(compare=False)
    constant_rate: Callable[[float], float] = field(compare=False)
    T: float = 1.0
    lipschitz: float = 0.0
    energy_lipschitz: float = 0.0
    kind: str = "custom"

    def __post_init__(self) -> None:
        for t in np.linspace(0.0, self.T, 17):
            A = np.asarray(self.inner(t), dtype=float)
            if A.shape != (self.dimension, self.dimension) or not np.allclose(A, A.T, rtol=0, atol=1e-12):
                raise ProblemError(f"inner product at t={t:.6g} is not a symmetric matrix of size {self.dimension}")
            try:
                np.linalg.cholesky(A)
            except np.linalg.LinAlgError as e:
                raise ProblemError(f"inner product at t={t:.6g} is not positive definite") from e
            if np.linalg.eigvalsh(self.quadratic(t)).min(initial=0.0) < -1e-12:
                raise ProblemError(f"energy Hessian at t={t:.6g} is not positive semidefinite")

    @classmethod
    def scalar_example(cls, T: float = 1.0) -> QuadraticHilbertProblem:
        """E_t(x) = (x − t)² on the real line."""
        return cls(
            dimension=1,
            inner=_constant(np.eye(1)),
            inner_rate=_constant(np.zeros((1, 1))),
            quadratic=_constant(np.array([[2.0]])),
            quadratic_rate=_constant(np.zeros((1, 1))),
            linear=lambda t: np.array([-2.0 * t]),
            linear_rate=_constant(np.array([-2.0])),
            constant=lambda t: t**2,
            constant_rate=lambda t: 2.0 * t,
            T=T,
            energy_lipschitz=1.0,
            kind=HilbertKind.ScalarExample,
        )

    @classmethod
    def rotating(cls, dimension: int = 3, rotation: float = 1.0, T: float = 1.0) -> QuadraticHilbertProblem:
        """E(x) = ½|x|² under A_t = R_t D R_tᵀ.

        D = diag(1, 2, 4, ...) and R_t turns the first coordinate plane at rate `rotation`.
        """
        if dimension < 2:
            raise ProblemError("rotating inner products need at least two dimensions")
        D = np.diag(2.0 ** np.arange(dimension))

        def turn(t: float) -> tuple[Matrix, Matrix]:
            c, s = math.cos(rotation * t), math.sin(rotation * t)
            R, dR = np.eye(dimension), np.zeros((dimension, dimension))
            R[:2, :2] = [[c, -s], [s, c]]
            dR[:2, :2] = rotation * np.array([[-s, -c], [c, -s]])
            return R, dR

        def inner(t: float) -> Matrix:
            R, _ = turn(t)
            return R @ D @ R.T

        def inner_rate(t: float) -> Matrix:
            R, dR = turn(t)
            return dR @ D @ R.T + R @ D @ dR.T

        # d/dt log xᵀA_t x is bounded by the generalized spectrum of (Ȧ_t, A_t), the same at all t
        spread = float(np.abs(eigh(inner_rate(0.0), inner(0.0), eigvals_only=True)).max())
        zero, identity = np.zeros(dimension), np.eye(dimension)
        return cls(
            dimension=dimension,
            inner=inner,
            inner_rate=inner_rate,
            quadratic=_constant(identity),
            quadratic_rate=_constant(np.zeros((dimension, dimension))),
            linear=_constant(zero),
            linear_rate=_constant(zero),
            constant=_constant(0.0),
            constant_rate=_constant(0.0),
            T=T,
            lipschitz=0.5 * spread,
            kind=HilbertKind.Rotating,
        )

    @classmethod
    def still(cls, dimension: int = 2, T: float = 1.0) -> QuadraticHilbertProblem:
        """E ≡ 0 under the Euclidean inner product."""
        zero, zeros = np.zeros(dimension), np.zeros((dimension, dimension))
        return cls(
            dimension=dimension,
            inner=_constant(np.eye(dimension)),
            inner_rate=_constant(zeros),
            quadratic=_constant(zeros),
            quadratic_rate=_constant(zeros),
            linear=_constant(zero),
            linear_rate=_constant(zero),
            constant=_constant(0.0),
            constant_rate=_constant(0.0),
            T=T,
            kind=HilbertKind.Still,
        )

    @property
    def norm_lipschitz(self) -> float:
        return self.lipschitz

    def mass_matrix(self, t: float) -> Matrix:
        return np.asarray(self.inner(t), dtype=float)

    def norm(self, t: float, x: ArrayLike) -> float:
        x = np.asarray(x, dtype=float)
        return math.sqrt(max(float(x @ self.mass_matrix(t) @ x), 0.0))

    def energy(self, t: float, x: ArrayLike) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.quadratic(t) @ x + self.linear(t) @ x + self.constant(t))

    def energy_rate(self, t: float, x: ArrayLike) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.quadratic_rate(t) @ x + self.linear_rate(t) @ x + self.constant_rate(t))

    def gradient(self, t: float, x: ArrayLike) -> Vector:
        """Euclidean gradient Q_t x + b_t; the metric gradient is A_t⁻¹ times it."""
        return self.quadratic(t) @ np.asarray(x, dtype=float) + self.linear(t)

    def velocity(self, t: float, x: ArrayLike) -> Vector:
        return -np.linalg.solve(self.inner(t), self.gradient(t, x))

    def step(self, t: float, tau: float, anchor: ArrayLike, t_metric: float) -> Vector:
        """Solve (A_{t_metric}/τ + Q_t) x = A_{t_metric}·anchor/τ − b_t."""
        A = self.mass_matrix(t_metric)
        return np.linalg.solve(A / tau + self.quadratic(t), A @ np.asarray(anchor, dtype=float) / tau - self.linear(t))

    def as_problem(self) -> StepProblem:
        def slope(t_metric: float, t: float, x: ArrayLike) -> float:
            g = self.gradient(t, x)
            return math.sqrt(max(float(g @ np.linalg.solve(self.mass_matrix(t_metric), g)), 0.0))

        return StepProblem(
            metric=lambda t, x, y: self.norm(t, np.asarray(x) - np.asarray(y)),
            energy=self.energy,
            energy_rate=self.energy_rate,
            inner_solver=self.step,
            lower_bound=0.0,
            lipschitz=self.energy_lipschitz,
            space=f"hilbert-{self.dimension}",
            slope=slope,
        )


def rk4_trajectory(
    f: Callable[[float, Vector], Vector],
    x0: ArrayLike,
    times: ArrayLike,
    substeps: int,
) -> list[Vector]:
    """Classical Runge-Kutta values at `times`, with `substeps` equal steps between consecutive times."""
    times = np.asarray(times, dtype=float)
    x = np.asarray(x0, dtype=float)
    values = [x.copy()]
    for a, b in zip(times, times[1:]):
        dt = (b - a) / substeps
        t = a
        for _ in range(substeps):
            k1 = f(t, x)
            k2 = f(t + dt / 2, x + dt / 2 * k1)
            k3 = f(t + dt / 2, x + dt / 2 * k2)
            k4 = f(t + dt, x + dt * k3)
            x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += dt
        values.append(x.copy())
    return values


@dataclass(frozen=True, slots=True)
class HilbertReport:
    h: float
    sup_error: float
    endpoint: Vector
    oracle_endpoint: Vector
    observed_order: float
    halved_error: float


def _scheme_and_oracle(
    problem: QuadraticHilbertProblem, x0: Vector, grid: TimeGrid
) -> tuple[list[Vector], list[Vector], float]:
    solution = run_scheme(problem.as_problem(), x0, grid, interp_nodes_per_step=0)
    substeps = max(1, min(ORACLE_SUBSTEPS, ORACLE_CAP // grid.steps))
    oracle = rk4_trajectory(problem.velocity, x0, grid.nodes, substeps)
    error = max(
        problem.norm(float(t), np.asarray(x) - y) for t, x, y in zip(grid.nodes, solution.states, oracle)
    )
    return [np.asarray(x, dtype=float) for x in solution.states], oracle, float(error)


def quadratic_testbed_run(
    problem: QuadraticHilbertProblem,
    x0: ArrayLike,
    grid: TimeGrid,
) -> tuple[list[Vector], list[Vector], HilbertReport]:
    """Minimizing-movement trajectory against an RK4 oracle of ẋ = −A_t⁻¹(Q_t x + b_t).

    The oracle steps h/100 (at most 20 000 steps over the horizon); the observed order
    compares the sup-node error at h with a second run at h/2.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (problem.dimension,):
        raise ProblemError(f"initial state must have {problem.dimension} entries")

    states, oracle, error = _scheme_and_oracle(problem, x0, grid)
    _, _, halved = _scheme_and_oracle(problem, x0, grid.refined(2))
    order = math.log2(error / halved) if error > 0 and halved > 0 else math.nan

    logger.info("Quadratic testbed (%s, h=%g): sup error %.3e, observed order %.3f", problem.kind, grid.h, error, order)
    report = HilbertReport(
        h=grid.h,
        sup_error=error,
        endpoint=states[-1],
        oracle_endpoint=oracle[-1],
        observed_order=order,
        halved_error=halved,
    )
    return states, oracle, report
