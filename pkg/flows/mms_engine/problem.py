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

from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Protocol

import numpy as np

from classes.space import TimeGrid

__all__ = (
    "State",
    "InnerSolver",
    "StepProblem",
    "StepDiagnostics",
    "Interpolant",
    "DiscreteSolution",
    "scalar_quadratic_problem",
    "zero_energy_problem",
)

State = Any


class InnerSolver(Protocol):
    def __call__(self, t: float, tau: float, anchor: State, t_metric: float) -> State:
        """Minimize E_t(x) + d²_{t_metric}(x, anchor)/(2·tau)."""
        ...


@dataclass(frozen=True, slots=True)
class StepProblem:
    """Abstract time-dependent problem the minimizing-movement engine runs on.

    `lower_bound` is the uniform lower bound of the energies, `lipschitz` the constant L* of
    |E_t(x) − E_s(x)| <= L*|t − s| and `tol` the objective tolerance of the inner solver.
    `slope(t_metric, t, x)`, when given, is the metric slope |∇_{t_metric} E_t|(x).
    """

    metric: Callable[[float, State, State], float]
    energy: Callable[[float, State], float]
    energy_rate: Callable[[float, State], float]
    inner_solver: InnerSolver
    lower_bound: float = 0.0
    lipschitz: float = 0.0
    tol: float = 1e-12
    space: str = "abstract"
    slope: Optional[Callable[[float, float, State], float]] = None

    def objective(self, t: float, tau: float, x: State, anchor: State, t_metric: float) -> float:
        return self.energy(t, x) + self.metric(t_metric, x, anchor) ** 2 / (2 * tau)


@dataclass(frozen=True, slots=True)
class StepDiagnostics:
    objective: float
    distance: float
    slope_bound: float
    start_objective: float


@dataclass(frozen=True, slots=True)
class Interpolant:
    """Variational interpolants of one step at the quadrature nodes r_k."""

    nodes: tuple[float, ...]
    weights: tuple[float, ...]
    states: tuple[State, ...]
    slopes: tuple[float, ...]


@dataclass(frozen=True, slots=True)
class DiscreteSolution:
    problem: StepProblem = field(repr=False)
    grid: TimeGrid
    states: tuple[State, ...]
    speeds: tuple[float, ...]
    energies: tuple[float, ...]
    interpolants: tuple[Interpolant, ...] = ()
    diagnostics: tuple[StepDiagnostics, ...] = ()

    @property
    def times(self) -> np.ndarray:
        return self.grid.nodes[: len(self.states)]

    @property
    def steps(self) -> int:
        return len(self.states) - 1

    @property
    def complete(self) -> bool:
        return self.steps == self.grid.steps

    def at(self, t: float) -> State:
        """Piecewise-constant interpolant x̄_t, with x̄_t = x_n for t in (t_{n−1}, t_n]."""
        return self.states[min(self.grid.index(t), self.steps)]

    def slope_series(self) -> list[float]:
        """Dsl at the cached nodes of every step, flattened in time order."""
        return [value for item in self.interpolants for value in item.slopes]


def zero_energy_problem(metric: Optional[Callable[[float, State, State], float]] = None) -> StepProblem:
    """E_t ≡ 0: every step returns its anchor."""
    return StepProblem(
        metric=metric or (lambda t, x, y: float(np.linalg.norm(np.asarray(x) - np.asarray(y)))),
        energy=lambda t, x: 0.0,
        energy_rate=lambda t, x: 0.0,
        inner_solver=lambda t, tau, anchor, t_metric: anchor,
        space="zero",
    )


def scalar_quadratic_problem() -> StepProblem:
    """E_t(x) = (x − t)² on the real line; its flow is x_t = ½e^{−2t} + t − ½ from x_0 = 0.

    L* = 1 holds on the band |x − t| <= ½ that the scheme started at 0 never leaves.
    """
    return StepProblem(
        metric=lambda t, x, y: abs(x - y),
        energy=lambda t, x: (x - t) ** 2,
        energy_rate=lambda t, x: -2.0 * (x - t),
        inner_solver=lambda t, tau, anchor, t_metric: (anchor + 2.0 * tau * t) / (1.0 + 2.0 * tau),
        lower_bound=0.0,
        lipschitz=1.0,
        space="scalar",
        slope=lambda t_metric, t, x: 2.0 * abs(x - t),
    )
