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
from logging import getLogger
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss

from classes.errors import ConvergenceError, DomainError, OrderingError, SchemeError, StepError
from classes.report import ConvergenceTable
from classes.space import TimeGrid
from flows.mms_engine.problem import DiscreteSolution, Interpolant, State, StepDiagnostics, StepProblem

__all__ = (
    "mm_step",
    "variational_interpolant",
    "interpolate_step",
    "run_scheme",
    "refine_study",
)

logger = getLogger(__name__)

GRADED_PANELS = 3
INTERP_TOL = 1e-5
MAX_DEPTH = 6


def mm_step(problem: StepProblem, x_prev: State, t_prev: float, t_n: float) -> tuple[State, StepDiagnostics]:
    """One minimizing-movement step: argmin E_{t_n}(x) + d²_{t_n}(x, x_prev)/(2h).

    Parameters
    ----------
    problem : StepProblem
        Problem providing energy, metric and inner solver
    x_prev : State
        Previous minimizer
    t_prev : float
        Previous node
    t_n : float
        Current node, t_prev + h

    Returns
    -------
    tuple[State, StepDiagnostics]
        Minimizer plus achieved objective and the slope bound d_{t_n}(x, x_prev)/h

    Raises
    ------
    StepError
        Inner solver failure, or a minimizer whose objective exceeds the one at x_prev
    """
    h = t_n - t_prev
    if not h > 0:
        raise DomainError(f"step must move forward in time, got {t_prev!r} -> {t_n!r}")

    try:
        x = problem.inner_solver(t_n, h, x_prev, t_n)
    except ConvergenceError as e:
        raise StepError(f"inner solver failed at t={t_n!r}", residual=e.residual) from e

    start = problem.energy(t_n, x_prev)
    distance = problem.metric(t_n, x, x_prev)
    objective = problem.energy(t_n, x) + distance**2 / (2 * h)
    if objective > start + problem.tol + 1e-12 * abs(start):
        raise StepError(f"step at t={t_n!r} increased the objective", residual=objective - start)

    return x, StepDiagnostics(objective=objective, distance=distance, slope_bound=distance / h, start_objective=start)


def variational_interpolant(problem: StepProblem, x_prev: State, t_prev: float, t_n: float, r: float) -> State:
    """argmin E_r(x) + d²_{t_n}(x, x_prev)/(2(r − t_prev)), which equals the step minimizer at r = t_n."""
    if not t_prev < r <= t_n:
        raise DomainError(f"interpolation time {r!r} outside ({t_prev!r}, {t_n!r}]")
    try:
        return problem.inner_solver(r, r - t_prev, x_prev, t_n)
    except ConvergenceError as e:
        raise StepError(f"inner solver failed at interpolation time r={r!r}", residual=e.residual) from e


def _panel(
    problem: StepProblem,
    x_prev: State,
    t_prev: float,
    t_n: float,
    a: float,
    b: float,
    rule: tuple[np.ndarray, np.ndarray],
) -> Interpolant:
    reference, reference_weights = rule
    times = a + (b - a) * (1.0 + reference) / 2.0
    states = [variational_interpolant(problem, x_prev, t_prev, t_n, float(r)) for r in times]
    return Interpolant(
        nodes=tuple(float(r) for r in times),
        weights=tuple(float(w) for w in (b - a) * reference_weights / 2.0),
        states=tuple(states),
        slopes=tuple(float(problem.metric(t_n, x, x_prev) / (r - t_prev)) for r, x in zip(times, states)),
    )


def _balance(problem: StepProblem, panel: Interpolant) -> float:
    """½∫Dsl² − ∫∂_r E_r(x̃_r) over one panel."""
    return math.fsum(
        w * (0.5 * s**2 - problem.energy_rate(r, x))
        for w, r, x, s in zip(panel.weights, panel.nodes, panel.states, panel.slopes)
    )


def _refine(
    problem: StepProblem,
    x_prev: State,
    t_prev: float,
    t_n: float,
    a: float,
    b: float,
    coarse: Interpolant,
    rule: tuple[np.ndarray, np.ndarray],
    rate: float,
    depth: int,
) -> list[Interpolant]:
    """Bisect [a, b] until the halves agree with the whole panel to `rate`·(b − a)."""
    mid = (a + b) / 2
    left = _panel(problem, x_prev, t_prev, t_n, a, mid, rule)
    right = _panel(problem, x_prev, t_prev, t_n, mid, b, rule)
    estimate = abs(_balance(problem, left) + _balance(problem, right) - _balance(problem, coarse))
    if estimate <= rate * (b - a) or depth <= 1:
        return [left, right]
    return [
        *_refine(problem, x_prev, t_prev, t_n, a, mid, left, rule, rate, depth - 1),
        *_refine(problem, x_prev, t_prev, t_n, mid, b, right, rule, rate, depth - 1),
    ]


def _merge(panels: Sequence[Interpolant]) -> Interpolant:
    order = sorted(range(len(panels)), key=lambda k: panels[k].nodes[0])
    return Interpolant(
        nodes=tuple(r for k in order for r in panels[k].nodes),
        weights=tuple(w for k in order for w in panels[k].weights),
        states=tuple(x for k in order for x in panels[k].states),
        slopes=tuple(s for k in order for s in panels[k].slopes),
    )


def interpolate_step(
    problem: StepProblem,
    x_prev: State,
    t_prev: float,
    t_n: float,
    nodes: int = 3,
    panels: int = GRADED_PANELS,
    rate: Optional[float] = None,
    depth: int = MAX_DEPTH,
) -> Interpolant:
    """Variational interpolants of one step at Gauss-Legendre nodes of graded panels.

    Panels halve towards t_prev: (t_prev, t_prev + h/2^{P−1}], ..., [t_prev + h/2, t_n]. With `rate`
    given, each panel is bisected until ½∫Dsl² − ∫∂_r E_r over its halves matches the whole panel
    to `rate` per unit time, at most `depth` times.
    """
    if panels < 1:
        raise DomainError(f"at least one panel is needed, got {panels}")
    h = t_n - t_prev
    rule = leggauss(nodes)
    bounds = [t_prev] + [t_prev + h / 2**k for k in range(panels - 1, -1, -1)]
    collected: list[Interpolant] = []
    for a, b in zip(bounds, bounds[1:]):
        coarse = _panel(problem, x_prev, t_prev, t_n, a, b, rule)
        if rate is None:
            collected.append(coarse)
        else:
            collected.extend(_refine(problem, x_prev, t_prev, t_n, a, b, coarse, rule, rate, depth))
    return _merge(collected)


def run_scheme(
    problem: StepProblem,
    x0: State,
    grid: TimeGrid,
    interp_nodes_per_step: int = 3,
    interp_panels: int = GRADED_PANELS,
    interp_tol: Optional[float] = INTERP_TOL,
) -> DiscreteSolution:
    """Forward sweep of the scheme over the grid, caching interpolants for the EDE ledger.

    Every step caches `interp_nodes_per_step` Gauss-Legendre nodes per panel of
    `interpolate_step`; `interp_tol` bounds the bisection estimate over the whole horizon and
    None keeps the graded panels fixed. Zero nodes disables caching.

    Raises
    ------
    SchemeError
        A step failed; `partial` carries the solution up to the last accepted node
    """
    rate = None if interp_tol is None else interp_tol / max(grid.end, grid.h)
    nodes = grid.nodes
    states, speeds, energies = [x0], [], [problem.energy(0.0, x0)]
    interpolants: list[Interpolant] = []
    diagnostics: list[StepDiagnostics] = []

    def partial() -> DiscreteSolution:
        return DiscreteSolution(
            problem=problem,
            grid=grid,
            states=tuple(states),
            speeds=tuple(speeds),
            energies=tuple(energies),
            interpolants=tuple(interpolants),
            diagnostics=tuple(diagnostics),
        )

    for n in range(1, grid.steps + 1):
        t_prev, t_n = float(nodes[n - 1]), float(nodes[n])
        x_prev = states[-1]
        try:
            x, info = mm_step(problem, x_prev, t_prev, t_n)
            if interp_nodes_per_step:
                interpolants.append(
                    interpolate_step(problem, x_prev, t_prev, t_n, interp_nodes_per_step, interp_panels, rate)
                )
        except StepError as e:
            logger.error("Scheme aborted at step %d (t=%g)", n, t_n)
            raise SchemeError(f"step {n} at t={t_n!r} failed: {e}", partial=partial()) from e

        states.append(x)
        speeds.append(info.slope_bound)
        energies.append(problem.energy(t_n, x))
        diagnostics.append(info)

    logger.debug("Scheme on %s finished %d steps with h=%g", problem.space, grid.steps, grid.h)
    return partial()


def refine_study(
    problem: StepProblem,
    x0: State,
    h_list: Sequence[float],
    eval_times: Optional[Sequence[float]] = None,
    T: Optional[float] = None,
    reference: Optional[Callable[[float], State]] = None,
    label: str = "refine",
) -> ConvergenceTable:
    """Distances between trajectories under step refinement, with fitted observed order.

    Without a reference, row i holds the largest distance between the runs at h_i and h_{i+1}
    over `eval_times`; with a reference callable, the distance of run h_i to it.
    """
    h_list = [float(h) for h in h_list]
    if len(h_list) < 3:
        raise OrderingError("refinement studies need at least three step sizes")
    if any(b >= a for a, b in zip(h_list, h_list[1:])):
        raise OrderingError("step sizes must be strictly decreasing")

    T = float(T if T is not None else max(eval_times or [1.0]))
    for h in h_list:
        if abs(T / h - round(T / h)) > 1e-9 * T / h:
            raise OrderingError(f"step {h!r} does not divide T={T!r}")
    eval_times = list(eval_times or [T])

    runs = [run_scheme(problem, x0, TimeGrid(T=T, h=h), interp_nodes_per_step=0) for h in h_list]

    def gap(a: DiscreteSolution, b: Optional[DiscreteSolution]) -> float:
        values = []
        for t in eval_times:
            other = reference(t) if b is None else b.at(t)
            values.append(problem.metric(t, a.at(t), other))
        return float(max(values))

    if reference is None:
        errors = [gap(a, b) for a, b in zip(runs, runs[1:])]
        steps = h_list[:-1]
    else:
        errors = [gap(a, None) for a in runs]
        steps = h_list

    return ConvergenceTable.from_errors(label, steps, errors)
