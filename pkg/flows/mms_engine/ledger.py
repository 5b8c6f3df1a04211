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
from itertools import combinations
from logging import getLogger

from classes.errors import DomainError
from flows.mms_engine.problem import DiscreteSolution

__all__ = (
    "LedgerStep",
    "EdeLedger",
    "AprioriReport",
    "ProximityReport",
    "SlopeReport",
    "ede_ledger",
    "apriori_check",
    "monotone_proximity_check",
    "slope_bound_check",
)

logger = getLogger(__name__)

QUADRATURE_TOL = 1e-4
REL_SLACK = 1e-9


@dataclass(frozen=True, slots=True)
class LedgerStep:
    """Terms of the discrete energy-dissipation identity on (t_{n−1}, t_n].

    `residual` is signed: E_n + half_speed + half_slope − E_{n−1} − drift.
    """

    t: float
    energy_before: float
    energy_after: float
    half_speed: float
    half_slope: float
    drift: float

    @property
    def energy_drop(self) -> float:
        return self.energy_before - self.energy_after

    @property
    def lhs(self) -> float:
        return self.energy_after + self.half_speed + self.half_slope

    @property
    def rhs(self) -> float:
        return self.energy_before + self.drift

    @property
    def residual(self) -> float:
        return self.lhs - self.rhs


@dataclass(frozen=True, slots=True)
class EdeLedger:
    steps: tuple[LedgerStep, ...]
    budget: float

    @property
    def cumulative_residual(self) -> float:
        """|LHS − RHS| of the identity summed over [0, t_N]."""
        return abs(math.fsum(step.residual for step in self.steps))

    @property
    def max_residual(self) -> float:
        return max((abs(step.residual) for step in self.steps), default=0.0)

    @property
    def ok(self) -> bool:
        return self.cumulative_residual <= self.budget

    def cumulative(self) -> list[float]:
        """Running |LHS − RHS| from 0 to each node."""
        total, values = 0.0, []
        for step in self.steps:
            total += step.residual
            values.append(abs(total))
        return values


def ede_ledger(solution: DiscreteSolution, quadrature_tol: float = QUADRATURE_TOL) -> EdeLedger:
    """Both sides of the discrete energy-dissipation identity, per step and cumulatively.

    ½∫Dsl² and ∫∂_r E_r(x̃_r) use the Gauss-Legendre nodes cached by `run_scheme`.
    The budget is the inner-solver tolerance times the step count plus `quadrature_tol`.
    """
    if not solution.complete:
        raise DomainError("the ledger needs a complete solution")
    if solution.steps and len(solution.interpolants) != solution.steps:
        raise DomainError("the ledger needs interpolants cached at every step")

    problem = solution.problem
    h = solution.grid.h
    steps = []
    for n, cache in enumerate(solution.interpolants, start=1):
        steps.append(
            LedgerStep(
                t=float(solution.times[n]),
                energy_before=solution.energies[n - 1],
                energy_after=solution.energies[n],
                half_speed=0.5 * h * solution.speeds[n - 1] ** 2,
                half_slope=0.5 * math.fsum(w * s**2 for w, s in zip(cache.weights, cache.slopes)),
                drift=math.fsum(
                    w * problem.energy_rate(r, x) for w, r, x in zip(cache.weights, cache.nodes, cache.states)
                ),
            )
        )

    ledger = EdeLedger(steps=tuple(steps), budget=problem.tol * solution.steps + quadrature_tol)
    logger.debug(
        "EDE ledger over %d steps: residual %.3e (budget %.3e)", len(steps), ledger.cumulative_residual, ledger.budget
    )
    return ledger


@dataclass(frozen=True, slots=True)
class AprioriReport:
    """Left and right sides of the a-priori bounds, plus the fitted proximity constant C₃."""

    energy_peak: float
    energy_bound: float
    dissipation: float
    dissipation_bound: float
    c3: float
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations


def _slack(value: float) -> float:
    return REL_SLACK * max(1.0, abs(value))


def apriori_check(solution: DiscreteSolution) -> AprioriReport:
    """Uniform energy, dissipation and proximity bounds along a discrete solution."""
    problem = solution.problem
    grid = solution.grid
    L = problem.lipschitz
    E0 = solution.energies[0]
    horizon = grid.end
    violations: list[str] = []

    energy_bound = E0 + L * horizon
    peak = max(solution.energies)
    if peak > energy_bound + _slack(energy_bound):
        violations.append(f"node energy {peak:.6g} exceeds {energy_bound:.6g}")

    c3 = 0.0
    for n, cache in enumerate(solution.interpolants, start=1):
        t_prev, t_n = float(solution.times[n - 1]), float(solution.times[n])
        x_n = solution.states[n]
        for r, x in zip(cache.nodes, cache.states):
            energy = problem.energy(r, x)
            peak = max(peak, energy)
            if energy > energy_bound + _slack(energy_bound):
                violations.append(f"interpolant energy {energy:.6g} at r={r:.6g} exceeds {energy_bound:.6g}")
            local = solution.energies[n - 1] + L * (r - t_prev)
            if energy > local + _slack(local):
                violations.append(f"interpolant energy {energy:.6g} at r={r:.6g} exceeds step bound {local:.6g}")
            c3 = max(c3, problem.metric(t_n, x, x_n) ** 2 / grid.h)

    dissipation = math.fsum(
        problem.metric(float(t), b, a) ** 2 / (2 * grid.h)
        for t, a, b in zip(solution.times[1:], solution.states, solution.states[1:])
    )
    dissipation_bound = E0 - problem.lower_bound + L * horizon
    if dissipation > dissipation_bound + _slack(dissipation_bound):
        violations.append(f"dissipation {dissipation:.6g} exceeds {dissipation_bound:.6g}")
    if not math.isfinite(c3):
        violations.append("proximity constant is not finite")

    return AprioriReport(
        energy_peak=peak,
        energy_bound=energy_bound,
        dissipation=dissipation,
        dissipation_bound=dissipation_bound,
        c3=c3,
        violations=tuple(violations),
    )


@dataclass(frozen=True, slots=True)
class ProximityReport:
    pairs: int
    worst_excess: float
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations


def monotone_proximity_check(solution: DiscreteSolution) -> ProximityReport:
    """d²(x̃_{r1}, x_{n−1}) <= d²(x̃_{r2}, x_{n−1}) + 4·r1·r2·L* for cached r1 < r2.

    Offsets r are measured from t_{n−1}; the step minimizer joins the cached nodes as r = t_n.
    """
    problem = solution.problem
    L = problem.lipschitz
    pairs, worst = 0, -math.inf
    violations: list[str] = []

    for n, cache in enumerate(solution.interpolants, start=1):
        t_prev, t_n = float(solution.times[n - 1]), float(solution.times[n])
        x_prev = solution.states[n - 1]
        offsets = [r - t_prev for r in cache.nodes] + [t_n - t_prev]
        squared = [problem.metric(t_n, x, x_prev) ** 2 for x in (*cache.states, solution.states[n])]
        for (a, r1), (b, r2) in combinations(enumerate(offsets), 2):
            pairs += 1
            excess = squared[a] - squared[b] - 4.0 * r1 * r2 * L
            worst = max(worst, excess)
            if excess > _slack(squared[b]):
                violations.append(f"step {n}: offsets {r1:.3g} < {r2:.3g} break monotone proximity by {excess:.3e}")

    return ProximityReport(pairs=pairs, worst_excess=worst if pairs else 0.0, violations=tuple(violations))


@dataclass(frozen=True, slots=True)
class SlopeReport:
    nodes: int
    worst_slope_excess: float
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations


def slope_bound_check(solution: DiscreteSolution) -> SlopeReport:
    """Consistency of the discrete speed and slope series.

    Dsp_n must equal d_{t_n}(x_n, x_{n−1})/h, every cached Dsl must be finite and, when the
    problem knows its metric slope, |∇_{t_n} E_r|(x̃_r) <= Dsl_r.
    """
    problem = solution.problem
    h = solution.grid.h
    nodes, worst = 0, -math.inf
    violations: list[str] = []

    for n in range(1, solution.steps + 1):
        t_n = float(solution.times[n])
        expected = problem.metric(t_n, solution.states[n], solution.states[n - 1]) / h
        if abs(solution.speeds[n - 1] - expected) > _slack(expected):
            violations.append(f"step {n}: recorded speed {solution.speeds[n - 1]:.6g} differs from {expected:.6g}")

    for n, cache in enumerate(solution.interpolants, start=1):
        t_n = float(solution.times[n])
        for r, x, dsl in zip(cache.nodes, cache.states, cache.slopes):
            nodes += 1
            if not math.isfinite(dsl):
                violations.append(f"step {n}: slope at r={r:.6g} is not finite")
                continue
            if problem.slope is not None:
                excess = problem.slope(t_n, r, x) - dsl
                worst = max(worst, excess)
                if excess > _slack(dsl):
                    violations.append(f"step {n}: metric slope at r={r:.6g} exceeds Dsl by {excess:.3e}")

    return SlopeReport(nodes=nodes, worst_slope_excess=worst if nodes else 0.0, violations=tuple(violations))
