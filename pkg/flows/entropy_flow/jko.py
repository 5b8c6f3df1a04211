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
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike
from scipy import sparse
from scipy.optimize import minimize
from scipy.sparse.csgraph import breadth_first_order, connected_components
from scipy.special import logsumexp

from classes.errors import ConvergenceError, DimensionError, MarginalError
from classes.space import Matrix, MeasureFamily, MetricFamily, TimeGrid, Vector
from flows.mms_engine.problem import DiscreteSolution, StepProblem
from flows.mms_engine.scheme import run_scheme
from flows.transport.exact import MASS_TOL, as_weights, kantorovich, wasserstein

__all__ = (
    "Backend",
    "EntropyFunctional",
    "EntropyJkoProblem",
    "jko_step",
    "jko_run",
    "solve_jko",
    "jko_objective",
)

logger = getLogger(__name__)

ARMIJO = 1e-4
EPS_FLOOR = 1e-3
ACTIVE_TOL = 1e-9
FLOOR = 1e-14
POLISH_ROUNDS = 5


class Backend(StrEnum):
    ExactSmall = "exact-small"
    Scaling = "scaling"


def _xlogx_ratio(mu: Vector, m: Vector) -> float:
    positive = mu > 0
    return float(np.sum(mu[positive] * np.log(mu[positive] / m[positive])))


@dataclass(frozen=True, slots=True)
class EntropyFunctional:
    """Relative entropy S_t(μ) = Σ μ log(μ/m_t) with 0·log 0 = 0."""

    measure: MeasureFamily

    def _weights(self, mu: ArrayLike) -> Vector:
        mu = as_weights(mu)
        if mu.size != self.measure.n_points:
            raise DimensionError(f"measure has {mu.size} entries, space has {self.measure.n_points} points")
        return mu

    def relative_entropy(self, mu: ArrayLike, t: float) -> float:
        return _xlogx_ratio(self._weights(mu), self.measure.measure_at(t))

    def split_entropy(self, mu: ArrayLike, t: float) -> float:
        """The same value as Ent(μ|m) + Σ f_t μ."""
        mu = self._weights(mu)
        return _xlogx_ratio(mu, self.measure.base) + float(self.measure.f_at(t) @ mu)

    def entropy_rate(self, mu: ArrayLike, t: float) -> float:
        """∂_t S_t(μ) = Σ ∂_t f_t μ."""
        return float(self.measure.f_rate(t) @ self._weights(mu))

    @property
    def lower_bound(self) -> float:
        """−‖f‖_∞ − log Σm, which is −‖f‖_∞ for a probability base measure."""
        return -self.measure.bound - math.log(float(self.measure.base.sum()))

    def minimizer(self, t: float) -> Vector:
        m = self.measure.measure_at(t)
        return m / m.sum()


def jko_objective(nu: Vector, mu_prev: Vector, masses: Vector, D: Matrix, tau: float) -> float:
    value, _, _ = kantorovich(mu_prev, nu, D)
    return _xlogx_ratio(nu, masses) + value / (2 * tau)


def _dual_start(weights: Vector, masses: Vector, A: Matrix) -> tuple[Vector, Vector]:
    """Approximately maximize Σμα − Σ m e^{−ψ−1} subject to α_i + ψ_j <= A_ij by SLSQP.

    `weights` and the rows of `A` cover the support of μ only; returns (α, ψ).
    """
    r, k = A.shape

    def objective(z: Vector) -> tuple[float, Vector]:
        alpha, psi = z[:r], z[r:]
        exp = masses * np.exp(-psi - 1.0)
        return -(weights @ alpha - exp.sum()), -np.concatenate([weights, exp])

    jacobian = np.zeros((r * k, r + k))
    index = np.arange(r * k)
    jacobian[index, index // k] = -1.0
    jacobian[index, r + index % k] = -1.0
    constraint = {
        "type": "ineq",
        "fun": lambda z: (A - z[:r, None] - z[None, r:]).ravel(),
        "jac": lambda z: jacobian,
    }
    result = minimize(
        objective,
        np.zeros(r + k),
        jac=True,
        method="SLSQP",
        constraints=[constraint],
        options={"ftol": 1e-14, "maxiter": 1000},
    )
    return result.x[:r], result.x[r:]


def _dual_value(weights: Vector, masses: Vector, A: Matrix, psi: Vector) -> tuple[float, Vector]:
    """Dual objective at (α, ψ) with α = min_j (A_ij − ψ_j), which makes the pair feasible."""
    alpha = np.min(A - psi[None, :], axis=1)
    return float(weights @ alpha - np.sum(masses * np.exp(-psi - 1.0))), alpha


def _active_set(weights: Vector, masses: Vector, A: Matrix, alpha: Vector, psi: Vector) -> tuple[Vector, Vector]:
    """Potentials solved exactly on the tight edges α_i + ψ_j = A_ij.

    Tight edges link support rows and columns into components; along a spanning tree of each
    component the potentials are fixed up to one constant, which Σ_J m e^{−ψ−1} = μ(R) pins down.
    """
    r = A.shape[0]
    slack = A - alpha[:, None] - psi[None, :]
    tight = sparse.csr_matrix((slack <= ACTIVE_TOL * max(1.0, float(np.abs(A).max()))).astype(float))
    graph = sparse.bmat([[None, tight], [tight.T, None]]).tocsr()
    count, labels = connected_components(graph, directed=False)

    alpha, psi = alpha.copy(), psi.copy()
    for component in range(count):
        members = np.flatnonzero(labels == component)
        rows, cols = members[members < r], members[members >= r] - r
        if not rows.size or not cols.size:
            continue
        order, predecessors = breadth_first_order(graph, int(rows[0]), directed=False)
        for node in order[1:]:
            parent = predecessors[node]
            if node >= r:
                psi[node - r] = A[parent, node - r] - alpha[parent]
            else:
                alpha[node] = A[node, parent - r] - psi[parent - r]
        shift = float(logsumexp(np.log(masses[cols]) - psi[cols] - 1.0)) - math.log(float(weights[rows].sum()))
        psi[cols] += shift
        alpha[rows] -= shift
    return alpha, psi


def _floored(nu: Vector) -> Vector:
    nu = np.maximum(nu / nu.sum(), FLOOR)
    return nu / nu.sum()


def _mirror_descent(
    mu: Vector, masses: Vector, D: Matrix, tau: float, tol: float, max_iter: int, nu: Vector
) -> tuple[Vector, float]:
    """Entropic mirror descent on ν with Armijo steps; iterates stay on the floored simplex."""
    nu = _floored(nu)
    value, _, duals = kantorovich(mu, nu, D)
    current = _xlogx_ratio(nu, masses) + value / (2 * tau)

    for iteration in range(max_iter):
        gradient = np.log(nu / masses) + 1.0 + duals.psi / (2 * tau)
        eta = 1.0
        while eta > 1e-12:
            candidate = _floored(nu * np.exp(-eta * (gradient - gradient.max())))
            value, _, candidate_duals = kantorovich(mu, candidate, D)
            trial = _xlogx_ratio(candidate, masses) + value / (2 * tau)
            if trial <= current + ARMIJO * float(gradient @ (candidate - nu)):
                break
            eta /= 2
        else:
            break

        decrease = current - trial
        nu, current, duals = candidate, trial, candidate_duals
        if decrease < tol:
            break

    logger.debug("exact-small mirror descent: %d iterations, objective %.17g", iteration + 1, current)
    return nu, current


def _exact_small(mu: Vector, masses: Vector, D: Matrix, tau: float, tol: float, max_iter: int) -> Vector:
    """Dual start, active-set polish certified by the duality gap, then mirror descent if the gap stays open."""
    support = mu > 0
    weights, A = mu[support], D[support] ** 2 / (2 * tau)
    alpha, psi = _dual_start(weights, masses, A)

    best, best_value, best_dual = None, math.inf, -math.inf
    for _ in range(POLISH_ROUNDS):
        psi = np.min(A - alpha[:, None], axis=0)
        alpha = np.min(A - psi[None, :], axis=1)
        alpha, psi = _active_set(weights, masses, A, alpha, psi)
        dual, alpha = _dual_value(weights, masses, A, psi)
        nu = masses * np.exp(-psi - 1.0)
        nu /= nu.sum()
        value = jko_objective(nu, mu, masses, D, tau)
        best_dual = max(best_dual, dual)
        if value < best_value:
            best, best_value = nu, value
        if best_value - best_dual <= tol:
            logger.debug("exact-small step certified: duality gap %.3e", best_value - best_dual)
            return best

    logger.debug("exact-small polish left a duality gap of %.3e", best_value - best_dual)
    nu, value = _mirror_descent(mu, masses, D, tau, tol, max_iter, best)
    return nu if value < best_value else best


def _scaling(mu: Vector, masses: Vector, D: Matrix, tau: float, tol: float, max_iter: int) -> Vector:
    """Entropic step on the kernel exp(−C/ε), C = d²/(2τ), with the KL prox of the entropy on the ν side.

    ε halves from 1 down to 1e−3·median(C) with warm-started potentials; the last two solutions
    are extrapolated linearly in ε. Each ν-side update is shifted by a constant so the fixed point's
    normalization holds at every iteration.
    """
    rows = mu > 0
    C = D[rows] ** 2 / (2 * tau)
    log_mu, log_m = np.log(mu[rows]), np.log(masses)
    positive = C[C > 0]
    target = EPS_FLOOR * (float(np.median(positive)) if positive.size else 1.0)

    schedule = [1.0]
    while schedule[-1] > target or len(schedule) < 2:
        schedule.append(schedule[-1] / 2)

    potential = np.zeros(masses.size)
    solutions = []
    for eps in schedule:
        log_b = potential / eps
        change = math.inf
        for _ in range(max_iter):
            log_a = log_mu - logsumexp(log_b[None, :] - C / eps, axis=1)
            log_s = logsumexp(log_a[:, None] - C / eps, axis=0)
            updated = (log_m - 1.0 - log_s) / (1.0 + eps)
            # constant shift restoring Σ m e^{−1−ε·log b} = 1, which the fixed point satisfies
            updated += logsumexp(log_m - 1.0 - eps * updated) / eps
            change = eps * float(np.abs(updated - log_b).max())
            log_b = updated
            if change <= tol:
                break
        else:
            raise ConvergenceError(f"scaling iterations stalled at eps={eps:.3g}", residual=change)

        log_a = log_mu - logsumexp(log_b[None, :] - C / eps, axis=1)
        nu = np.exp(logsumexp(log_a[:, None] - C / eps, axis=0) + log_b)
        solutions.append(nu / nu.sum())
        potential = eps * log_b

    (e1, n1), (e2, n2) = zip(schedule[-2:], solutions[-2:])
    extrapolated = n2 + (n2 - n1) * e2 / (e1 - e2)
    if np.any(extrapolated <= 0):
        extrapolated = n2
    logger.debug("scaling step: %d eps levels down to %.3g", len(schedule), schedule[-1])
    return extrapolated / extrapolated.sum()


def solve_jko(
    mu_prev: ArrayLike,
    masses: ArrayLike,
    D: ArrayLike,
    tau: float,
    backend: Backend | str = Backend.ExactSmall,
    tol: float = 1e-10,
    max_iter: int = 500,
) -> Vector:
    """argmin Σ ν log(ν/m) + W²_D(μ_prev, ν)/(2τ) over probability vectors ν.

    Returns μ_prev itself when it already is the normalized m, or when the backend's answer
    only ties with it to within `tol` (a step that leaves the measure in place).

    Raises
    ------
    ConvergenceError
        The backend stalled, or its answer is worse than staying at μ_prev by more than `tol`
    """
    mu = as_weights(mu_prev)
    masses = np.asarray(masses, dtype=float)
    D = np.asarray(D, dtype=float)
    if abs(mu.sum() - 1.0) > MASS_TOL * mu.size:
        raise MarginalError(f"previous measure has mass {mu.sum()!r}")
    mu = mu / mu.sum()
    if np.allclose(mu, masses / masses.sum(), rtol=0, atol=1e-14):
        return mu.copy()

    match Backend(backend):
        case Backend.ExactSmall:
            nu = _exact_small(mu, masses, D, tau, tol, max_iter)
        case Backend.Scaling:
            nu = _scaling(mu, masses, D, tau, tol, max_iter * 40)

    nu = np.maximum(nu, 0.0)
    nu /= nu.sum()
    stay = _xlogx_ratio(mu, masses)
    excess = jko_objective(nu, mu, masses, D, tau) - stay
    if excess > tol * max(1.0, abs(stay)):
        raise ConvergenceError(f"{Backend(backend)} step is worse than staying put by {excess:.3e}", residual=excess)
    if excess >= 0:
        logger.debug("%s step leaves the measure in place (excess %.3e)", Backend(backend), excess)
        return mu.copy()
    return nu


@dataclass(frozen=True, slots=True)
class EntropyJkoProblem:
    functional: EntropyFunctional
    metric: MetricFamily
    backend: Backend = Backend.ExactSmall
    tol: float = 1e-10
    max_iter: int = 500

    @property
    def measure(self) -> MeasureFamily:
        return self.functional.measure

    def distance(self, t: float, mu: ArrayLike, nu: ArrayLike) -> float:
        return wasserstein(mu, nu, self.metric.metric_at(t))

    def as_problem(self) -> StepProblem:
        def inner_solver(t: float, tau: float, anchor: Vector, t_metric: float) -> Vector:
            return jko_step(anchor, t, tau, self, t_metric=t_metric)

        return StepProblem(
            metric=self.distance,
            energy=lambda t, mu: self.functional.relative_entropy(mu, t),
            energy_rate=lambda t, mu: self.functional.entropy_rate(mu, t),
            inner_solver=inner_solver,
            lower_bound=self.functional.lower_bound,
            lipschitz=self.measure.lipschitz,
            tol=self.tol,
            space=f"finite-{self.metric.n_points}",
        )


def jko_step(
    mu_prev: ArrayLike,
    t_n: float,
    h: float,
    problem: EntropyJkoProblem,
    t_metric: Optional[float] = None,
) -> Vector:
    """Minimizer of S_{t_n}(ν) + W²_{t_metric}(μ_prev, ν)/(2h), t_metric defaulting to t_n.

    Raises
    ------
    ConvergenceError
        The scaling backend did not settle at some ε level
    """
    t_metric = t_n if t_metric is None else t_metric
    return solve_jko(
        mu_prev,
        problem.measure.measure_at(t_n),
        problem.metric.metric_at(t_metric),
        h,
        backend=problem.backend,
        tol=problem.tol,
        max_iter=problem.max_iter,
    )


def jko_run(
    mu0: ArrayLike,
    grid: TimeGrid,
    problem: EntropyJkoProblem,
    interp_nodes_per_step: int = 0,
) -> DiscreteSolution:
    """Discrete entropy flow through the minimizing-movement engine; entropies are recorded per node."""
    mu0 = as_weights(mu0).copy()
    return run_scheme(problem.as_problem(), mu0, grid, interp_nodes_per_step=interp_nodes_per_step)
