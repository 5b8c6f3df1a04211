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
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import sparse
from scipy.optimize import linprog

from classes.errors import ConvergenceError, DimensionError, MarginalError
from classes.space import MetricFamily

__all__ = (
    "ProbabilityVector",
    "Coupling",
    "DualPotentials",
    "LoglipReport",
    "kantorovich",
    "wasserstein",
    "wasserstein_loglip_check",
    "as_weights",
)

logger = getLogger(__name__)

MASS_TOL = 1e-12
MARGINAL_TOL = 1e-10
HIGHS_OPTIONS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


@dataclass(frozen=True, slots=True)
class ProbabilityVector:
    weights: NDArray[np.float64]

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=float)
        if weights.ndim != 1:
            raise DimensionError("probability vectors are one-dimensional")
        if np.any(weights < 0):
            raise MarginalError("probability weights must be nonnegative")
        if abs(weights.sum() - 1.0) > MASS_TOL:
            raise MarginalError(f"probability weights sum to {weights.sum()!r}, not 1")
        object.__setattr__(self, "weights", weights)

    @classmethod
    def normalized(cls, values: ArrayLike) -> ProbabilityVector:
        values = np.asarray(values, dtype=float)
        return cls(values / values.sum())

    def __len__(self) -> int:
        return self.weights.size

    def __array__(self, dtype=None, copy=None):
        return self.weights if dtype is None else self.weights.astype(dtype)


def as_weights(x: ProbabilityVector | ArrayLike) -> NDArray[np.float64]:
    if isinstance(x, ProbabilityVector):
        return x.weights
    weights = np.asarray(x, dtype=float)
    if weights.ndim != 1:
        raise DimensionError("marginals must be one-dimensional")
    if np.any(weights < 0):
        raise MarginalError("marginals must be nonnegative")
    return weights


@dataclass(frozen=True, slots=True)
class Coupling:
    plan: NDArray[np.float64]
    source: NDArray[np.float64]
    target: NDArray[np.float64]

    @property
    def marginal_residual(self) -> float:
        rows = np.abs(self.plan.sum(axis=1) - self.source).max(initial=0.0)
        cols = np.abs(self.plan.sum(axis=0) - self.target).max(initial=0.0)
        return float(max(rows, cols))

    def cost(self, cost: NDArray[np.float64]) -> float:
        return float(np.sum(cost * self.plan))

    def transposed(self) -> Coupling:
        return Coupling(self.plan.T.copy(), self.target, self.source)


@dataclass(frozen=True, slots=True)
class DualPotentials:
    phi: NDArray[np.float64]
    psi: NDArray[np.float64]
    gap: float

    def feasibility_excess(self, cost: NDArray[np.float64]) -> float:
        """Largest value of φ_i + ψ_j − c_ij; nonpositive for feasible duals."""
        return float(np.max(self.phi[:, None] + self.psi[None, :] - cost))


def _c_transform(cost: NDArray[np.float64], potential: NDArray[np.float64], axis: int) -> NDArray[np.float64]:
    if axis == 1:
        return np.min(cost - potential[None, :], axis=1)
    return np.min(cost - potential[:, None], axis=0)


def kantorovich(
    mu: ProbabilityVector | ArrayLike,
    nu: ProbabilityVector | ArrayLike,
    D: ArrayLike,
) -> tuple[float, Coupling, DualPotentials]:
    """Exact squared L²-Kantorovich distance with cost D².

    The transport LP is solved with the HiGHS dual simplex, which returns a vertex-optimal plan.
    Zero-mass points stay out of the LP and get zero rows/columns in the plan.
    Duals come from the equality-constraint marginals, are extended and tightened by c-transforms
    and shifted so that ψ[0] = 0.

    Parameters
    ----------
    mu : ProbabilityVector | ArrayLike
        Source marginal
    nu : ProbabilityVector | ArrayLike
        Target marginal
    D : ArrayLike
        Distance matrix, shape (len(mu), len(nu))

    Returns
    -------
    tuple[float, Coupling, DualPotentials]
        W², optimal plan and dual potentials with their duality gap
    """
    mu, nu = as_weights(mu), as_weights(nu)
    cost = np.asarray(D, dtype=float) ** 2
    n, k = mu.size, nu.size
    if cost.shape != (n, k):
        raise DimensionError(f"cost shape {cost.shape} does not match marginals ({n}, {k})")
    if abs(mu.sum() - nu.sum()) > MARGINAL_TOL * max(1.0, mu.sum()):
        raise MarginalError(f"marginal masses differ: {mu.sum()!r} vs {nu.sum()!r}")

    # the LP runs on the supports with ν rescaled to μ's mass, so both sides balance exactly
    rows, cols = mu > 0, nu > 0
    a, b = mu[rows], nu[cols]
    if b.size:
        b = b * (a.sum() / b.sum())
    sub = cost[np.ix_(rows, cols)]
    r, c = a.size, b.size

    A_rows = sparse.kron(sparse.eye(r), np.ones((1, c)))
    A_cols = sparse.kron(np.ones((1, r)), sparse.eye(c))
    result = linprog(
        sub.ravel(),
        A_eq=sparse.vstack([A_rows, A_cols]).tocsr(),
        b_eq=np.concatenate([a, b]),
        bounds=(0, None),
        method="highs-ds",
        options=HIGHS_OPTIONS,
    )
    if result.status == 2:
        raise MarginalError("transport problem is infeasible for the given marginals")
    if not result.success:
        raise ConvergenceError(f"exact transport solve failed: {result.message}")

    plan = np.zeros((n, k))
    plan[np.ix_(rows, cols)] = np.maximum(result.x.reshape(r, c), 0.0)
    # support duals extend to every point by c-transforms, which keeps them feasible
    psi = np.asarray(result.eqlin.marginals[r:], dtype=float)
    phi = _c_transform(cost[:, cols], psi, axis=1)
    psi = _c_transform(cost, phi, axis=0)
    phi = _c_transform(cost, psi, axis=1)
    shift = psi[0]
    phi, psi = phi + shift, psi - shift

    primal = float(np.sum(cost * plan))
    dual = float(mu @ phi + nu @ psi)
    logger.debug("kantorovich n=%d k=%d W2=%.17g gap=%.3e", n, k, primal, primal - dual)
    return primal, Coupling(plan, mu, nu), DualPotentials(phi, psi, primal - dual)


def wasserstein(mu: ProbabilityVector | ArrayLike, nu: ProbabilityVector | ArrayLike, D: ArrayLike) -> float:
    value, _, _ = kantorovich(mu, nu, D)
    return math.sqrt(max(value, 0.0))


@dataclass(frozen=True, slots=True)
class LoglipReport:
    worst_ratio: float
    declared: float
    pairs: int
    tol: float = 1e-9

    @property
    def ok(self) -> bool:
        return self.worst_ratio <= self.declared + self.tol


def wasserstein_loglip_check(
    family: MetricFamily,
    mu: ProbabilityVector | ArrayLike,
    nu: ProbabilityVector | ArrayLike,
    sample_times: Sequence[float],
) -> LoglipReport:
    """Worst |log W_t/W_s| / |t − s| over sampled pairs, against the family's declared L."""
    times = sorted(set(float(t) for t in sample_times))
    distances = {t: wasserstein(mu, nu, family.metric_at(t)) for t in times}

    worst, pairs = 0.0, 0
    for s, t in combinations(times, 2):
        if distances[s] > 0 and distances[t] > 0:
            pairs += 1
            worst = max(worst, abs(math.log(distances[t] / distances[s])) / (t - s))
    return LoglipReport(worst_ratio=worst, declared=family.lipschitz, pairs=pairs)
