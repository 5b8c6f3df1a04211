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

from logging import getLogger

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import logsumexp

from classes.errors import ConvergenceError, DimensionError, DomainError, MarginalError
from flows.transport.exact import MARGINAL_TOL, Coupling, ProbabilityVector, as_weights

__all__ = ("sinkhorn",)

logger = getLogger(__name__)

STAGE_ITER = 2_000


def _sweep(
    f: NDArray[np.float64],
    g: NDArray[np.float64],
    C: NDArray[np.float64],
    log_a: NDArray[np.float64],
    log_b: NDArray[np.float64],
    eps: float,
    tol: float,
    max_iter: int,
) -> tuple[NDArray[np.float64], NDArray[np.float64], float, int]:
    residual = np.inf
    for iteration in range(1, max_iter + 1):
        f = eps * (log_a - logsumexp((g[None, :] - C) / eps, axis=1))
        g = eps * (log_b - logsumexp((f[:, None] - C) / eps, axis=0))
        row_mass = np.exp(logsumexp((f[:, None] + g[None, :] - C) / eps, axis=1))
        residual = float(np.abs(row_mass - np.exp(log_a)).sum())
        if residual <= tol:
            return f, g, residual, iteration
    return f, g, residual, max_iter


def sinkhorn(
    mu: ProbabilityVector | ArrayLike,
    nu: ProbabilityVector | ArrayLike,
    D: ArrayLike,
    eps: float,
    tol: float = 1e-9,
    max_iter: int = 100_000,
) -> tuple[float, Coupling]:
    """Entropic transport by log-domain scaling iterations on the kernel exp(−c/eps).

    Potentials are warm-started along ε-scaling, halving from the largest cost down to `eps`;
    intermediate levels run at most `STAGE_ITER` sweeps. Zero-mass points are dropped before
    iterating and get zero rows/columns in the plan.

    Returns
    -------
    tuple[float, Coupling]
        Transport cost ⟨c, π_eps⟩ of the regularised plan, and the plan itself

    Raises
    ------
    ConvergenceError
        The marginal residual at `eps` stayed above `tol` for `max_iter` sweeps
    """
    if not eps > 0:
        raise DomainError(f"regularization must be positive, got {eps!r}")

    mu, nu = as_weights(mu), as_weights(nu)
    cost = np.asarray(D, dtype=float) ** 2
    if cost.shape != (mu.size, nu.size):
        raise DimensionError(f"cost shape {cost.shape} does not match marginals")
    if abs(mu.sum() - nu.sum()) > MARGINAL_TOL * max(1.0, mu.sum()):
        raise MarginalError(f"marginal masses differ: {mu.sum()!r} vs {nu.sum()!r}")

    rows, cols = mu > 0, nu > 0
    C = cost[np.ix_(rows, cols)]
    log_a, log_b = np.log(mu[rows]), np.log(nu[cols])
    f, g = np.zeros(log_a.size), np.zeros(log_b.size)

    schedule = [float(C.max(initial=0.0))]
    while schedule[-1] / 2 > eps:
        schedule.append(schedule[-1] / 2)
    for level in schedule:
        if level > eps:
            f, g, _, _ = _sweep(f, g, C, log_a, log_b, level, tol, STAGE_ITER)

    f, g, residual, iteration = _sweep(f, g, C, log_a, log_b, eps, tol, max_iter)
    if residual > tol:
        raise ConvergenceError(f"sinkhorn did not converge in {max_iter} iterations", residual=residual)

    logger.debug("sinkhorn eps=%g converged in %d iterations (residual %.3e)", eps, iteration, residual)
    plan = np.zeros_like(cost)
    plan[np.ix_(rows, cols)] = np.exp((f[:, None] + g[None, :] - C) / eps)
    return float(np.sum(cost * plan)), Coupling(plan, mu, nu)
