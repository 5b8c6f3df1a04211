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
from typing import Optional

import numpy as np

from classes.errors import DomainError, OrderingError
from classes.space import MetricFamily

__all__ = ("dynamic_distance_chain", "dynamic_distance_scaled", "chain_action")

logger = getLogger(__name__)

MAX_SLICES = 4096


def chain_action(x: int, y: int, s: float, t: float, family: MetricFamily, n_slices: int) -> float:
    """Least discrete action over chains x = z_0, ..., z_n = y through every point of the space.

    Slice i costs n·d²_θ(z_{i−1}, z_i) with θ the slice midpoint on the segment from s to t.
    """
    value = np.full(family.n_points, np.inf)
    value[x] = 0.0
    for i in range(n_slices):
        theta = s + (i + 0.5) / n_slices * (t - s)
        step = n_slices * family.squared_at(theta)
        value = np.min(value[:, None] + step, axis=0)
    return float(value[y])


def dynamic_distance_chain(
    x: int,
    y: int,
    s: float,
    t: float,
    family: MetricFamily,
    n_slices: int = 0,
    n_candidates: Optional[int] = None,
    rtol: float = 1e-4,
    reverse: bool = False,
) -> float:
    """Approximate d²_{s,t}(x, y) by dynamic programming over chains.

    Parameters
    ----------
    x, y : int
        Point indices
    s, t : float
        Start and end time, s <= t unless `reverse` is set
    family : MetricFamily
        Metric family providing d_θ
    n_slices : int, optional
        Number of time slices; 0 doubles from one slice until the relative change drops
        below `rtol`, the value stops decreasing or MAX_SLICES is reached, keeping the best value
    n_candidates : int, optional
        Reserved for subsampling intermediate points; every point is tried
    rtol : float, optional
        Stopping rule of the automatic refinement, by default 1e-4
    reverse : bool, optional
        Read the action backwards in time, from s down to t, by default False

    Returns
    -------
    float
        Approximation of d²_{s,t}(x, y)

    Raises
    ------
    OrderingError
        s > t without `reverse`, s < t with it, or a negative slice count
    """
    if n_slices < 0:
        raise OrderingError(f"slice count must be nonnegative, got {n_slices}")
    if not reverse and s > t:
        raise OrderingError(f"start time {s!r} is after end time {t!r}; pass reverse=True for the backward action")
    if reverse and s < t:
        raise OrderingError(f"reversed action needs s >= t, got {s!r} < {t!r}")
    if x == y:
        return 0.0
    if s == t:
        return float(family.squared_at(s)[x, y])

    if n_slices:
        return chain_action(x, y, s, t, family, n_slices)

    best = previous = math.inf
    n = 1
    while n <= MAX_SLICES:
        value = chain_action(x, y, s, t, family, n)
        best = min(best, value)
        if value > previous or abs(previous - value) <= rtol * abs(value):
            break
        previous = value
        n *= 2

    logger.debug("dynamic distance (%d -> %d, %g -> %g) settled at %d slices: %.17g", x, y, s, t, n, best)
    return best


def dynamic_distance_scaled(lam: float, s: float, t: float, gap: float) -> float:
    """Closed-form d²_{s,t} for the scaled line d_t² = λ·t·|x − y|²: λ·(t − s)/(log t − log s)·gap²."""
    if s <= 0 or t <= 0:
        raise DomainError(f"logarithmic mean needs positive times, got s={s!r}, t={t!r}")
    if lam <= 0:
        raise DomainError(f"scale must be positive, got {lam!r}")
    if abs(t - s) < 1e-12 * s:
        return lam * s * gap**2
    return lam * (t - s) / (math.log(t) - math.log(s)) * gap**2
