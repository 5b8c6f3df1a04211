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
from logging import getLogger
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike

from classes.errors import DomainError, OrderingError
from classes.space import GridGeometry, MeasureFamily, MetricFamily, TimeGrid
from flows.dirichlet_flow.form import AdjointMode, GraphForm, forward_adjoint_flow
from flows.entropy_flow.jko import Backend, EntropyFunctional, EntropyJkoProblem, jko_run
from flows.transport.exact import wasserstein

__all__ = ("FlowComparison", "HalvingReport", "identify_vs_adjoint_heat", "gap_halving")

logger = getLogger(__name__)

HALVING_BAND = 0.25


@dataclass(frozen=True, slots=True)
class FlowComparison:
    times: tuple[float, ...]
    l1_gaps: tuple[float, ...]
    w_gaps: tuple[float, ...]
    h: float
    grid_size: int

    @property
    def terminal_gap(self) -> float:
        return self.l1_gaps[-1]

    @property
    def worst_gap(self) -> float:
        return max(self.l1_gaps, default=0.0)


def identify_vs_adjoint_heat(
    geometry: GridGeometry,
    measure: MeasureFamily,
    rho0: ArrayLike,
    T: float,
    h: float,
    backend: Backend | str = Backend.Scaling,
) -> FlowComparison:
    """Entropy JKO flow under W_t against the forward adjoint heat flow from the same density.

    Both flows see d_t = e^{g(t)}·d_grid through the geometry's metric family; the graph form
    pairs it with conductances scaled by e^{−2g(t)}. Gaps are Σ|μ − μ'| and W_t at every node.
    """
    if not geometry.periodic:
        raise DomainError("identification runs on torus grids")

    rho0 = np.asarray(rho0, dtype=float)
    m0 = measure.measure_at(0.0)
    rho0 = rho0 / float(rho0 @ m0)

    metric = geometry.metric or MetricFamily.constant(geometry.distances(), T)
    grid = TimeGrid(T=T, h=h)
    problem = EntropyJkoProblem(EntropyFunctional(measure), metric, backend=Backend(backend))
    solution = jko_run(rho0 * m0, grid, problem)
    heat = forward_adjoint_flow(rho0, grid, GraphForm.torus(geometry, measure), mode=AdjointMode.Algebraic)

    l1, w = [], []
    for k, t in enumerate(heat.times):
        mu = np.asarray(solution.states[k], dtype=float)
        nu = heat.measure(k)
        nu = nu / nu.sum()
        l1.append(float(np.abs(mu - nu).sum()))
        w.append(wasserstein(mu, nu, metric.metric_at(t)))

    comparison = FlowComparison(
        times=heat.times,
        l1_gaps=tuple(l1),
        w_gaps=tuple(w),
        h=h,
        grid_size=geometry.n,
    )
    logger.info("Identification at N=%d, h=%g: terminal L1 gap %.3e", geometry.n, h, comparison.terminal_gap)
    return comparison


@dataclass(frozen=True, slots=True)
class HalvingReport:
    """Terminal-gap ratios gap(h)/gap(h/2) over consecutive comparisons, against 2 ± `band`·2."""

    steps: tuple[float, ...]
    ratios: tuple[float, ...]
    band: float = HALVING_BAND

    @property
    def worst_deviation(self) -> float:
        """Largest |ratio/2 − 1|; infinite when a ratio is undefined."""
        return max((abs(r / 2 - 1) if math.isfinite(r) else math.inf for r in self.ratios), default=math.inf)

    @property
    def ok(self) -> bool:
        return self.worst_deviation <= self.band


def gap_halving(comparisons: Sequence[FlowComparison], band: float = HALVING_BAND) -> HalvingReport:
    """First-order identification: halving h must halve the terminal gap, within `band`.

    Raises
    ------
    OrderingError
        Fewer than two comparisons, or step sizes that do not halve in order
    """
    if len(comparisons) < 2:
        raise OrderingError("the halving check needs at least two step sizes")
    ratios = []
    for coarse, fine in zip(comparisons, comparisons[1:]):
        if abs(coarse.h / fine.h - 2.0) > 1e-9:
            raise OrderingError(f"step {fine.h!r} does not halve {coarse.h!r}")
        ratios.append(coarse.terminal_gap / fine.terminal_gap if fine.terminal_gap > 0 else math.inf)
    return HalvingReport(steps=tuple(item.h for item in comparisons), ratios=tuple(ratios), band=band)
