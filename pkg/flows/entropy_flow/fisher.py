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

from typing import Any, Optional

import numpy as np
from numpy.typing import ArrayLike

from classes.errors import DimensionError, DomainError, UnsupportedGeometryError
from classes.space import GridGeometry, MeasureFamily

__all__ = ("fisher_information",)


def fisher_information(
    rho: ArrayLike,
    t: float,
    geometry: Any,
    measure: Optional[MeasureFamily] = None,
) -> float:
    """Quadrature of |∇_t ρ|²/ρ against m_t on a 1-D grid.

    Centered differences give ∂_xρ; the denominator is the average of the two neighbours and
    points where it vanishes are skipped. The metric e^{g(t)}·d contributes e^{−2g(t)}. Without a
    measure family the grid carries the uniform measure of total mass `length`.

    Raises
    ------
    UnsupportedGeometryError
        The geometry is not a 1-D grid
    """
    if not isinstance(geometry, GridGeometry):
        raise UnsupportedGeometryError(f"fisher information needs a grid geometry, got {type(geometry).__name__}")

    rho = np.asarray(rho, dtype=float)
    if rho.shape != (geometry.n,):
        raise DimensionError(f"density has shape {rho.shape}, grid has {geometry.n} points")
    if np.any(rho < 0):
        raise DomainError("densities must be nonnegative")

    m = measure.measure_at(t) if measure is not None else np.full(geometry.n, geometry.spacing)
    dx = geometry.spacing
    if geometry.periodic:
        after, before, weights = np.roll(rho, -1), np.roll(rho, 1), m
    else:
        after, before, weights = rho[2:], rho[:-2], m[1:-1]

    gradient = (after - before) / (2 * dx)
    average = (after + before) / 2
    positive = average > 0
    integrand = gradient[positive] ** 2 / average[positive]
    return float(np.sum(weights[positive] * integrand)) / geometry.scale(t) ** 2
