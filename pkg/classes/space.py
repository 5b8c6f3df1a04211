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
from itertools import combinations
from logging import getLogger
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from classes.errors import BoundaryError, DegenerateMetricError, DimensionError, DomainError

__all__ = (
    "MetricKind",
    "ViolationKind",
    "TimeGrid",
    "MetricFamily",
    "MeasureFamily",
    "SpaceSnapshot",
    "GridGeometry",
    "Violation",
    "MetricReport",
    "MeasureReport",
    "validate_metric",
    "snapshot",
    "path_distances",
    "torus_distances",
)

logger = getLogger(__name__)

Vector = NDArray[np.float64]
Matrix = NDArray[np.float64]

TIME_SLACK = 1e-12


class MetricKind(StrEnum):
    Constant = "constant"
    Conformal = "conformal"
    Tabulated = "tabulated"


class ViolationKind(StrEnum):
    Symmetry = "symmetry"
    Diagonal = "diagonal"
    Positivity = "positivity"
    Triangle = "triangle"


def _check_time(t: float, T: float) -> float:
    t = float(t)
    if not (-TIME_SLACK <= t <= T + TIME_SLACK * max(1.0, T)):
        raise DomainError(f"time {t!r} outside [0, {T!r}]")
    return t


@dataclass(frozen=True, slots=True)
class TimeGrid:
    """Uniform partition of [0, T] with step h, the last node being the first one >= T."""

    T: float
    h: float
    t0: float = 0.0

    def __post_init__(self) -> None:
        if not self.h > 0:
            raise DomainError(f"step size must be positive, got {self.h!r}")
        if not self.T > 0:
            raise DomainError(f"horizon must be positive, got {self.T!r}")
        if self.t0 != 0.0:
            raise DomainError("time grids start at t0 = 0")

    @property
    def steps(self) -> int:
        return max(1, math.ceil(self.T / self.h - 1e-9))

    @property
    def nodes(self) -> Vector:
        return np.arange(self.steps + 1, dtype=float) * self.h

    @property
    def end(self) -> float:
        return self.steps * self.h

    def index(self, t: float) -> int:
        """Index n with t in (t_{n-1}, t_n]; zero maps to zero and times past t_N to N."""
        if t <= 0:
            return 0
        return min(self.steps, math.ceil(t / self.h - 1e-9))

    def upper(self, t: float) -> float:
        return self.index(t) * self.h

    def lower(self, t: float) -> float:
        return max(0, self.index(t) - 1) * self.h if t > 0 else 0.0

    def refined(self, factor: int = 2) -> TimeGrid:
        return TimeGrid(T=self.T, h=self.h / factor)


def path_distances(n: int, spacing: float = 1.0) -> Matrix:
    points = np.arange(n, dtype=float) * spacing
    return np.abs(points[:, None] - points[None, :])


def torus_distances(n: int, length: float = 1.0) -> Matrix:
    points = np.arange(n, dtype=float) * (length / n)
    gap = np.abs(points[:, None] - points[None, :])
    return np.minimum(gap, length - gap)


@dataclass(frozen=True, slots=True)
class Violation:
    kind: ViolationKind
    points: tuple[int, ...]
    excess: float


@dataclass(frozen=True, slots=True)
class MetricReport:
    violations: tuple[Violation, ...] = ()

    def __bool__(self) -> bool:
        return not self.violations

    @property
    def ok(self) -> bool:
        return not self.violations

    def of(self, kind: ViolationKind) -> list[Violation]:
        return [x for x in self.violations if x.kind == kind]


def validate_metric(D: ArrayLike, tol: float = 1e-9) -> MetricReport:
    """Check a distance matrix for symmetry, zero diagonal, positivity and triangle inequality.

    Parameters
    ----------
    D : ArrayLike
        Square matrix to check
    tol : float, optional
        Absolute tolerance, by default 1e-9

    Returns
    -------
    MetricReport
        Empty when the matrix is a valid metric. Pairs are listed once (i < j), triangle
        violations as (i, j, k) meaning D(i, k) > D(i, j) + D(j, k) + tol with i < k.
    """
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise DimensionError(f"distance matrix must be square, got shape {D.shape}")

    n = D.shape[0]
    items: list[Violation] = []

    for i in range(n):
        if abs(D[i, i]) > tol:
            items.append(Violation(ViolationKind.Diagonal, (i,), abs(D[i, i])))

    for i, j in combinations(range(n), 2):
        if (gap := abs(D[i, j] - D[j, i])) > tol:
            items.append(Violation(ViolationKind.Symmetry, (i, j), gap))
        if (low := min(D[i, j], D[j, i])) <= 0:
            items.append(Violation(ViolationKind.Positivity, (i, j), -low))

    excess = D[:, None, :] - D[:, :, None] - D[None, :, :]
    for i, j, k in np.argwhere(excess > tol):
        if i < k and j != i and j != k:
            items.append(Violation(ViolationKind.Triangle, (int(i), int(j), int(k)), float(excess[i, j, k])))

    return MetricReport(tuple(items))


def _off_diagonal(n: int) -> NDArray[np.bool_]:
    return ~np.eye(n, dtype=bool)


@dataclass(frozen=True, slots=True)
class MetricFamily:
    """Time-indexed distance matrices d_t on N points.

    Three evaluators are supported: a constant matrix, a conformal scaling e^{g(t)}·D0 and a
    tabulated family interpolating log d linearly between nodes, which keeps the log-Lipschitz
    bound valid between nodes.
    """

    base: Matrix
    T: float
    kind: MetricKind = MetricKind.Constant
    scaling: Optional[Callable[[float], float]] = field(default=None, compare=False)
    times: Optional[Vector] = field(default=None, compare=False)
    tables: Optional[NDArray[np.float64]] = field(default=None, compare=False)
    lipschitz: float = 0.0

    def __post_init__(self) -> None:
        base = np.asarray(self.base, dtype=float)
        if base.ndim != 2 or base.shape[0] != base.shape[1]:
            raise DimensionError(f"distance matrix must be square, got shape {base.shape}")
        object.__setattr__(self, "base", base)
        if self.kind == MetricKind.Conformal and self.scaling is None:
            raise DomainError("conformal families need a scaling function g(t)")
        if self.kind == MetricKind.Tabulated and (self.times is None or self.tables is None):
            raise DomainError("tabulated families need node times and tables")

    @classmethod
    def constant(cls, D: ArrayLike, T: float) -> MetricFamily:
        return cls(base=np.asarray(D, dtype=float), T=T)

    @classmethod
    def conformal(
        cls,
        D: ArrayLike,
        T: float,
        scaling: Callable[[float], float],
        lipschitz: float,
    ) -> MetricFamily:
        return cls(
            base=np.asarray(D, dtype=float),
            T=T,
            kind=MetricKind.Conformal,
            scaling=scaling,
            lipschitz=lipschitz,
        )

    @classmethod
    def exponential(cls, D: ArrayLike, T: float, rate: float) -> MetricFamily:
        """d_t = e^{rate·t}·D, whose log-Lipschitz constant is |rate|."""
        return cls.conformal(D, T, scaling=lambda t: rate * t, lipschitz=abs(rate))

    @classmethod
    def tabulated(cls, times: ArrayLike, tables: ArrayLike) -> MetricFamily:
        times = np.asarray(times, dtype=float)
        tables = np.asarray(tables, dtype=float)
        if tables.ndim != 3 or tables.shape[0] != times.size or times.size < 2:
            raise DimensionError("tabulated family needs K >= 2 node times and K square tables")
        if times[0] != 0.0 or np.any(np.diff(times) <= 0):
            raise DomainError("node times must start at 0 and increase strictly")

        mask = _off_diagonal(tables.shape[1])
        if np.any(tables[:, mask] <= 0):
            raise DegenerateMetricError("tabulated distances must be positive off the diagonal")
        logs = np.log(tables[:, mask])
        slopes = np.abs(np.diff(logs, axis=0)) / np.diff(times)[:, None]
        return cls(
            base=tables[0],
            T=float(times[-1]),
            kind=MetricKind.Tabulated,
            times=times,
            tables=tables,
            lipschitz=float(slopes.max(initial=0.0)),
        )

    @property
    def n_points(self) -> int:
        return self.base.shape[0]

    def _log_off_diagonal(self, t: float) -> Vector:
        mask = _off_diagonal(self.n_points)
        match self.kind:
            case MetricKind.Constant:
                return np.log(self.base[mask])
            case MetricKind.Conformal:
                return self.scaling(t) + np.log(self.base[mask])
            case MetricKind.Tabulated:
                k = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 2))
                theta = (t - self.times[k]) / (self.times[k + 1] - self.times[k])
                low, high = np.log(self.tables[k][mask]), np.log(self.tables[k + 1][mask])
                return (1.0 - theta) * low + theta * high

    def metric_at(self, t: float) -> Matrix:
        """Distance matrix d_t as a full symmetric matrix."""
        t = _check_time(t, self.T)
        match self.kind:
            case MetricKind.Constant:
                return self.base.copy()
            case MetricKind.Conformal:
                return math.exp(self.scaling(t)) * self.base
            case MetricKind.Tabulated:
                D = np.zeros_like(self.base)
                D[_off_diagonal(self.n_points)] = np.exp(self._log_off_diagonal(t))
                return D

    def squared_at(self, t: float) -> Matrix:
        return self.metric_at(t) ** 2

    def estimate_log_lipschitz(self, sample_times: Sequence[float]) -> float:
        """Largest |log d_t − log d_s| / |t − s| over sampled time pairs and point pairs."""
        times = sorted({_check_time(t, self.T) for t in sample_times})
        if len(times) < 2:
            raise DomainError("at least two distinct sample times are needed")

        mask = _off_diagonal(self.n_points)
        logs = []
        for t in times:
            D = self.metric_at(t)
            if np.any(D[mask] <= 0):
                raise DegenerateMetricError(f"zero off-diagonal distance at t={t!r}")
            logs.append(self._log_off_diagonal(t))

        worst = 0.0
        for (a, s), (b, t) in combinations(enumerate(times), 2):
            if logs[a].size:
                worst = max(worst, float(np.max(np.abs(logs[b] - logs[a]))) / (t - s))
        return worst


@dataclass(frozen=True, slots=True)
class MeasureReport:
    bound_excess: float
    lipschitz_excess: float
    tol: float = 1e-12

    @property
    def ok(self) -> bool:
        return self.bound_excess <= self.tol and self.lipschitz_excess <= self.tol


@dataclass(frozen=True, slots=True)
class MeasureFamily:
    """Vertex weights m_t = e^{-f_t}·m with a time-Lipschitz potential f.

    `lipschitz` is the declared L* and `bound` the declared C with |f_t| <= C.
    """

    base: Vector
    T: float
    potential: Callable[[float], Vector] = field(compare=False)
    rate: Optional[Callable[[float], Vector]] = field(default=None, compare=False)
    lipschitz: float = 0.0
    bound: float = 0.0
    times: Optional[Vector] = field(default=None, compare=False)
    delta: Optional[float] = None

    def __post_init__(self) -> None:
        base = np.asarray(self.base, dtype=float)
        if base.ndim != 1 or np.any(base <= 0):
            raise DomainError("base measure must be a positive vector")
        object.__setattr__(self, "base", base)
        if self.delta is None:
            object.__setattr__(self, "delta", 1e-6 * self.T)

    @staticmethod
    def _normalized(m: ArrayLike, normalize: bool) -> Vector:
        m = np.asarray(m, dtype=float)
        return m / m.sum() if normalize else m

    @classmethod
    def static(cls, m: ArrayLike, T: float, normalize: bool = True) -> MeasureFamily:
        base = cls._normalized(m, normalize)
        zero = np.zeros_like(base)
        return cls(base=base, T=T, potential=lambda t: zero, rate=lambda t: zero)

    @classmethod
    def linear(cls, m: ArrayLike, V: ArrayLike, T: float, normalize: bool = True) -> MeasureFamily:
        """f_t = t·V."""
        V = np.asarray(V, dtype=float)
        top = float(np.abs(V).max(initial=0.0))
        return cls(
            base=cls._normalized(m, normalize),
            T=T,
            potential=lambda t: t * V,
            rate=lambda t: V,
            lipschitz=top,
            bound=T * top,
        )

    @classmethod
    def sinusoidal(
        cls,
        m: ArrayLike,
        V: ArrayLike,
        T: float,
        amplitude: float = 1.0,
        frequency: float = 1.0,
        analytic: bool = True,
        normalize: bool = True,
    ) -> MeasureFamily:
        """f_t = amplitude·sin(frequency·t)·V, optionally without the analytic rate."""
        V = np.asarray(V, dtype=float)
        top = abs(amplitude) * float(np.abs(V).max(initial=0.0))
        return cls(
            base=cls._normalized(m, normalize),
            T=T,
            potential=lambda t: amplitude * math.sin(frequency * t) * V,
            rate=(lambda t: amplitude * frequency * math.cos(frequency * t) * V) if analytic else None,
            lipschitz=top * abs(frequency),
            bound=top,
        )

    @classmethod
    def tabulated(cls, m: ArrayLike, times: ArrayLike, values: ArrayLike, normalize: bool = True) -> MeasureFamily:
        """Potential given at node times, interpolated linearly per point."""
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.shape[0] != times.size or times.size < 2:
            raise DimensionError("tabulated potential needs one row per node time")
        slopes = np.abs(np.diff(values, axis=0)) / np.diff(times)[:, None]

        def potential(t: float) -> Vector:
            return np.array([np.interp(t, times, column) for column in values.T])

        return cls(
            base=cls._normalized(m, normalize),
            T=float(times[-1]),
            potential=potential,
            lipschitz=float(slopes.max(initial=0.0)),
            bound=float(np.abs(values).max(initial=0.0)),
            times=times,
        )

    @property
    def n_points(self) -> int:
        return self.base.size

    def f_at(self, t: float) -> Vector:
        return np.asarray(self.potential(_check_time(t, self.T)), dtype=float)

    def measure_at(self, t: float) -> Vector:
        """m_t = e^{-f_t}·m, entrywise."""
        return np.exp(-self.f_at(t)) * self.base

    def f_rate(self, t: float) -> Vector:
        """∂_t f_t, analytic when available, otherwise a centered difference with step `delta`."""
        t = _check_time(t, self.T)
        if self.rate is not None:
            return np.asarray(self.rate(t), dtype=float)

        delta = self.delta
        if self.times is not None and (t - delta < self.times[0] or t + delta > self.times[-1]):
            raise BoundaryError(f"no centered difference at tabulation boundary t={t!r}")
        high = np.asarray(self.potential(t + delta), dtype=float)
        low = np.asarray(self.potential(t - delta), dtype=float)
        return (high - low) / (2 * delta)

    def check(self, sample_times: Iterable[float], tol: float = 1e-12) -> MeasureReport:
        """Verify |f_t| <= C and |f_t − f_s| <= L*|t − s| on the sampled times."""
        times = sorted({_check_time(t, self.T) for t in sample_times})
        values = [self.f_at(t) for t in times]
        bound_excess = max((float(np.abs(v).max(initial=0.0)) - self.bound for v in values), default=0.0)

        lipschitz_excess = 0.0
        for (a, s), (b, t) in combinations(enumerate(times), 2):
            quotient = float(np.abs(values[b] - values[a]).max(initial=0.0)) / (t - s)
            lipschitz_excess = max(lipschitz_excess, quotient - self.lipschitz)

        return MeasureReport(bound_excess=bound_excess, lipschitz_excess=lipschitz_excess, tol=tol)


@dataclass(frozen=True, slots=True)
class SpaceSnapshot:
    t: float
    distances: Matrix
    measure: Vector
    rate: Vector

    def __post_init__(self) -> None:
        n = self.measure.size
        if self.distances.shape != (n, n) or self.rate.shape != (n,):
            raise DimensionError("snapshot parts must share the point count")
        if not (np.all(np.isfinite(self.distances)) and np.all(np.isfinite(self.measure))):
            raise DomainError(f"non-finite entries in snapshot at t={self.t!r}")


def snapshot(metric: MetricFamily, measure: MeasureFamily, t: float) -> SpaceSnapshot:
    if metric.n_points != measure.n_points:
        raise DimensionError(f"metric has {metric.n_points} points, measure {measure.n_points}")
    return SpaceSnapshot(t=t, distances=metric.metric_at(t), measure=measure.measure_at(t), rate=measure.f_rate(t))


@dataclass(frozen=True, slots=True)
class GridGeometry:
    """Uniform 1-D grid (torus or interval) with an optional conformal metric family on top."""

    n: int
    length: float = 1.0
    periodic: bool = True
    metric: Optional[MetricFamily] = None

    @property
    def spacing(self) -> float:
        return self.length / self.n if self.periodic else self.length / (self.n - 1)

    @property
    def points(self) -> Vector:
        return np.arange(self.n, dtype=float) * self.spacing

    def distances(self) -> Matrix:
        if self.periodic:
            return torus_distances(self.n, self.length)
        return path_distances(self.n, self.spacing)

    def scale(self, t: float) -> float:
        """Conformal factor e^{g(t)} of the attached metric family (1 when static)."""
        if self.metric is None or self.metric.kind == MetricKind.Constant:
            return 1.0
        if self.metric.kind == MetricKind.Conformal:
            return math.exp(self.metric.scaling(_check_time(t, self.metric.T)))
        raise DomainError("grid geometry only supports constant or conformal metric families")
