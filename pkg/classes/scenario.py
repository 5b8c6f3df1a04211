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

import hashlib
import json
import math
import re
import tomllib
from dataclasses import asdict, dataclass, field, fields
from enum import StrEnum
from logging import getLogger
from pathlib import Path
from typing import Any, Optional

import numpy as np
from rapidfuzz import process

from classes.errors import ConfigLoadError, DynflowError
from classes.space import (
    GridGeometry,
    Matrix,
    MeasureFamily,
    MetricFamily,
    MetricKind,
    TimeGrid,
    Vector,
    path_distances,
    torus_distances,
    validate_metric,
)
from flows.dirichlet_flow.form import AdjointMode, GraphForm, HeatScheme, dirichlet_problem
from flows.dirichlet_flow.hilbert import HilbertKind, QuadraticHilbertProblem
from flows.entropy_flow.jko import Backend, EntropyFunctional, EntropyJkoProblem
from flows.mms_engine.problem import State, StepProblem

__all__ = (
    "SpaceKind",
    "FlowKind",
    "PotentialKind",
    "ProfileKind",
    "InitialKind",
    "SpaceSpec",
    "MetricSpec",
    "MeasureSpec",
    "GridSpec",
    "SolverSpec",
    "InitialSpec",
    "HilbertSpec",
    "CheckSpec",
    "Scenario",
    "parse_config",
    "parse_mapping",
)

logger = getLogger(__name__)

NAME = re.compile(r"[A-Za-z0-9_.\-]+")


class SpaceKind(StrEnum):
    TwoPoint = "two-point"
    Path = "path"
    Torus = "torus"
    RnQuadratic = "rn-quadratic"


class FlowKind(StrEnum):
    EntropyJko = "entropy-jko"
    GraphHeat = "graph-heat"
    AdjointForward = "adjoint-forward"
    QuadraticHilbert = "quadratic-hilbert"
    Identify = "identify"


class PotentialKind(StrEnum):
    Zero = "zero"
    Linear = "linear"
    Sine = "sine"


class ProfileKind(StrEnum):
    Cosine = "cosine"
    Ramp = "ramp"


class InitialKind(StrEnum):
    Uniform = "uniform"
    Equilibrium = "equilibrium"
    Bump = "bump"
    Cosine = "cosine"
    Dirac = "dirac"
    Vector = "vector"


@dataclass(frozen=True, slots=True)
class SpaceSpec:
    kind: SpaceKind = SpaceKind.TwoPoint
    size: int = 2
    length: float = 1.0
    spacing: float = 1.0


@dataclass(frozen=True, slots=True)
class MetricSpec:
    """`conformal` scales every distance by e^{rate·t}."""

    kind: MetricKind = MetricKind.Constant
    rate: float = 0.0


@dataclass(frozen=True, slots=True)
class MeasureSpec:
    """Potential f_t over a uniform base: zero, amplitude·t·V, or amplitude·sin(frequency·t)·V."""

    potential: PotentialKind = PotentialKind.Zero
    amplitude: float = 0.0
    frequency: float = 1.0
    profile: ProfileKind = ProfileKind.Cosine


@dataclass(frozen=True, slots=True)
class GridSpec:
    T: float = 1.0
    h: float = 0.1
    h_list: tuple[float, ...] = ()


@dataclass(frozen=True, slots=True)
class SolverSpec:
    backend: Backend = Backend.ExactSmall
    tol: float = 1e-10
    max_iter: int = 500
    quadrature_nodes: int = 3
    scheme: HeatScheme = HeatScheme.ImplicitEuler
    mode: AdjointMode = AdjointMode.Algebraic


@dataclass(frozen=True, slots=True)
class InitialSpec:
    kind: InitialKind = InitialKind.Dirac
    amplitude: float = 2.0
    center: float = 0.5
    point: int = 0
    values: tuple[float, ...] = ()
    partner_shift: int = 1


@dataclass(frozen=True, slots=True)
class HilbertSpec:
    kind: HilbertKind = HilbertKind.ScalarExample
    dimension: int = 3
    rotation: float = 1.0


@dataclass(frozen=True, slots=True)
class CheckSpec:
    """Tolerances and sampling of the default check suites; `window` = 0 samples up to T − delta."""

    slack: float = 0.15
    delta: float = 0.02
    window: float = 0.0
    samples: int = 10
    trials: int = 20
    envelope_slack: float = 10.0


SECTIONS: dict[str, type] = {
    "space": SpaceSpec,
    "metric": MetricSpec,
    "measure": MeasureSpec,
    "grid": GridSpec,
    "solver": SolverSpec,
    "initial": InitialSpec,
    "hilbert": HilbertSpec,
    "checks": CheckSpec,
}


@dataclass(frozen=True, slots=True)
class Scenario:
    name: str
    flow: FlowKind = FlowKind.EntropyJko
    seed: int = 0
    space: SpaceSpec = field(default_factory=SpaceSpec)
    metric: MetricSpec = field(default_factory=MetricSpec)
    measure: MeasureSpec = field(default_factory=MeasureSpec)
    grid: GridSpec = field(default_factory=GridSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    initial: InitialSpec = field(default_factory=InitialSpec)
    hilbert: HilbertSpec = field(default_factory=HilbertSpec)
    checks: CheckSpec = field(default_factory=CheckSpec)

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        for section in SECTIONS:
            data[section] = {k: list(v) if isinstance(v, tuple) else v for k, v in data[section].items()}
        return data

    def echo(self) -> str:
        """Every value with its defaults materialized, as JSON that `parse_config` reads back."""
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @property
    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    @property
    def finite(self) -> bool:
        return self.space.kind != SpaceKind.RnQuadratic

    @property
    def n(self) -> int:
        return self.space.size

    def time_grid(self, h: Optional[float] = None) -> TimeGrid:
        return TimeGrid(T=self.grid.T, h=self.grid.h if h is None else h)

    def distances(self) -> Matrix:
        match self.space.kind:
            case SpaceKind.TwoPoint:
                return path_distances(2, self.space.spacing)
            case SpaceKind.Path:
                return path_distances(self.n, self.space.spacing)
            case SpaceKind.Torus:
                return torus_distances(self.n, self.space.length)
        raise ConfigLoadError("space.kind", "an Euclidean space has no distance table")

    def metric_family(self) -> MetricFamily:
        D = self.distances()
        if self.metric.kind == MetricKind.Conformal:
            return MetricFamily.exponential(D, self.grid.T, self.metric.rate)
        return MetricFamily.constant(D, self.grid.T)

    def profile(self) -> Vector:
        k = np.arange(self.n, dtype=float)
        match self.measure.profile:
            case ProfileKind.Cosine:
                return np.cos(2 * math.pi * k / self.n)
            case ProfileKind.Ramp:
                return k / (self.n - 1)

    def measure_family(self) -> MeasureFamily:
        ones, spec, T = np.ones(self.n), self.measure, self.grid.T
        match spec.potential:
            case PotentialKind.Zero:
                return MeasureFamily.static(ones, T)
            case PotentialKind.Linear:
                return MeasureFamily.linear(ones, spec.amplitude * self.profile(), T)
            case PotentialKind.Sine:
                return MeasureFamily.sinusoidal(ones, self.profile(), T, spec.amplitude, spec.frequency)

    def geometry(self) -> Optional[GridGeometry]:
        match self.space.kind:
            case SpaceKind.Torus:
                return GridGeometry(self.n, self.space.length, periodic=True, metric=self.metric_family())
            case SpaceKind.Path:
                length = self.space.spacing * (self.n - 1)
                return GridGeometry(self.n, length, periodic=False, metric=self.metric_family())
        return None

    def graph_form(self) -> GraphForm:
        """Nearest-neighbour form on grids; the two-point space gets conductance 1/spacing²."""
        measure = self.measure_family()
        if (geometry := self.geometry()) is not None:
            return GraphForm.torus(geometry, measure)
        w = 1.0 / self.space.spacing**2
        return GraphForm.static(np.array([[0.0, w], [w, 0.0]]), measure)

    def jko_problem(self) -> EntropyJkoProblem:
        return EntropyJkoProblem(
            EntropyFunctional(self.measure_family()),
            self.metric_family(),
            backend=self.solver.backend,
            tol=self.solver.tol,
            max_iter=self.solver.max_iter,
        )

    def hilbert_problem(self) -> QuadraticHilbertProblem:
        spec, T = self.hilbert, self.grid.T
        match spec.kind:
            case HilbertKind.ScalarExample:
                return QuadraticHilbertProblem.scalar_example(T)
            case HilbertKind.Rotating:
                return QuadraticHilbertProblem.rotating(spec.dimension, spec.rotation, T)
            case HilbertKind.Still:
                return QuadraticHilbertProblem.still(spec.dimension, T)

    def _raw_profile(self) -> Vector:
        spec, k = self.initial, np.arange(self.n, dtype=float)
        match spec.kind:
            case InitialKind.Uniform | InitialKind.Equilibrium:
                return np.ones(self.n)
            case InitialKind.Bump:
                return np.exp(spec.amplitude * np.cos(2 * math.pi * (k / self.n - spec.center)))
            case InitialKind.Cosine:
                return 1.0 + spec.amplitude * np.cos(2 * math.pi * k / self.n)
            case InitialKind.Dirac:
                return np.eye(self.n)[spec.point]
            case InitialKind.Vector:
                return np.asarray(spec.values, dtype=float)

    def initial_function(self) -> Vector:
        """Initial state of the heat flow."""
        return self._raw_profile()

    def initial_density(self) -> Vector:
        """ρ_0 with Σρ_0·m_0 = 1; `uniform` gives the uniform measure and `dirac` a unit point mass."""
        m0 = self.measure_family().measure_at(0.0)
        rho = self._raw_profile()
        match self.initial.kind:
            case InitialKind.Uniform | InitialKind.Dirac:
                rho = rho / m0
        return rho / float(rho @ m0)

    def initial_measure(self) -> Vector:
        mu = self.initial_density() * self.measure_family().measure_at(0.0)
        return mu / mu.sum()

    def initial_state(self) -> Vector:
        """Initial point in ℝⁿ; anything but `vector` starts at the origin."""
        if self.initial.kind == InitialKind.Vector:
            return np.asarray(self.initial.values, dtype=float)
        return np.zeros(self.hilbert_problem().dimension)

    def step_problem(self) -> Optional[StepProblem]:
        """The minimizing-movement problem behind the flow; the forward adjoint flow has none."""
        match self.flow:
            case FlowKind.GraphHeat:
                return dirichlet_problem(self.graph_form(), self.initial_function())
            case FlowKind.QuadraticHilbert:
                return self.hilbert_problem().as_problem()
            case FlowKind.EntropyJko | FlowKind.Identify:
                return self.jko_problem().as_problem()
        return None

    def initial_point(self) -> State:
        """Initial state of `step_problem`."""
        match self.flow:
            case FlowKind.GraphHeat:
                return self.initial_function()
            case FlowKind.QuadraticHilbert:
                return self.initial_state()
        return self.initial_measure()

    def partner_state(self) -> Vector:
        """Second initial state for the contraction check."""
        if not self.finite:
            return self.initial_state() + self.initial.partner_shift
        return np.roll(self.initial_function(), self.initial.partner_shift)

    def sample_times(self, h: Optional[float] = None) -> list[float]:
        """`samples` grid nodes evenly spread over [0, window]."""
        grid = self.time_grid(h)
        window = self.checks.window or grid.end - self.checks.delta
        indices = np.unique(np.round(np.linspace(0.0, window, self.checks.samples) / grid.h).astype(int))
        return [float(k * grid.h) for k in indices]


def _unknown(key: str, name: str, options: list[str]) -> ConfigLoadError:
    message = "unknown key"
    if item := process.extractOne(name, options, score_cutoff=80):
        message += f", did you mean {item[0]!r}?"
    return ConfigLoadError(key, message)


def _coerce(key: str, value: Any, default: Any) -> Any:
    match default:
        case bool():
            if isinstance(value, bool):
                return value
        case StrEnum():
            try:
                return type(default)(value)
            except (TypeError, ValueError) as e:
                options = ", ".join(type(default))
                raise ConfigLoadError(key, f"expected one of {options}, got {value!r}") from e
        case int():
            if isinstance(value, int) and not isinstance(value, bool):
                return value
        case float():
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                return float(value)
        case str():
            if isinstance(value, str):
                return value
        case tuple():
            if isinstance(value, (list, tuple)) and all(
                isinstance(x, (int, float)) and not isinstance(x, bool) for x in value
            ):
                return tuple(float(x) for x in value)
    raise ConfigLoadError(key, f"expected {type(default).__name__}, got {type(value).__name__}")


def _section(cls: type, table: Any, prefix: str) -> Any:
    if not isinstance(table, dict):
        raise ConfigLoadError(prefix, "expected a table")
    defaults = {item.name: item.default for item in fields(cls)}
    values = {}
    for name, value in table.items():
        key = f"{prefix}.{name}"
        if name not in defaults:
            raise _unknown(key, name, list(defaults))
        values[name] = _coerce(key, value, defaults[name])
    return cls(**values)


def _require(condition: bool, key: str, message: str) -> None:
    if not condition:
        raise ConfigLoadError(key, message)


def _divides(h: float, T: float) -> bool:
    return h > 0 and abs(T / h - round(T / h)) <= 1e-9 * T / h


def _validate(scenario: Scenario) -> None:
    space, grid, solver, initial, checks = (
        scenario.space,
        scenario.grid,
        scenario.solver,
        scenario.initial,
        scenario.checks,
    )
    _require(bool(NAME.fullmatch(scenario.name)), "name", "use letters, digits, '.', '_' or '-'")
    _require(scenario.seed >= 0, "seed", "must be nonnegative")

    _require(math.isfinite(grid.T) and grid.T > 0, "grid.T", "must be positive")
    _require(math.isfinite(grid.h) and grid.h > 0, "grid.h", "must be positive")
    _require(all(h > 0 for h in grid.h_list), "grid.h_list", "step sizes must be positive")
    _require(_divides(grid.h, grid.T), "grid.h", "must divide grid.T")
    _require(all(_divides(h, grid.T) for h in grid.h_list), "grid.h_list", "step sizes must divide grid.T")
    _require(
        all(a > b for a, b in zip(grid.h_list, grid.h_list[1:])), "grid.h_list", "step sizes must strictly decrease"
    )

    _require(solver.tol > 0, "solver.tol", "must be positive")
    _require(solver.max_iter >= 1, "solver.max_iter", "must be at least 1")
    _require(solver.quadrature_nodes >= 0, "solver.quadrature_nodes", "must be nonnegative")

    _require(checks.slack >= 0, "checks.slack", "must be nonnegative")
    _require(checks.delta > 0, "checks.delta", "must be positive")
    _require(checks.window >= 0, "checks.window", "must be nonnegative")
    _require(checks.samples >= 1, "checks.samples", "must be at least 1")
    _require(checks.trials >= 1, "checks.trials", "must be at least 1")
    _require(checks.envelope_slack >= 0, "checks.envelope_slack", "must be nonnegative")

    euclidean = space.kind == SpaceKind.RnQuadratic
    _require(
        euclidean == (scenario.flow == FlowKind.QuadraticHilbert),
        "flow",
        f"flow {scenario.flow} cannot run on a {space.kind} space",
    )
    _require(scenario.metric.kind != MetricKind.Tabulated, "metric.kind", "tabulated metrics are not configurable")
    _require(math.isfinite(scenario.metric.rate), "metric.rate", "must be finite")
    _require(math.isfinite(scenario.measure.amplitude), "measure.amplitude", "must be finite")
    _require(math.isfinite(scenario.measure.frequency), "measure.frequency", "must be finite")

    if euclidean:
        hilbert = scenario.hilbert
        least = 2 if hilbert.kind == HilbertKind.Rotating else 1
        _require(hilbert.dimension >= least, "hilbert.dimension", f"must be at least {least}")
        dimension = 1 if hilbert.kind == HilbertKind.ScalarExample else hilbert.dimension
        if initial.kind == InitialKind.Vector:
            _require(len(initial.values) == dimension, "initial.values", f"expected {dimension} values")
        return

    _require(space.kind != SpaceKind.TwoPoint or space.size == 2, "space.size", "a two-point space has size 2")
    _require(space.size >= 2, "space.size", "must be at least 2")
    _require(space.kind != SpaceKind.Torus or space.size >= 3, "space.size", "a torus needs at least 3 points")
    _require(space.length > 0, "space.length", "must be positive")
    _require(space.spacing > 0, "space.spacing", "must be positive")
    identify_ok = scenario.flow != FlowKind.Identify or space.kind == SpaceKind.Torus
    _require(identify_ok, "space.kind", "identification needs a torus")

    _require(0 <= initial.point < space.size, "initial.point", f"must lie in [0, {space.size})")
    if initial.kind == InitialKind.Vector:
        _require(len(initial.values) == space.size, "initial.values", f"expected {space.size} values")
    if scenario.flow == FlowKind.AdjointForward and scenario.geometry() is not None:
        _require(_divides(grid.h, checks.delta), "checks.delta", "must be a multiple of grid.h")
        fits = checks.window + checks.delta <= grid.T
        _require(fits, "checks.window", "sampled times plus delta must stay in [0, T]")
    if scenario.flow != FlowKind.GraphHeat:
        profile = scenario._raw_profile()
        valid = bool(np.all(profile >= 0)) and profile.sum() > 0
        _require(valid, "initial", "densities must be nonnegative and nonzero")

    metric = validate_metric(scenario.distances())
    _require(metric.ok, "space", f"distance table is not a metric: {metric.violations[:1]}")
    report = scenario.measure_family().check(np.linspace(0.0, grid.T, 33))
    _require(report.ok, "measure", "potential exceeds its declared bound or Lipschitz constant")


def parse_mapping(data: dict[str, Any], default_name: str = "scenario") -> Scenario:
    """Validate a decoded config table into a `Scenario`."""
    top = {"name": default_name, "flow": FlowKind.EntropyJko, "seed": 0}
    values: dict[str, Any] = {}
    for name, value in data.items():
        if name in SECTIONS:
            values[name] = _section(SECTIONS[name], value, name)
        elif name in top:
            values[name] = _coerce(name, value, top[name])
        else:
            raise _unknown(name, name, [*top, *SECTIONS])

    scenario = Scenario(**{"name": default_name, **values})
    try:
        _validate(scenario)
    except ConfigLoadError:
        raise
    except DynflowError as e:
        raise ConfigLoadError("scenario", str(e)) from e
    return scenario


def parse_config(path: Path | str) -> Scenario:
    """Load a `.toml` scenario file or a `.json` echo of one.

    Raises
    ------
    ConfigLoadError
        Unknown key, wrong type or violated invariant, with the dotted key path
    """
    path = Path(path)
    try:
        match path.suffix:
            case ".json":
                data = json.loads(path.read_text(encoding="utf-8"))
            case _:
                with path.open("rb") as f:
                    data = tomllib.load(f)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ConfigLoadError(path.name, f"cannot decode: {e}") from e
    except OSError as e:
        raise ConfigLoadError(path.name, f"cannot read: {e.strerror or e}") from e

    scenario = parse_mapping(data, default_name=path.stem)
    logger.debug("Loaded scenario %s from %s", scenario.name, path)
    return scenario
