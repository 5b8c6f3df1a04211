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

__all__ = (
    "DynflowError",
    "DomainError",
    "BoundaryError",
    "DegenerateMetricError",
    "DimensionError",
    "MarginalError",
    "OrderingError",
    "ConvergenceError",
    "StepError",
    "SchemeError",
    "SolverError",
    "ProblemError",
    "UnsupportedGeometryError",
    "ConfigLoadError",
)


class DynflowError(Exception):
    """Base class of every error raised by the package."""


class DomainError(DynflowError, ValueError):
    pass


class BoundaryError(DomainError):
    pass


class DegenerateMetricError(DynflowError, ValueError):
    pass


class DimensionError(DynflowError, ValueError):
    pass


class MarginalError(DynflowError, ValueError):
    pass


class OrderingError(DynflowError, ValueError):
    pass


class ConvergenceError(DynflowError, RuntimeError):
    """An iterative solver stopped before reaching its tolerance.

    Parameters
    ----------
    message : str
        Description of the failure
    residual : float, optional
        Last residual seen by the solver
    """

    def __init__(self, message: str, residual: Optional[float] = None) -> None:
        super(ConvergenceError, self).__init__(message)
        self.residual = residual


class StepError(ConvergenceError):
    pass


class SchemeError(DynflowError, RuntimeError):
    """A minimizing-movement sweep aborted; `partial` holds the steps done so far."""

    def __init__(self, message: str, partial: Any = None) -> None:
        super(SchemeError, self).__init__(message)
        self.partial = partial


class SolverError(DynflowError, RuntimeError):
    pass


class ProblemError(DynflowError, ValueError):
    pass


class UnsupportedGeometryError(DynflowError, TypeError):
    pass


class ConfigLoadError(DynflowError, ValueError):
    """Raised while loading a scenario; `key` is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str) -> None:
        super(ConfigLoadError, self).__init__(f"{key}: {message}")
        self.key = key
