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

import json
import math
import platform
from dataclasses import asdict, dataclass, field
from enum import StrEnum
from logging import getLogger
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np
import scipy

__all__ = (
    "OutputFormat",
    "CheckOutcome",
    "ConvergenceRow",
    "ConvergenceTable",
    "Provenance",
    "RunReport",
    "emit",
    "load_report",
    "render_plots",
)

logger = getLogger(__name__)


class OutputFormat(StrEnum):
    CSV = "csv"
    JSON = "json"
    PlotData = "plotdata"


def fmt(value: Optional[float]) -> str:
    """17 significant digits, '.' decimal; empty for missing values."""
    if value is None:
        return ""
    return format(float(value), ".17g")


@dataclass(frozen=True, slots=True)
class CheckOutcome:
    """Result of one named invariant check: worst observed value against its tolerance."""

    name: str
    invariant: str
    ok: bool
    worst: float
    tol: float
    detail: str = ""

    @classmethod
    def upper(cls, name: str, invariant: str, worst: float, tol: float, detail: str = "") -> CheckOutcome:
        """Passes when worst <= tol."""
        return cls(name, invariant, bool(worst <= tol), float(worst), float(tol), detail)

    @classmethod
    def from_report(cls, name: str, invariant: str, report: Any, worst: float, tol: float = 0.0) -> CheckOutcome:
        """Wraps the `ok`/`violations` of a module report."""
        violations = getattr(report, "violations", ())
        return cls(name, invariant, bool(report.ok), float(worst), float(tol), "; ".join(violations[:3]))


@dataclass(frozen=True, slots=True)
class ConvergenceRow:
    h: float
    error: float
    order: Optional[float] = None


@dataclass(frozen=True, slots=True)
class ConvergenceTable:
    label: str
    rows: tuple[ConvergenceRow, ...]
    fitted_order: Optional[float] = None

    @classmethod
    def from_errors(cls, label: str, steps: Sequence[float], errors: Sequence[float]) -> ConvergenceTable:
        """Rows with successive observed orders and the least-squares slope of log error on log h."""
        rows = []
        for i, (h, error) in enumerate(zip(steps, errors)):
            order = None
            if i and errors[i - 1] > 0 and error > 0:
                order = math.log(errors[i - 1] / error) / math.log(steps[i - 1] / h)
            rows.append(ConvergenceRow(float(h), float(error), order))

        positive = [(h, e) for h, e in zip(steps, errors) if e > 0]
        fitted = None
        if len(positive) >= 2:
            logs = np.log(np.asarray(positive, dtype=float))
            fitted = float(np.polyfit(logs[:, 0], logs[:, 1], 1)[0])
        return cls(label=label, rows=tuple(rows), fitted_order=fitted)

    @property
    def errors(self) -> list[float]:
        return [row.error for row in self.rows]


@dataclass(frozen=True, slots=True)
class Provenance:
    config_hash: str
    python: str = field(default_factory=platform.python_version)
    numpy: str = np.__version__
    scipy: str = scipy.__version__


@dataclass(frozen=True, slots=True)
class RunReport:
    """Everything one scenario run produced.

    `series` columns are aligned with `times` (one value per grid node); `traces` hold series
    sampled on their own time points as (times, values) pairs.
    """

    scenario: str
    flow: str
    provenance: Provenance
    times: tuple[float, ...] = ()
    series: dict[str, tuple[float, ...]] = field(default_factory=dict)
    traces: dict[str, tuple[tuple[float, ...], tuple[float, ...]]] = field(default_factory=dict)
    checks: tuple[CheckOutcome, ...] = ()
    tables: tuple[ConvergenceTable, ...] = ()
    values: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name, column in self.series.items():
            if len(column) != len(self.times):
                raise ValueError(f"series {name!r} has {len(column)} values for {len(self.times)} nodes")

    @property
    def ok(self) -> bool:
        return all(item.ok for item in self.checks)

    @property
    def failed(self) -> list[CheckOutcome]:
        return [item for item in self.checks if not item.ok]

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["ok"] = self.ok
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RunReport:
        return cls(
            scenario=data["scenario"],
            flow=data["flow"],
            provenance=Provenance(**data["provenance"]),
            times=tuple(data["times"]),
            series={k: tuple(v) for k, v in data["series"].items()},
            traces={k: (tuple(t), tuple(v)) for k, (t, v) in data["traces"].items()},
            checks=tuple(CheckOutcome(**item) for item in data["checks"]),
            tables=tuple(
                ConvergenceTable(
                    label=table["label"],
                    rows=tuple(ConvergenceRow(**row) for row in table["rows"]),
                    fitted_order=table["fitted_order"],
                )
                for table in data["tables"]
            ),
            values=dict(data["values"]),
        )


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[str]]) -> Path:
    with path.open("w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(row) + "\n")
    return path


def _emit_csv(report: RunReport, directory: Path) -> list[Path]:
    names = list(report.series)
    files = [
        _write_csv(
            directory / f"{report.scenario}.csv",
            ["t", *names],
            ([fmt(t), *(fmt(report.series[name][i]) for name in names)] for i, t in enumerate(report.times)),
        ),
        _write_csv(
            directory / f"{report.scenario}_checks.csv",
            ["name", "invariant", "ok", "worst", "tol"],
            ([c.name, c.invariant, str(c.ok).lower(), fmt(c.worst), fmt(c.tol)] for c in report.checks),
        ),
    ]
    if report.tables:
        files.append(
            _write_csv(
                directory / f"{report.scenario}_convergence.csv",
                ["label", "h", "error", "order", "fitted_order"],
                (
                    [table.label, fmt(row.h), fmt(row.error), fmt(row.order), fmt(table.fitted_order)]
                    for table in report.tables
                    for row in table.rows
                ),
            )
        )
    if report.traces:
        files.append(
            _write_csv(
                directory / f"{report.scenario}_traces.csv",
                ["series", "t", "value"],
                (
                    [name, fmt(t), fmt(v)]
                    for name, (times, values) in report.traces.items()
                    for t, v in zip(times, values)
                ),
            )
        )
    return files


def _emit_plotdata(report: RunReport, directory: Path) -> list[Path]:
    files = []
    columns = {name: (report.times, values) for name, values in report.series.items()}
    for name, (times, values) in {**columns, **report.traces}.items():
        path = directory / f"{report.scenario}_{name}.dat"
        with path.open("w", encoding="utf-8", newline="\n") as f:
            for t, v in zip(times, values):
                f.write(f"{fmt(t)} {fmt(v)}\n")
        files.append(path)
    return files


def emit(report: RunReport, format: OutputFormat | str, directory: Path | str) -> list[Path]:
    """Write a report to `directory` as CSV, a single JSON document or plot-data files.

    I/O errors propagate unchanged.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    match OutputFormat(format):
        case OutputFormat.CSV:
            files = _emit_csv(report, directory)
        case OutputFormat.JSON:
            path = directory / f"{report.scenario}.json"
            path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
            files = [path]
        case OutputFormat.PlotData:
            files = _emit_plotdata(report, directory)

    logger.info("Wrote %d %s file(s) for %s into %s", len(files), format, report.scenario, directory)
    return files


def load_report(path: Path | str) -> RunReport:
    return RunReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def render_plots(directory: Path | str) -> list[Path]:
    """Render every plot-data series under `directory` to `plots/<series>.png`.

    Returns no paths when matplotlib is not installed.
    """
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ModuleNotFoundError:
        logger.error("matplotlib is not installed, skipping plots")
        return []

    directory = Path(directory)
    target = directory / "plots"
    files = []
    for item in sorted(directory.glob("*.dat")):
        data = np.loadtxt(item, ndmin=2)
        fig, ax = plt.subplots(figsize=(6, 4))
        if data.size:
            ax.plot(data[:, 0], data[:, 1], marker=".", linewidth=1)
        ax.set_xlabel("t")
        ax.set_title(item.stem)
        target.mkdir(exist_ok=True)
        path = target / f"{item.stem}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        files.append(path)
    return files
