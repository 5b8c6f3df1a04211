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

import argparse
import asyncio
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from logging import getLogger
from pathlib import Path
from typing import Optional, Sequence

from dotenv import load_dotenv

from classes.errors import ConfigLoadError, DynflowError
from classes.report import OutputFormat, load_report, render_plots
from classes.runner import Command, Runner
from classes.scenario import parse_config

load_dotenv()

logger = getLogger(__name__)

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def configure_logging(level: str) -> None:
    logging.basicConfig(
        level=level.upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


def execute_file(
    command: Command | str,
    path: str,
    out: str,
    format: OutputFormat | str = OutputFormat.CSV,
    seed: Optional[int] = None,
) -> tuple[str, int]:
    """Load one scenario file, execute `command` on it and write the report.

    Returns
    -------
    tuple[str, int]
        The path with its exit code: 0 when every check passed, 1 on a failed check or an
        aborted run, 2 when the file could not be loaded
    """
    runner = Runner(logger, out=out, format=format, seed=seed)
    runner.load_suites()
    try:
        scenario = parse_config(path)
        report = runner.execute(command, scenario)
    except ConfigLoadError as e:
        logger.error("Cannot load %s: %s", path, e)
        return path, EXIT_CONFIG
    except DynflowError as e:
        logger.critical(
            "An exception occurred while running %s.",
            path,
            exc_info=e,
        )
        return path, EXIT_FAILED

    runner.write(report, scenario)
    return path, EXIT_OK if report.ok else EXIT_FAILED


def summarize(directory: Path) -> int:
    """Render plot-data series and print one line per JSON report found under `directory`."""
    if not directory.is_dir():
        logger.error("%s is not a directory", directory)
        return EXIT_CONFIG

    plots = render_plots(directory)
    code = EXIT_OK
    for item in sorted(directory.glob("*.json")):
        if item.name == "scenario.json":
            continue
        report = load_report(item)
        passed = sum(check.ok for check in report.checks)
        print(f"{report.scenario} ({report.flow}): {passed}/{len(report.checks)} checks pass")
        for check in report.failed:
            print(f"  FAIL {check.name}: {check.worst:.6g} > {check.tol:.6g} [{check.invariant}]")
        if not report.ok:
            code = EXIT_FAILED
    print(f"{len(plots)} plot(s) written to {directory / 'plots'}")
    return code


def parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynflow", description="Time-dependent minimizing-movement scenarios")
    commands = parser.add_subparsers(dest="command", required=True)
    for command in Command:
        item = commands.add_parser(command.value)
        item.add_argument("configs", nargs="+", type=Path, metavar="config")
        item.add_argument("--out", default=os.getenv("DYNFLOW_OUT", "out"))
        item.add_argument("--seed", type=int, default=None)
        item.add_argument("--jobs", type=int, default=int(os.getenv("DYNFLOW_JOBS", "1")))
        item.add_argument("--format", choices=[str(x) for x in OutputFormat], default=str(OutputFormat.CSV))
    report = commands.add_parser("report")
    report.add_argument("directory", type=Path)
    return parser


async def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parser().parse_args(argv)
    if args.command == "report":
        return summarize(args.directory)

    jobs = [(args.command, str(path), args.out, args.format, args.seed) for path in args.configs]
    if args.jobs <= 1:
        results = [execute_file(*job) for job in jobs]
    else:
        loop = asyncio.get_running_loop()
        level = getLogger().getEffectiveLevel()
        with ProcessPoolExecutor(
            max_workers=args.jobs,
            initializer=configure_logging,
            initargs=(logging.getLevelName(level),),
        ) as pool:
            results = await asyncio.gather(*(loop.run_in_executor(pool, execute_file, *job) for job in jobs))

    for path, code in results:
        logger.info("%s finished with exit code %d", path, code)
    return max(code for _, code in results)


if __name__ == "__main__":
    configure_logging(os.getenv("DYNFLOW_LOG_LEVEL", "INFO"))
    try:
        import uvloop  # type: ignore

        loop_factory = uvloop.new_event_loop
    except ModuleNotFoundError:
        loop_factory = None
        logger.error("Not using uvloop")

    with asyncio.Runner(loop_factory=loop_factory) as runner:
        sys.exit(runner.run(main()))
