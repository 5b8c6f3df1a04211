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

from typing import TYPE_CHECKING

import numpy as np

from classes.report import CheckOutcome
from classes.runner import ANY_FLOW, Command, Runner, Suite, handler
from flows.transport.exact import kantorovich, wasserstein_loglip_check

if TYPE_CHECKING:
    from classes.scenario import Scenario

__all__ = ("Transport", "setup")

DUALITY_TOL = 1e-9


class Transport(Suite):
    @handler(Command.Validate, ANY_FLOW)
    def transport_checks(self, scenario: Scenario) -> list[CheckOutcome]:
        """W_t log-Lipschitz bound and Kantorovich duality on a seeded random pair of measures."""
        if not scenario.finite:
            return []

        rng = np.random.default_rng(scenario.seed)
        mu, nu = rng.dirichlet(np.ones(scenario.n), size=2)
        family = scenario.metric_family()
        nodes = scenario.time_grid().nodes
        loglip = wasserstein_loglip_check(family, mu, nu, nodes)
        _, _, duals = kantorovich(mu, nu, family.metric_at(0.0))
        return [
            CheckOutcome.upper(
                "wasserstein-loglip",
                "|log W_t - log W_s| <= L|t - s|",
                loglip.worst_ratio - loglip.declared,
                loglip.tol,
                f"{loglip.pairs} pairs",
            ),
            CheckOutcome.upper("kantorovich-duality", "primal - dual = 0", abs(duals.gap), DUALITY_TOL),
        ]


def setup(runner: Runner) -> None:
    """Load the suite

    Parameters
    ----------
    runner : Runner
        Runner instance
    """
    runner.add_suite(Transport(runner))
