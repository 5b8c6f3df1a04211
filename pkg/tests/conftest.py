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
from pathlib import Path
from textwrap import dedent

import numpy as np
import pytest
from scipy.special import xlogy

from classes.runner import Runner

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def scenarios() -> Path:
    return SCENARIOS


@pytest.fixture
def write_config(tmp_path):
    """Write a TOML scenario under tmp_path and return its path."""

    def write(text: str, name: str = "scenario") -> Path:
        path = tmp_path / f"{name}.toml"
        path.write_text(dedent(text), encoding="utf-8")
        return path

    return write


@pytest.fixture
def runner(tmp_path) -> Runner:
    item = Runner(getLogger("tests"), out=tmp_path / "out")
    item.load_suites()
    return item


def _line_w2(mu, nus, positions):
    """Squared W₂ between `mu` and every row of `nus` for measures on sorted points of the line.

    In one dimension the monotone coupling is optimal, so the cost is the integral of the squared gap
    between the two quantile functions, which are piecewise constant between the merged cumulative masses.
    """
    mu = np.asarray(mu, dtype=float)
    nus = np.atleast_2d(np.asarray(nus, dtype=float))
    positions = np.asarray(positions, dtype=float)
    n = mu.size

    cum_mu = np.cumsum(mu)
    cum_nu = np.cumsum(nus, axis=1)
    zeros = np.zeros((nus.shape[0], 1))
    breaks = np.sort(np.concatenate([zeros, np.broadcast_to(cum_mu, nus.shape), cum_nu], axis=1), axis=1)
    lengths = np.diff(breaks, axis=1)
    mids = (breaks[:, :-1] + breaks[:, 1:]) / 2

    source = np.minimum((mids[..., None] > cum_mu[None, None, :]).sum(axis=-1), n - 1)
    target = np.minimum((mids[..., None] > cum_nu[:, None, :]).sum(axis=-1), n - 1)
    return np.sum(lengths * (positions[source] - positions[target]) ** 2, axis=1)


@pytest.fixture
def line_w2():
    return _line_w2


@pytest.fixture
def simplex_search(line_w2):
    """Minimum of Σν log(ν/m) + W²(μ, ν)/(2h) over the 3-simplex at pitch 1e−3, for points on a line."""

    def search(mu, masses, positions, h, pitch: int = 1000):
        i, j = np.meshgrid(np.arange(pitch + 1), np.arange(pitch + 1), indexing="ij")
        keep = i + j <= pitch
        nus = np.stack([i[keep], j[keep], pitch - i[keep] - j[keep]], axis=1) / pitch
        entropy = np.sum(xlogy(nus, nus) - nus * np.log(masses), axis=1)
        values = entropy + line_w2(mu, nus, positions) / (2 * h)
        best = int(np.argmin(values))
        return float(values[best]), nus[best]

    return search
