"""Shared fixtures for the hybrid_mpc test suite."""

from __future__ import annotations

import pathlib

import numpy as np
import pytest

from hybrid_mpc.schema_check import SCHEMA_NAMES
from hybrid_mpc.types import SrbParams, nominal_feet, standing_instance, standing_state

REPO_ROOT = pathlib.Path(__file__).resolve().parents[1]


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def quad() -> SrbParams:
    return SrbParams.placeholder_quadruped()


@pytest.fixture
def planar() -> SrbParams:
    return SrbParams.placeholder_planar()


@pytest.fixture
def standing(quad):
    """A standing quadruped: state and feet with the weight shared evenly."""
    state = standing_state(quad)
    return state, nominal_feet(quad, state)


@pytest.fixture
def small_planar_instance(planar):
    """Two-knot planar problem; with desk segmentation only contact binaries remain."""
    return standing_instance(planar, horizon_n=2, vx_ref=0.2)


@pytest.fixture
def schema_root(tmp_path: pathlib.Path) -> pathlib.Path:
    """A scratch root holding copies of the real schema files."""
    target = tmp_path / "schema"
    target.mkdir()
    for name in SCHEMA_NAMES:
        (target / name).write_text(
            (REPO_ROOT / "schema" / name).read_text(encoding="utf-8"),
            encoding="utf-8",
        )
    return tmp_path
