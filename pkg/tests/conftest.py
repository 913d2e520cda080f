"""Shared fixtures for the solver test suite."""

import numpy as np
import pytest

from app.services.grid_service import BoundaryConditionSet, BoundaryKind, BoundarySegment, GridSpec


@pytest.fixture
def grid8() -> GridSpec:
    return GridSpec.from_extent((0.0, 0.0), (1.0, 1.0), 8)


@pytest.fixture
def walls() -> BoundaryConditionSet:
    return BoundaryConditionSet.uniform(BoundarySegment(kind=BoundaryKind.VELOCITY))


@pytest.fixture
def open_east() -> BoundaryConditionSet:
    wall = [BoundarySegment(kind=BoundaryKind.VELOCITY)]
    return BoundaryConditionSet(
        west=wall, east=[BoundarySegment(kind=BoundaryKind.TRACTION)], south=wall, north=wall
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
