"""
Shared fixtures for the co-carrying toolkit tests
"""

import math
import shutil
from pathlib import Path

import numpy as np
import pytest

from cocarry.skeleton import JOINT_LOWER, JOINT_UPPER, BodyGeometry

FIXTURES = Path(__file__).parent / "fixtures"

# Postures the fixture frames were generated from (left arm first)
TABLE_Q = np.array([0.0, math.pi / 3, 0.0, -math.pi / 6] * 2)
BOX_Q = np.array([0.0, math.pi / 2, 0.0, -math.pi / 3, 0.0, math.pi / 6, 0.0, 0.0])


@pytest.fixture
def geometry() -> BodyGeometry:
    return BodyGeometry(0.30, 0.25, np.array([0.18, 0.0, 0.0]), np.array([-0.18, 0.0, 0.0]))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def interior_postures(rng):
    """Random postures kept away from the joint limits"""
    margin = 0.05 * (JOINT_UPPER - JOINT_LOWER)

    def sample(n: int) -> np.ndarray:
        return rng.uniform(JOINT_LOWER + margin, JOINT_UPPER - margin, size=(n, 4))

    return sample


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def scenario_copy(tmp_path):
    """Copy a fixture scenario and its inputs into a scratch directory"""

    def copy(name: str) -> Path:
        for path in FIXTURES.glob(f"{name}*"):
            shutil.copy(path, tmp_path / path.name)
        return tmp_path / f"{name}.yaml"

    return copy
