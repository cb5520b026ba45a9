import os
import sys

import numpy as np
import pytest

# Add the project root to Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from algebra.expectations import ExpectationPath
from algebra.projections import ProjectionSystem, make_rotation_path, random_generator, rotation_generator
from algebra.tracial import TracialAlgebra

SCENARIO_DIR = os.path.abspath(os.path.join(os.path.dirname(__file__), '..', 'data', 'scenarios'))


def rotation_path(dim, ranks, generator=None, interval=(0.0, 1.0), seed=5, scale=1.0):
    algebra = TracialAlgebra(dim)
    base = ProjectionSystem.from_ranks(algebra, ranks)
    if generator is None:
        generator = random_generator(algebra, seed, scale)
    return make_rotation_path(base, generator, interval)


@pytest.fixture
def m2_path():
    return rotation_path(2, (1, 1), rotation_generator(2, 0, 1, 1.0))


@pytest.fixture
def m2_ep(m2_path):
    return ExpectationPath(m2_path)


@pytest.fixture
def m3_ep():
    return ExpectationPath(rotation_path(3, (1, 2), seed=23))


@pytest.fixture
def three_block_ep():
    return ExpectationPath(rotation_path(3, (1, 1, 1), seed=31))


@pytest.fixture
def constant_ep():
    return ExpectationPath(rotation_path(3, (1, 2), np.zeros((3, 3))))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def scenario_file(tmp_path):
    def write(text, name="scenario.ini"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return str(path)
    return write
