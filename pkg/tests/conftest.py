import os

import numpy as np
import pytest

from cutfem2d.mesh import build_structured_mesh


def repo_root() -> str:
    return os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


@pytest.fixture(scope="session")
def cache_dir() -> str:
    path = os.environ.get(
        "CUTFEM2D_CACHE", os.path.join(repo_root(), "artifacts", "cache"))
    os.makedirs(path, exist_ok=True)
    return path


@pytest.fixture(scope="session")
def mesh_h01():
    return build_structured_mesh(0.1)


@pytest.fixture(scope="session")
def mesh_h005():
    return build_structured_mesh(0.05)


@pytest.fixture(autouse=True)
def _seed_numpy():
    np.random.seed(0)
