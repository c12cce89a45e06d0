import numpy as np
import pytest

from eitcontact.experiments import disk_mesh, equispaced_intervals
from eitcontact.mesh import TriMesh, locate_electrodes


@pytest.fixture(scope="session")
def square_mesh():
    nodes = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    triangles = [(0, 1, 2), (0, 2, 3)]
    return TriMesh(nodes, triangles)


@pytest.fixture(scope="session")
def small_disk():
    """~300-node disk at the tank radius with 8 electrode slots."""
    return disk_mesh(radius=1.06 / (2 * np.pi), n_boundary=76, growth=1.12)


@pytest.fixture(scope="session")
def small_disk_electrodes(small_disk):
    intervals = equispaced_intervals(small_disk.perimeter, 8, 0.042)
    return locate_electrodes(small_disk, intervals)


@pytest.fixture(scope="session")
def coarse_disk():
    """Very coarse disk for cheap forward tests."""
    return disk_mesh(radius=1.0, n_boundary=24, growth=1.3)
