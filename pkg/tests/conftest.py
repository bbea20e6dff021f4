import numpy as np
import pytest

from dmrifem import build_structured_mesh, geometry_tables, pgse
from dmrifem.mesh import marker_from_axis_breaks
from dmrifem.stepper import StepperConfig, build_problem, fem_system_for


@pytest.fixture(scope="session")
def interval_mesh():
    return build_structured_mesh(0.0, 10.0, 100)


@pytest.fixture(scope="session")
def interval_geo(interval_mesh):
    return geometry_tables(interval_mesh)


@pytest.fixture(scope="session")
def pgse_validation():
    """The validation PGSE timing used throughout: delta=10600, Delta=43100."""
    return pgse(10600.0, 43100.0)


@pytest.fixture
def two_compartment_problem(interval_mesh):
    """5+5 um interval, D=3e-3, permeable membrane kappa=1e-5 m/s, Neumann."""
    marker = marker_from_axis_breaks(interval_mesh, 0, [5.0])
    comp = {0: {"D": 3e-3}, 1: {"D": 3e-3}}
    return build_problem(interval_mesh, marker, comp, kappa=1e-5, bc="neumann")


def make_problem(mesh, compartments, marker=None, **kw):
    if marker is None:
        marker = np.zeros(mesh.num_cells, dtype=np.int64)
    return build_problem(mesh, marker, compartments, **kw)


@pytest.fixture
def xdir():
    return np.array([1.0, 0.0, 0.0])
