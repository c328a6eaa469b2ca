"""
Shared fixtures for the test suites.
"""
import math

import numpy as np
import pytest

from app.config import Settings, Tolerances
from app.services.config_service import ConfigService
from app.services.experiment_service import ExperimentService
from app.services.field_service import FieldService
from app.services.identity_service import IdentityService
from app.services.mesh_service import MeshService
from app.services.operator_service import OperatorService
from app.services.phase_service import PhaseService
from app.services.spectral_service import SpectralService
from app.services.theorem_service import TheoremService

# One small mesh per generator, shared by parametrized tests.
SMALL_MESHES = {
    "circle": {"n": 40, "radius": 1.0},
    "interval": {"n": 30, "length": 2.0},
    "disk": {"rings": 4, "radius": 1.0},
    "annulus": {"r_in": 0.5, "r_out": 1.0, "rings": 4},
    "torus": {"nx": 8, "ny": 7, "lx": 2 * math.pi, "ly": 2 * math.pi},
    "strip": {"n_long": 12, "n_wide": 4, "length": 3.0, "width": 1.0},
    "two-disks": {"rings": 3, "radius": 1.0, "gap": 0.5},
}


@pytest.fixture
def meshes():
    return MeshService()


@pytest.fixture
def operators():
    return OperatorService()


@pytest.fixture
def fields():
    return FieldService()


@pytest.fixture
def identities(operators):
    return IdentityService(operators)


@pytest.fixture
def phases(operators):
    return PhaseService(operators)


@pytest.fixture
def spectral():
    return SpectralService(tol=1e-12, max_iter=500, seed=0, max_oracle_size=2000)


@pytest.fixture
def theorems(operators, identities, phases, meshes):
    return TheoremService(Tolerances(), operators, identities, phases, meshes)


@pytest.fixture
def configs():
    return ConfigService()


@pytest.fixture
def runner():
    return ExperimentService(Settings(output_dir="out", workers=1))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=sorted(SMALL_MESHES))
def any_mesh(request, meshes):
    return meshes.generate(request.param, SMALL_MESHES[request.param])


@pytest.fixture
def disk(meshes):
    return meshes.gen_disk(4, 1.0)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: runs a shipped configuration at full size")
