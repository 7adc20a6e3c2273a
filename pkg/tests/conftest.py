import numpy as np
import pytest

from degwave import ProblemConfig, build_basis


@pytest.fixture(scope="session")
def cubic_cfg():
    # origin globally stable, pure cubic nonlinearity
    return ProblemConfig(p=1.5, n_modes=8, f1=0.0, c3=1.0, c5=0.0,
                         tol_abs=1e-10, tol_rel=1e-10, seed=11)


@pytest.fixture(scope="session")
def cubic_basis(cubic_cfg):
    return build_basis(cubic_cfg)


@pytest.fixture(scope="session")
def linear_cfg():
    # f == 0 is a valid config (third dissipativity branch)
    return ProblemConfig(p=1.5, n_modes=4, f1=0.0, c3=0.0, c5=0.0,
                         tol_abs=1e-12, tol_rel=1e-12, seed=5)


@pytest.fixture(scope="session")
def linear_basis(linear_cfg):
    return build_basis(linear_cfg)


@pytest.fixture(scope="session")
def double_well_cfg():
    # deep off-origin wells (V(u*) < 0) with the origin still locally stable
    return ProblemConfig(p=1.5, n_modes=16, f1=-5.0, c3=-7.0, c5=1.0,
                         tol_abs=1e-8, tol_rel=1e-8, seed=42)


@pytest.fixture(scope="session")
def double_well_basis(double_well_cfg):
    return build_basis(double_well_cfg)


@pytest.fixture()
def rng():
    return np.random.default_rng(20260809)
