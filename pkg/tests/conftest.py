import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from tpwave.coefficients import preset_problem  # noqa: E402
from tpwave.nash_moser import NashMoserParams, NashMoserSolver  # noqa: E402

SEED = 20240607

# three-stage end-to-end configuration shared by several modules
E2E_PARAMS = dict(N0=8, chi=1.5, n_max=3, N_cap=128, grid_size=4096)


def e2e_problem():
    return preset_problem("constant", "cos_sin_affine", epsilon=1e-3, omega=2.5)


@pytest.fixture(scope="session")
def e2e_run():
    import time

    t0 = time.perf_counter()
    solver = NashMoserSolver(e2e_problem(), NashMoserParams(**E2E_PARAMS))
    bundle = solver.run()
    return {"solver": solver, "bundle": bundle, "seconds": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def quick_params():
    return NashMoserParams(N0=8, chi=1.5, n_max=3, N_cap=32, grid_size=1024)


@pytest.fixture
def rng():
    return np.random.default_rng(SEED)
