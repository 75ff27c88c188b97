"""Shared fixtures.  BLAS pools are pinned to one thread before numpy
loads so that timing and reduction order are reproducible everywhere."""

import os

for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
             "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest

from nvzeno import bathgen, dynamics

OPERATING_FIELD_T = 1024.98e-4


@pytest.fixture(scope="session")
def nv_params():
    return dynamics.NvParams.from_constants(b_z=OPERATING_FIELD_T)


@pytest.fixture(scope="session")
def small_bath():
    """Five spins close to the defect; strong couplings, fast dynamics."""
    cfg = bathgen.BathConfig(seed=9, n_spins=5, b_z=OPERATING_FIELD_T)
    return bathgen.sample_bath(cfg)


@pytest.fixture(scope="session")
def weak_bath():
    """Eight spins pushed far out; perturbative regime, tame expansion."""
    cfg = bathgen.BathConfig(seed=3, n_spins=8, b_z=OPERATING_FIELD_T,
                             r_min_m=4.0e-9)
    return bathgen.sample_bath(cfg)


def make_bath(seed, n, r_min_m=0.5e-9, b_z=OPERATING_FIELD_T):
    cfg = bathgen.BathConfig(seed=seed, n_spins=n, b_z=b_z, r_min_m=r_min_m)
    return bathgen.sample_bath(cfg)


@pytest.fixture(scope="session")
def short_grid():
    return np.linspace(0.0, 2.0e-5, 40)
