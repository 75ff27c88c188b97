"""Central-spin relaxation in a dilute spin-1/2 bath, plus repeated-measurement
(quantum Zeno) analysis of the decay.

Modules:
    core      constants, spin operators, dipole tensors
    bathgen   diamond-lattice bath sampling and spectral line weights
    dynamics  cluster Hamiltonians and exact survival propagation
    kernel    batch survival backend selection (compiled / numpy)
    cce       cluster-correlation expansion of the survival probability
    zeno      repeated projective measurements and the overlap rate model
    cli       config-driven command line driver

Submodules load lazily so the command line driver can pin BLAS thread
environment variables before numpy is first imported.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = ("core", "bathgen", "dynamics", "kernel", "cce", "zeno", "cli")
_CORE_NAMES = ("PhysConstants", "DEFAULT_CONSTANTS")

__all__ = list(_CORE_NAMES) + list(_SUBMODULES) + ["__version__"]


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    if name in _CORE_NAMES:
        return getattr(importlib.import_module(".core", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(__all__)
