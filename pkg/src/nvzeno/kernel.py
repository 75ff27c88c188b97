"""Survival-kernel backend selection.

Prefers the compiled Cython extension, falls back to the numpy
implementation with the same contract.  Override with the environment
variable ``NVZENO_BACKEND=python`` or ``=compiled`` (the latter raises if
the extension is missing rather than silently degrading).
"""

from __future__ import annotations

import os

import numpy as np

from . import _survival_py
from .bathgen import Bath
from .dynamics import NvParams

_requested = os.environ.get("NVZENO_BACKEND", "").strip().lower()

if _requested == "python":
    _impl = _survival_py
else:
    try:
        from . import _survival as _impl  # type: ignore[no-redef]
    except ImportError:
        if _requested == "compiled":
            raise ImportError(
                "NVZENO_BACKEND=compiled but the nvzeno._survival extension "
                "is not built; reinstall with a C toolchain available")
        _impl = _survival_py

BACKEND = _impl.BACKEND_NAME


def get_backend() -> str:
    """Name of the active backend: "compiled" or "python"."""
    return BACKEND


def survival_batch(bath: Bath, nv: NvParams, clusters: np.ndarray,
                   times: np.ndarray,
                   orientations: np.ndarray | None = None,
                   include_nuclear_dipole: bool = False,
                   impl=None) -> np.ndarray:
    """Survival curves for a batch of same-size clusters of one bath.

    Thin adapter putting Bath/NvParams data into the flat array contract
    shared by both backends.  ``impl`` forces a specific backend module
    (used by the benchmark); default is the selected one.

    Returns:
        (n_clusters, n_times) float64.
    """
    clusters = np.ascontiguousarray(clusters, dtype=np.int32)
    if clusters.ndim != 2:
        raise ValueError("clusters must be a 2-D (n_clusters, size) array")
    times = np.ascontiguousarray(times, dtype=np.float64)
    if orientations is None:
        orientations = np.zeros(len(bath), dtype=np.uint8)
    orientations = np.ascontiguousarray(orientations, dtype=np.uint8)
    if orientations.shape != (len(bath),):
        raise ValueError("orientations must have one entry per bath site")
    c = bath.constants
    dd_pref = c.mu0 * c.hbar * nv.gamma_c**2 / (4.0 * np.pi)
    backend = impl if impl is not None else _impl
    return backend.survival_batch(
        np.ascontiguousarray(bath.hyperfine),
        np.ascontiguousarray(bath.positions_m),
        orientations, clusters, times,
        nv.d_zfs, nv.gamma_e, nv.gamma_c, nv.b_z, dd_pref,
        bool(include_nuclear_dipole))
