"""Backend selection for the dynamics kernels.

The compiled extension is used when importable. Set ``ENERGY_CBF_PURE_PYTHON=1``
to force the numpy fallback (the benchmark and the backend-equivalence tests
load both modules directly).
"""

import os

from . import _kernels_py

if os.environ.get("ENERGY_CBF_PURE_PYTHON", "") not in ("", "0"):
    backend = _kernels_py
else:
    try:
        from . import _kernels as backend
    except ImportError:  # extension not built
        backend = _kernels_py

BACKEND = backend.BACKEND
terms = backend.terms
accel = backend.accel
integrate = backend.integrate
mass_matrix = backend.mass_matrix


def available_backends():
    """Map backend name to module for every backend importable here."""
    found = {"python": _kernels_py}
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        found["cython"] = _kernels
    return found
