"""Kernel backend selection.

Hot loops (lattice backward induction, Monte Carlo path simulation) exist in
two interchangeable implementations: numba ``@njit`` kernels and pure-numpy
fallbacks.  The environment variable ``OPTSWITCH_BACKEND`` selects one:

* unset or ``auto`` -- numba when importable, else numpy;
* ``numba``         -- force numba (error if unavailable);
* ``numpy``         -- force the pure-numpy path.

Both backends execute the same floating-point operations in the same order,
so for problems whose coefficient expressions use only arithmetic (no
exp/log/pow) the outputs are bit-for-bit identical; transcendental functions
may differ by a few ULP between numpy's vectorised kernels and libm.
"""

from __future__ import annotations

import os

ENV_VAR = "OPTSWITCH_BACKEND"


def _numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def backend_name() -> str:
    raw = os.environ.get(ENV_VAR, "auto").strip().lower()
    if raw in ("", "auto"):
        return "numba" if _numba_available() else "numpy"
    if raw == "numba":
        if not _numba_available():
            raise RuntimeError(f"{ENV_VAR}=numba but numba is not importable")
        return "numba"
    if raw == "numpy":
        return "numpy"
    raise RuntimeError(f"{ENV_VAR} must be auto, numba or numpy (got {raw!r})")


def kernels():
    """Return the kernel module for the active backend."""
    if backend_name() == "numba":
        from . import _kernels_nb as mod
    else:
        from . import _kernels_np as mod
    return mod
