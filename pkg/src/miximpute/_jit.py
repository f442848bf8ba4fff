"""Numba toggle for the hot kernels.

The kernels in :mod:`miximpute.kernels` are written as plain scalar/loop
code that runs unchanged either compiled by numba or as pure Python over
numpy arrays.  Set ``MIXIMPUTE_NUMBA=0`` in the environment (before first
import) to force the pure-numpy path; both paths draw from the same
``numpy.random.Generator`` bit stream and produce identical output.
"""

import os

ENV_VAR = "MIXIMPUTE_NUMBA"


def _numba_wanted() -> bool:
    flag = os.environ.get(ENV_VAR, "1").strip().lower()
    return flag not in {"0", "false", "off", "no"}


NUMBA_ENABLED = False
_numba_njit = None
if _numba_wanted():
    try:
        from numba import njit as _numba_njit

        NUMBA_ENABLED = True
    except ImportError:
        _numba_njit = None


def njit(*args, **kwargs):
    """``numba.njit`` when enabled, otherwise an identity decorator."""
    if NUMBA_ENABLED:
        return _numba_njit(*args, **kwargs)
    if args and callable(args[0]) and not kwargs:
        return args[0]

    def wrap(fn):
        return fn

    return wrap
