"""Numba switch.

Set ``RETARGET_GUIDANCE_DISABLE_NUMBA=1`` to run the pure-numpy paths. The
flag is read once at import time.
"""

import os

DISABLE_NUMBA = os.environ.get("RETARGET_GUIDANCE_DISABLE_NUMBA", "0").lower() in ("1", "true", "yes")

try:
    if DISABLE_NUMBA:
        raise ImportError
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    _njit = None
    HAVE_NUMBA = False


def maybe_njit(func=None, **kwargs):
    """``numba.njit`` when numba is enabled, identity otherwise."""
    opts = {"cache": True, "fastmath": False}
    opts.update(kwargs)

    def wrap(f):
        if HAVE_NUMBA:
            return _njit(**opts)(f)
        return f

    if func is not None:
        return wrap(func)
    return wrap
