"""Kernel backend selection.

The compiled extension is used when it has been built; otherwise the numpy
implementation takes over. ``MTGAME_BACKEND=python`` forces the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

__all__ = ["BACKEND", "available_backends", "get_kernel"]

_BACKENDS = {"python": _kernels_py.saddle_interp}
if _compiled is not None:
    _BACKENDS["cython"] = _compiled.saddle_interp


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def _default() -> str:
    forced = os.environ.get("MTGAME_BACKEND")
    if forced:
        if forced not in _BACKENDS:
            raise RuntimeError(f"MTGAME_BACKEND={forced!r} is not available; have {available_backends()}")
        return forced
    return "cython" if "cython" in _BACKENDS else "python"


BACKEND = _default()


def get_kernel(name: str | None = None):
    """Return the ``saddle_interp`` implementation for backend ``name``."""
    name = name or BACKEND
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable kernel backend {name!r}") from None
