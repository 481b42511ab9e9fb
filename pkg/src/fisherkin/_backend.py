"""Backend selection for the hot loops.

``FISHERKIN_BACKEND=numpy`` forces the pure-numpy kernels; the default uses
numba when it is importable.
"""

from __future__ import annotations

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False

_VALID = ("numba", "numpy")
_state = {"name": None}


def _initial() -> str:
    name = os.environ.get("FISHERKIN_BACKEND", "numba").strip().lower()
    if name not in _VALID:
        raise ValueError(f"FISHERKIN_BACKEND must be one of {_VALID}, got {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        return "numpy"
    return name


def backend() -> str:
    """Name of the active backend."""
    if _state["name"] is None:
        _state["name"] = _initial()
    return _state["name"]


def set_backend(name: str) -> str:
    """Switch backend at runtime; returns the previous name."""
    name = name.lower()
    if name not in _VALID:
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    previous = backend()
    _state["name"] = name
    return previous


def use_numba() -> bool:
    return backend() == "numba"


def njit(func):
    """``numba.njit(cache=True)`` when available, identity otherwise."""
    if HAVE_NUMBA:
        return numba.njit(cache=True)(func)
    return func
