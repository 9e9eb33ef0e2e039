"""Kernel backend selection.

The compiled extension is used when it imports; set
``SCOREFOLLOW_BACKEND=python`` to force the numpy kernels.
"""
from __future__ import annotations

import os
from types import ModuleType

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS: dict[str, ModuleType] = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels

_forced = os.environ.get("SCOREFOLLOW_BACKEND", "").strip().lower()
if _forced and _forced not in BACKENDS:
    raise ImportError(f"SCOREFOLLOW_BACKEND={_forced!r} is not available; have {sorted(BACKENDS)}")
ACTIVE = _forced or ("cython" if "cython" in BACKENDS else "python")


def get(name: str | None = None) -> ModuleType:
    """Kernel module by name, or the active one."""
    name = ACTIVE if name is None else name
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable backend {name!r}; have {sorted(BACKENDS)}") from None


def available() -> list[str]:
    return sorted(BACKENDS)
