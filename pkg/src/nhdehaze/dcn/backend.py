"""Kernel backend selection for deformable sampling.

The compiled Cython extension is used when it imports; otherwise the numpy
fallback. Setting ``NHDEHAZE_BACKEND=python`` forces the fallback.
"""

from __future__ import annotations

import os
from types import ModuleType
from typing import Dict

from . import _fallback

_BACKENDS: Dict[str, ModuleType] = {"python": _fallback}
try:
    from . import _kernels  # type: ignore[attr-defined]

    _BACKENDS["compiled"] = _kernels
except ImportError:  # extension not built
    pass

_active = "compiled" if "compiled" in _BACKENDS else "python"
if os.environ.get("NHDEHAZE_BACKEND") == "python":
    _active = "python"
_num_threads = 1


def available_backends() -> list:
    return sorted(_BACKENDS)


def active_backend() -> str:
    return _active


def set_backend(name: str) -> None:
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}")
    _active = name


def set_num_threads(n: int) -> None:
    global _num_threads
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _num_threads = int(n)


def get_num_threads() -> int:
    return _num_threads


def get(name: str = None) -> ModuleType:
    return _BACKENDS[name or _active]
