"""Kernel backend selection.

The compiled engine is preferred when its extension module imported cleanly;
``CSBPQ_PURE_PYTHON=1`` forces the reference implementation. Both produce
bit-identical paths (enforced by tests), so the switch only changes speed.
"""

from __future__ import annotations

import os

from . import pure
from .params import (
    KIND_CSBP,
    KIND_LEVY,
    KIND_QPROCESS,
    KernelParams,
    build_params,
)

_cy = None
if os.environ.get("CSBPQ_PURE_PYTHON", "") != "1":
    try:
        from . import _engine_cy as _cy
    except ImportError:
        _cy = None

_impl = _cy if _cy is not None else pure


def backend() -> str:
    """Name of the active backend: ``cython`` or ``pure``."""
    return _impl.BACKEND_NAME


def simulate_path(*args):
    return _impl.simulate_path(*args)


SRC_BRANCH = pure.SRC_BRANCH
SRC_IMMIGRATION = pure.SRC_IMMIGRATION

__all__ = [
    "KIND_CSBP",
    "KIND_QPROCESS",
    "KIND_LEVY",
    "KernelParams",
    "build_params",
    "backend",
    "simulate_path",
    "SRC_BRANCH",
    "SRC_IMMIGRATION",
]
