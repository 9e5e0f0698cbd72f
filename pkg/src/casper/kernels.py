"""Graph kernels with a compiled fast path.

The Cython extension ``casper._kernels`` is used when it was built; otherwise
the pure-Python routines in ``casper._pykernels`` are used. Set
``CASPER_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

import numpy as np

from . import _pykernels

try:
    if os.environ.get("CASPER_PURE_PYTHON"):
        raise ImportError("pure-python kernels requested")
    from . import _kernels as _ext
except ImportError:
    _ext = None

BACKEND = "cython" if _ext is not None else "python"


def _u8(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a) != 0, dtype=np.uint8)


def has_cycle(adj: np.ndarray) -> bool:
    if _ext is not None:
        return bool(_ext.has_cycle(_u8(adj)))
    return _pykernels.has_cycle(np.asarray(adj) != 0)


def descendants(adj: np.ndarray) -> np.ndarray:
    if _ext is not None:
        return _ext.descendants(_u8(adj))
    return _pykernels.descendants(np.asarray(adj) != 0)


def d_separated(adj: np.ndarray, i: int, j: int, zmask: np.ndarray) -> bool:
    if _ext is not None:
        return bool(_ext.d_separated(_u8(adj), i, j, _u8(zmask)))
    return _pykernels.d_separated(np.asarray(adj) != 0, i, j, np.asarray(zmask) != 0)


def sid_count(truth: np.ndarray, est: np.ndarray) -> int:
    if _ext is not None:
        return int(_ext.sid_count(_u8(truth), _u8(est)))
    return _pykernels.sid_count(np.asarray(truth) != 0, np.asarray(est) != 0)
