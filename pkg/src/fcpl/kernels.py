"""Kernel dispatch: the compiled extension when built, else pure Python.

Set ``FCPL_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels
if os.environ.get("FCPL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        pass


def best_path_dp(q, r, s, alive, max_gap: float, impl=None) -> np.ndarray:
    impl = impl or _impl
    q = np.ascontiguousarray(q, dtype=np.float64)
    r = np.ascontiguousarray(r, dtype=np.float64)
    s = np.ascontiguousarray(s, dtype=np.float64)
    alive = np.ascontiguousarray(alive, dtype=np.uint8)
    if impl is _pykernels:
        return impl.best_path_dp(q.tolist(), r.tolist(), s.tolist(), alive.tolist(), float(max_gap))
    return impl.best_path_dp(q, r, s, alive, float(max_gap))


def average_precision(labels, n_positives: int, impl=None) -> float:
    impl = impl or _impl
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    if impl is _pykernels:
        return impl.average_precision(labels.tolist(), int(n_positives))
    return float(impl.average_precision(labels, int(n_positives)))
