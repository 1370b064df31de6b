"""Kernel backend selection.

The compiled ``_core`` extension is used when it imports; otherwise the numpy
fallback in ``_pycore``.  Soft Bellman iteration on dense dynamics always uses
the numpy path, whose matrix product is BLAS-backed.  Set ``RIFTLAB_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pycore

CAUSE_ESTOP = _pycore.CAUSE_ESTOP
CAUSE_TERMINAL = _pycore.CAUSE_TERMINAL
CAUSE_HORIZON = _pycore.CAUSE_HORIZON

_impl = _pycore
BACKEND = "python"
if os.environ.get("RIFTLAB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        pass

# Above this fill fraction a BLAS matrix-vector product beats the sparse loop.
DENSE_FILL = 0.25


def soft_bellman(P, r, offset, gamma, alpha, q0, tol, max_iters):
    """Soft Bellman fixed point; dense dynamics go to the numpy path."""
    impl = _impl
    if impl is not _pycore and np.count_nonzero(P) > DENSE_FILL * P.size:
        impl = _pycore
    return impl.soft_bellman(P, r, offset, gamma, alpha, q0, tol, max_iters)


rollout_batch = _impl.rollout_batch
mc_occupancy = _impl.mc_occupancy
