"""Hot numeric kernels with a numba and a pure-numpy implementation.

The active backend is chosen at import time from the ``QAC_BACKEND``
environment variable: ``numba`` (default when importable) or ``numpy``.
Both implement the same contracts; ``benchmarks/bench_kernels.py`` compares
their throughput and the test suite pins their numerical agreement.
"""

from __future__ import annotations

import importlib
import os

_VALID = ("numba", "numpy")


def load_backend(name: str):
    if name not in _VALID:
        raise ValueError(f"QAC_BACKEND must be one of {_VALID}, got {name!r}")
    return importlib.import_module(f".{name}_backend", __package__)


def _select():
    requested = os.environ.get("QAC_BACKEND", "").strip().lower()
    if requested == "numpy":
        return "numpy", load_backend("numpy")
    try:
        return "numba", load_backend("numba")
    except ImportError:
        if requested == "numba":
            raise
        return "numpy", load_backend("numpy")


BACKEND, _impl = _select()

seq_nll = _impl.seq_nll
seq_grads = _impl.seq_grads
cell_batch = _impl.cell_batch

__all__ = ["BACKEND", "seq_nll", "seq_grads", "cell_batch", "load_backend"]
