"""Backend selection for the per-sample loops.

The compiled Cython core is used when it imports; otherwise the numpy
fallback. Set ``DMCANC_BACKEND=python`` to force the fallback.
"""

import importlib
import logging
import os

log = logging.getLogger(__name__)

BACKENDS = ("compiled", "python")


def load(name: str | None = None):
    """Return the kernel module for ``name`` ("compiled" or "python")."""
    if name is None:
        name = os.environ.get("DMCANC_BACKEND", "compiled")
    if name == "python":
        return importlib.import_module("dmcanc._kernels_py")
    if name != "compiled":
        raise ValueError(f"unknown backend {name!r}; expected one of {BACKENDS}")
    try:
        return importlib.import_module("dmcanc._kernels")
    except ImportError:
        log.warning("compiled kernels unavailable; using the numpy fallback")
        return importlib.import_module("dmcanc._kernels_py")


_active = load()
BACKEND = "compiled" if _active.__name__.endswith("._kernels") else "python"

COMM_IDEAL = _active.COMM_IDEAL
COMM_DELAY = _active.COMM_DELAY
COMM_EVENTS = _active.COMM_EVENTS


def get(backend: str | None = None):
    """Kernel module: the import-time default, or an explicit backend."""
    return _active if backend is None else load(backend)
