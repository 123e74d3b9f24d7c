"""Select the kernel implementation at import time.

The compiled extension is preferred; ``NETGAME_PURE=1`` forces the
pure-Python twin, which is also used when the extension was not built.
"""
import logging
import os

log = logging.getLogger(__name__)

_FORCE_PURE = os.environ.get("NETGAME_PURE", "").strip().lower() in ("1", "true", "yes")

if _FORCE_PURE:
    from . import _core_py as kernels
else:
    try:
        from . import _core as kernels
    except ImportError:  # extension not built
        log.info("compiled kernels unavailable; using pure-Python fallback")
        from . import _core_py as kernels

BACKEND = kernels.BACKEND


def get_kernels(name=None):
    """Return a specific backend module (``"cython"`` or ``"python"``) or the active one."""
    if name is None:
        return kernels
    if name == "python":
        from . import _core_py

        return _core_py
    if name == "cython":
        from . import _core

        return _core
    raise ValueError(f"unknown backend {name!r}")
