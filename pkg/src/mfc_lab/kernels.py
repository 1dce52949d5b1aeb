"""Kernel backend selection.

The compiled ``_kernels`` extension is used when it imports; otherwise the
numpy fallback in ``_kernels_py`` is used. Set ``MFC_LAB_KERNELS=python`` to
force the fallback. Both backends expose ``interp_ring`` and ``rk4_step``.
"""

import importlib
import os

from mfc_lab import _kernels_py

BACKENDS = ("cython", "python")


def load(name):
    """Return the kernel module for backend ``name``."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        return importlib.import_module("mfc_lab._kernels")
    raise ValueError(f"unknown kernel backend {name!r}; expected one of {BACKENDS}")


def available():
    """Backends importable in this environment."""
    names = []
    for name in BACKENDS:
        try:
            load(name)
        except ImportError:
            continue
        names.append(name)
    return names


def use(name):
    """Switch the process-wide backend."""
    global BACKEND, interp_ring, rk4_step
    mod = load(name)
    BACKEND = name
    interp_ring = mod.interp_ring
    rk4_step = mod.rk4_step


BACKEND = "python"
interp_ring = _kernels_py.interp_ring
rk4_step = _kernels_py.rk4_step

if os.environ.get("MFC_LAB_KERNELS", "").lower() != "python":
    try:
        use("cython")
    except ImportError:
        pass
