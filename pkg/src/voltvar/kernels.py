"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when importable; setting
``VOLTVAR_PURE_PYTHON=1`` forces the pure-Python twins.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels
if os.environ.get("VOLTVAR_PURE_PYTHON") != "1":
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        pass

sweep = _impl.sweep
soft_threshold_box = _impl.soft_threshold_box

__all__ = ["BACKEND", "sweep", "soft_threshold_box"]
