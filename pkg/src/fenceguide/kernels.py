"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback is. Set ``FENCEGUIDE_KERNELS=python`` to force the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("FENCEGUIDE_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

hysteresis = _impl.hysteresis
directional_response = _impl.directional_response
directional_scatter = _impl.directional_scatter
