"""Backend selection for the hot inner loops.

The compiled extension is preferred; set ``DCNET_PURE_PYTHON=1`` to force the
numpy fallback (useful for debugging and for the benchmark comparison).
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("DCNET_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

im2col = _impl.im2col
col2im = _impl.col2im
band_sum = _impl.band_sum
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward

__all__ = ["BACKEND", "im2col", "col2im", "band_sum", "maxpool_forward", "maxpool_backward"]
