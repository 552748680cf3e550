"""Hot-kernel dispatch: compiled extension when built, numpy fallback
otherwise. Set VOXOCC_PURE_PYTHON=1 to force the fallback."""

import os

from . import numpy_ref

if os.environ.get("VOXOCC_PURE_PYTHON"):
    _impl = numpy_ref
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = numpy_ref

IMPL = _impl.IMPL
composite_forward = _impl.composite_forward
composite_backward = _impl.composite_backward
trilinear_gather = _impl.trilinear_gather
scatter_add = _impl.scatter_add
