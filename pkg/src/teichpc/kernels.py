"""Kernel backend selection.

The compiled extension is used when it importable; set ``TEICHPC_PURE=1`` to
force the numpy fallback. Both backends implement the same contract and agree
to floating-point roundoff.
"""

import os

from . import _kernels_np

if os.environ.get("TEICHPC_PURE", "0") not in ("", "0"):
    _impl = _kernels_np
else:
    try:
        from . import _kernels_c as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _kernels_np

BACKEND = _impl.BACKEND
mls_system = _impl.mls_system
solve_stencils = _impl.solve_stencils
glap_rows = _impl.glap_rows
pcbc_derivs = _impl.pcbc_derivs

__all__ = ["BACKEND", "mls_system", "solve_stencils", "glap_rows", "pcbc_derivs"]
