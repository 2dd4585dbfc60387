"""Backend selection for the hot kernels.

The compiled extension is used when it was built; otherwise the NumPy twin.
Set ``PMEFLOW_PURE_PYTHON=1`` to force the fallback.
"""
import os

if os.environ.get("PMEFLOW_PURE_PYTHON"):
    from . import _kernels_py as _impl
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        from . import _kernels_py as _impl

BACKEND = _impl.BACKEND
psor_sweep = _impl.psor_sweep
interp_linear = _impl.interp_linear
cic_deposit = _impl.cic_deposit

__all__ = ["BACKEND", "psor_sweep", "interp_linear", "cic_deposit"]
