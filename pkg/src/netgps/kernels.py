"""Backend selection for the hot kernels.

Prefers the compiled extension; falls back to the numpy twins when it is
absent or when NETGPS_PURE_PYTHON=1 is set.
"""
import os

from . import _speedups_py

if os.environ.get("NETGPS_PURE_PYTHON", "") not in ("", "0"):
    _impl = _speedups_py
else:
    try:
        from . import _speedups as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _speedups_py

BACKEND: str = _impl.BACKEND
binomial_rw_chain = _impl.binomial_rw_chain
tps_design = _impl.tps_design
