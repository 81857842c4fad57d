"""Selects the step kernel at import time.

The compiled extension is preferred; the NumPy fallback is used when the
extension is missing or when BRANCHSEL_PURE=1 is set (handy for
benchmarking the two against each other).  Both satisfy the same contract
and consume random variates identically, so results are bit-identical.
"""

import os

from . import _fallback

if os.environ.get("BRANCHSEL_PURE") == "1":
    _impl = _fallback
    HAVE_EXTENSION = False
else:
    try:
        from . import _kernel as _impl  # type: ignore[attr-defined]
        HAVE_EXTENSION = True
    except ImportError:
        _impl = _fallback
        HAVE_EXTENSION = False

advance_step = _impl.advance_step
run_selected = getattr(_impl, "run_selected", None)
HAS_FUSED = run_selected is not None
KERNEL_NAME = "compiled" if HAVE_EXTENSION else "numpy"
