"""Kernel selection for the implicit partial-mass step.

Prefers the compiled Scharfetter-Gummel/Newton kernel; falls back to the
numpy reference implementation when the extension is not built.  Both
expose ``newton_step(m, r, dt, mhat_inf, selfsim, tol, maxit)`` and agree
to roundoff (see tests and ``python -m critmass.benchmark``).
"""

from __future__ import annotations

import os

import numpy as np

if os.environ.get("CRITMASS_FORCE_PY"):
    from . import _stepcore_py as _kernel
else:
    try:
        from . import _stepcore as _kernel  # type: ignore[attr-defined]
    except ImportError:
        from . import _stepcore_py as _kernel

KERNEL_COMPILED = bool(getattr(_kernel, "COMPILED", False))


def newton_step(m, r, dt, mhat_inf, selfsim, tol=1e-11, maxit=14):
    m = np.ascontiguousarray(m, dtype=float)
    r = np.ascontiguousarray(r, dtype=float)
    return _kernel.newton_step(m, r, float(dt), float(mhat_inf), bool(selfsim),
                               float(tol), int(maxit))


def reference_step(m, r, dt, mhat_inf, selfsim, tol=1e-11, maxit=14):
    """Always the pure-numpy kernel (for cross-checks and benchmarks)."""
    from . import _stepcore_py

    m = np.ascontiguousarray(m, dtype=float)
    r = np.ascontiguousarray(r, dtype=float)
    return _stepcore_py.newton_step(m, r, float(dt), float(mhat_inf),
                                    bool(selfsim), float(tol), int(maxit))
