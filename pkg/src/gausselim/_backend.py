"""Pick the trajectory kernel at import time.

The compiled extension is used when it is importable; setting
``GAUSSELIM_PURE_PYTHON=1`` forces the pure-Python implementation.
"""

import os

from . import _kernel_py

if os.environ.get("GAUSSELIM_PURE_PYTHON", "") == "1":
    integrate = _kernel_py.integrate
    BACKEND = "python"
else:
    try:
        from ._kernel import integrate  # type: ignore[attr-defined]
        BACKEND = "compiled"
    except ImportError:  # pragma: no cover - depends on the build
        integrate = _kernel_py.integrate
        BACKEND = "python"

python_integrate = _kernel_py.integrate
