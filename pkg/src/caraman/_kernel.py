"""Backend selection for the jump-chain kernel.

The compiled extension is used when importable; set ``CARAMAN_PURE_PYTHON=1``
to force the numpy implementation.
"""

from __future__ import annotations

import os

from . import _jump_py

BACKEND_ENV_VAR = "CARAMAN_PURE_PYTHON"

python_kernel = _jump_py.run_jump_chain
try:
    from ._jump import run_jump_chain as compiled_kernel
except ImportError:  # extension not built
    compiled_kernel = None

if compiled_kernel is not None and os.environ.get(BACKEND_ENV_VAR, "") in ("", "0"):
    run_jump_chain = compiled_kernel
    BACKEND = "cython"
else:
    run_jump_chain = python_kernel
    BACKEND = "python"
