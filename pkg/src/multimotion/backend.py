"""Kernel backend selection.

The compiled extension ``multimotion._kernels`` is preferred when it built;
otherwise the pure-numpy fallback is used. Set ``MULTIMOTION_BACKEND`` to
``compiled`` or ``python`` to force a choice (forcing ``compiled`` raises if
the extension is unavailable).
"""

from __future__ import annotations

import os

_requested = os.environ.get("MULTIMOTION_BACKEND", "auto").strip().lower()

if _requested in ("python", "numpy"):
    from . import _kernels_numpy as kernels

    BACKEND = "python"
elif _requested in ("auto", "", "compiled", "c"):
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        if _requested in ("compiled", "c"):
            raise ImportError(
                "MULTIMOTION_BACKEND=compiled but the extension is not built; "
                "run 'pip install -e .' or 'python setup.py build_ext --inplace'"
            )
        from . import _kernels_numpy as kernels  # type: ignore[no-redef]

        BACKEND = "python"
else:
    raise ValueError(f"unknown MULTIMOTION_BACKEND value: {_requested!r}")

__all__ = ["kernels", "BACKEND"]
