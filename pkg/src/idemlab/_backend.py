"""Kernel backend selection: numba-jitted or pure-Python, chosen by env flag.

Set ``IDEMLAB_BACKEND=numpy`` to force the pure-Python fallback,
``IDEMLAB_BACKEND=numba`` to require numba (ImportError if missing).
Default ``auto`` uses numba when importable.

Both paths execute the same kernel source, so results are bit-identical
across backends (numba compiles IEEE-compliant, fastmath stays off).
"""

import os

_FLAG = os.environ.get("IDEMLAB_BACKEND", "auto").strip().lower()

if _FLAG in ("numpy", "python", "off", "0"):
    USE_NUMBA = False
elif _FLAG in ("numba", "jit", "1"):
    from numba import njit as _njit  # noqa: F401  (raises if unavailable)

    USE_NUMBA = True
elif _FLAG == "auto":
    try:
        from numba import njit as _njit  # noqa: F401

        USE_NUMBA = True
    except ImportError:
        USE_NUMBA = False
else:
    raise ValueError(
        f"IDEMLAB_BACKEND must be 'auto', 'numba' or 'numpy', got {_FLAG!r}"
    )


def jit_kernel(func):
    """Decorate a hot kernel: numba njit when enabled, plain function otherwise."""
    if USE_NUMBA:
        return _njit(cache=True, fastmath=False)(func)
    return func


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
