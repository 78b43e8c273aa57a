"""Kernel backend selection.

The numeric hot spots (pairwise Euclidean distances, k-means assignment,
Hungarian augmenting paths) exist in two interchangeable flavours: numba
@njit loops and pure-numpy vectorized code.  The active flavour is chosen
once at import time from the environment:

    INFOSIEVE_BACKEND=numba   force numba (ImportError if unavailable)
    INFOSIEVE_BACKEND=numpy   force the pure-numpy fallback
    unset / auto              numba when importable, numpy otherwise

INFOSIEVE_THREADS caps the numba threading layer.  All kernels compute
each output element in a single thread, so results are bit-identical for
any thread count; the two backends may differ in the last ulp because
numpy reduces in a different summation order.
"""

import os

_CHOICE = os.environ.get("INFOSIEVE_BACKEND", "auto").lower()
if _CHOICE not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"INFOSIEVE_BACKEND must be 'numba', 'numpy' or 'auto', got {_CHOICE!r}"
    )

_NUMBA_OK = False
if _CHOICE in ("auto", "numba"):
    try:
        import numba  # noqa: F401

        _NUMBA_OK = True
    except ImportError:
        if _CHOICE == "numba":
            raise

if _NUMBA_OK:
    threads = os.environ.get("INFOSIEVE_THREADS")
    if threads:
        import numba

        numba.set_num_threads(max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS)))


def use_numba() -> bool:
    """True when the numba kernel flavour is active."""
    return _NUMBA_OK


def backend_name() -> str:
    return "numba" if _NUMBA_OK else "numpy"
