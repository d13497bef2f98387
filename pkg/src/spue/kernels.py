"""Kernel backend selection.

Two interchangeable implementations of the numerical kernels exist:
`_kernels_c` (Cython extension, built optionally) and `_kernels_py`
(NumPy). A backend is selected at import time and its functions are
re-exported here; modules call them as `kernels.affine_forward(...)` so
the backend can also be switched at runtime (used by the benchmark and
tests).

Backends (environment variable SPUE_BACKEND, default "auto"):

  auto    - per-kernel best. Benchmarks (see benchmarks/bench_kernels.py)
            show the compiled loops beat NumPy only where NumPy cannot
            hand off to BLAS/SIMD: pairwise squared distances (~5x), the
            fused SGD update (~2x), and tanh backward. Matrix products
            and softmax stay on NumPy. Resolves to "mixed" when the
            extension is importable, else "python".
  c       - compiled extension for every kernel (error if not built).
  python  - NumPy for every kernel.

Backends differ only in floating-point rounding (summation order / FMA
contraction); each is bit-deterministic run to run.
"""

import os

from . import _kernels_py

try:
    from . import _kernels_c
except ImportError:
    _kernels_c = None

KERNEL_NAMES = (
    "affine_forward",
    "affine_backward",
    "tanh_forward",
    "tanh_backward",
    "softmax_xent",
    "pairwise_sqdist",
    "sgd_update",
)

# kernels where the compiled loop measured faster than the NumPy fallback
C_PREFERRED = ("pairwise_sqdist", "sgd_update", "tanh_backward")

BACKEND = None


def available_backends():
    return ("c", "python") if _kernels_c is not None else ("python",)


def set_backend(name):
    """Select the kernel implementation; returns the resolved backend name."""
    global BACKEND
    if name == "auto":
        resolved = "mixed" if _kernels_c is not None else "python"
    else:
        resolved = name
    if resolved in ("c", "mixed") and _kernels_c is None:
        raise ValueError(
            "compiled kernels unavailable; build the extension or set SPUE_BACKEND=python"
        )
    if resolved not in ("c", "python", "mixed"):
        raise ValueError(f"unknown kernel backend {name!r}")
    g = globals()
    for fname in KERNEL_NAMES:
        if resolved == "c" or (resolved == "mixed" and fname in C_PREFERRED):
            g[fname] = getattr(_kernels_c, fname)
        else:
            g[fname] = getattr(_kernels_py, fname)
    BACKEND = resolved
    return resolved


set_backend(os.environ.get("SPUE_BACKEND", "auto"))
