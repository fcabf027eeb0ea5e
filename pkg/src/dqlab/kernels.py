"""Kernel backend selection.

The hot elementwise kernels and the Adam update exist twice: a compiled
Cython core (``dqlab._ckernels``) and a pure-numpy fallback
(``dqlab._npkernels``). The active backend is chosen once at import:

* ``DQLAB_KERNELS=compiled`` requires the extension (ImportError if absent),
* ``DQLAB_KERNELS=python`` forces the numpy fallback,
* unset/``auto`` prefers the compiled core when it imported cleanly.

``benchmarks/bench_kernels.py`` compares the two.
"""
import os

from . import _npkernels

try:
    from . import _ckernels
except ImportError:
    _ckernels = None


def get_backend(name):
    """Return the kernel namespace for 'python' or 'compiled'."""
    if name == "python":
        return _npkernels
    if name == "compiled":
        if _ckernels is None:
            raise ImportError("compiled kernels are not available; "
                              "reinstall with a working C compiler")
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


def _select():
    choice = os.environ.get("DQLAB_KERNELS", "auto").lower()
    if choice == "auto":
        return _ckernels if _ckernels is not None else _npkernels
    return get_backend(choice)


active = _select()
backend_name = active.name
