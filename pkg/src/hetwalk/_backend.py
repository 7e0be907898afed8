"""Kernel backend selection.

Hot loops are written twice: a numba ``@njit`` kernel and a pure-numpy path.
``HETWALK_BACKEND`` picks the default (``numba`` or ``numpy``); every public
entry point that dispatches to a kernel also takes an explicit ``backend``
argument so both paths can be exercised side by side.
"""

import os
import types
import warnings

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None

HAS_NUMBA = numba is not None
if HAS_NUMBA and "NUMBA_THREADING_LAYER" not in os.environ:
    # the bundled TBB is often too old and numba warns on every parallel launch
    numba.config.THREADING_LAYER = "workqueue"

# plain ``range`` in Python; kernels compiled with parallel=True swap in numba.prange
prange = range

_VALID = ("numba", "numpy")


def default_backend():
    name = os.environ.get("HETWALK_BACKEND", "numba").strip().lower()
    if name not in _VALID:
        raise ValueError(f"HETWALK_BACKEND must be one of {_VALID}, got {name!r}")
    if name == "numba" and not HAS_NUMBA:
        warnings.warn("numba is not importable; falling back to the numpy backend")
        return "numpy"
    return name


def resolve(backend):
    if backend is None:
        return default_backend()
    backend = backend.lower()
    if backend not in _VALID:
        raise ValueError(f"backend must be one of {_VALID}, got {backend!r}")
    if backend == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    return backend


def njit(*args, **kwargs):
    """``numba.njit`` with project defaults; identity decorator without numba."""
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    if not HAS_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn
    return numba.njit(*args, **kwargs)


def set_threads(workers):
    if HAS_NUMBA and workers and workers > 0:
        numba.set_num_threads(min(int(workers), numba.config.NUMBA_NUM_THREADS))


def jit_variant(fn, jit_options=None, **overrides):
    """Compile a copy of ``fn`` whose globals have ``overrides`` swapped in.

    Lets a kernel call jitted helpers while the original function keeps
    calling the plain Python ones, so the numpy backend never touches numba.
    """
    if not HAS_NUMBA:
        return fn
    env = dict(fn.__globals__)
    env.update(overrides)
    clone = types.FunctionType(fn.__code__, env, fn.__name__, fn.__defaults__, fn.__closure__)
    clone.__module__ = fn.__module__
    clone.__qualname__ = fn.__qualname__
    return njit(clone, **(jit_options or {}))
