"""Counter-based random numbers shared by both kernel backends.

Every draw is a pure function of ``(key, counter)`` built from splitmix64, so a
walk or an SGD step gets the same uniforms no matter which backend runs it,
how many workers there are, or in what order tasks finish.
"""

import numpy as np

from ._backend import njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@njit
def splitmix64(x):
    z = np.uint64(x) + GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit
def mix(h, x):
    return splitmix64(np.uint64(h) ^ splitmix64(np.uint64(x)))


@njit
def uniform(key, counter):
    """Uniform in [0, 1) with 53 bits of resolution."""
    return float(mix(key, counter) >> _S11) * _INV53


def splitmix64_np(x):
    z = np.asarray(x, dtype=np.uint64) + GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def mix_np(h, x):
    return splitmix64_np(np.asarray(h, dtype=np.uint64) ^ splitmix64_np(x))


def uniform_np(key, counter):
    return (mix_np(key, counter) >> _S11).astype(np.float64) * _INV53


def stream_key(*parts):
    """Fold integers into one 64-bit stream key (scalar, Python side)."""
    h = np.uint64(0x243F6A8885A308D3)
    with np.errstate(over="ignore"):
        for p in parts:
            h = mix_np(h, np.uint64(int(p) & 0xFFFFFFFFFFFFFFFF))
    return np.uint64(h)
