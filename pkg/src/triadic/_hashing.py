"""Counter-based hashing shared by the JIT kernels and the Python layer.

Every triple's presence in the hypergraph is a pure function of
``(seed, triple)``: the triple is packed into a 64-bit code, mixed with a
key derived from the seed, and the top 53 bits are compared against ``p``.
The same mixer drives a splitmix64 stream used for the sampling order.
"""

import hashlib
import struct

import numpy as np
from numba import njit, types
from numba.extending import intrinsic

MASK64 = (1 << 64) - 1

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_ROUND_SALT = np.uint64(0x632BE59BD9B4E019)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

ONE = np.uint64(1)
ZERO = np.uint64(0)
ALL = np.uint64(MASK64)


@intrinsic
def popcount(typingctx, x):
    """Number of set bits of an integer (LLVM ``ctpop``)."""
    if not isinstance(x, types.Integer):
        return None

    def codegen(context, builder, sig, args):
        (v,) = args
        fn = builder.module.declare_intrinsic("llvm.ctpop", [v.type])
        r = builder.call(fn, [v])
        return context.cast(builder, r, sig.args[0], sig.return_type)

    return types.int64(x), codegen


@njit(cache=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def oracle_key(seed):
    return mix64(np.uint64(seed) + GOLDEN)


@njit(cache=True)
def round_key(key, round_index):
    salt = mix64(np.uint64(round_index + 1) * GOLDEN + _ROUND_SALT)
    return mix64(key ^ salt)


@njit(cache=True)
def triple_code(a, b, c):
    """Pack a sorted triple ``a < b < c`` into one int64."""
    return (np.int64(a) << 42) | (np.int64(b) << 21) | np.int64(c)


@njit(cache=True)
def sort3(a, b, c):
    if a > b:
        a, b = b, a
    if b > c:
        b, c = c, b
    if a > b:
        a, b = b, a
    return a, b, c


@njit(cache=True)
def uniform_of(key, code):
    h = mix64(mix64(np.uint64(code) ^ key) + key)
    return np.float64(h >> _S11) * _INV53


@njit(cache=True)
def outcome(key, code, p):
    return uniform_of(key, code) < p


@njit(cache=True)
def next_u64(rng):
    rng[0] = rng[0] + GOLDEN
    return mix64(rng[0])


@njit(cache=True)
def randbelow(rng, m):
    """Uniform integer in ``[0, m)`` from the splitmix64 stream ``rng``."""
    u = np.float64(next_u64(rng) >> _S11) * _INV53
    k = np.int64(u * m)
    if k >= m:
        k = m - 1
    return k


def py_mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(*parts) -> int:
    """Pure 64-bit seed derived from an arbitrary tuple of ints, floats and strings."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, bool) or isinstance(part, (int, np.integer)):
            h.update(b"i" + int(part).to_bytes(16, "little", signed=True))
        elif isinstance(part, (float, np.floating)):
            h.update(b"f" + struct.pack("<d", float(part)))
        elif isinstance(part, str):
            h.update(b"s" + part.encode() + b"\0")
        else:
            raise TypeError(f"cannot derive a seed from {type(part).__name__}")
    return int.from_bytes(h.digest(), "little")
