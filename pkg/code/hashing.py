"""Carter-Wegman universal hashing of integer node ids.

h(x) = ((a*x + b) mod p) mod m with p the Mersenne prime 2^61 - 1. The scalar path
uses Python integers; ``hash_array`` evaluates the same function on numpy arrays
by folding the 122-bit product modulo p in unsigned 64-bit arithmetic.
"""
from __future__ import annotations

import builtins
import hashlib
from dataclasses import dataclass
from typing import Final

import numpy as np

PRIME: Final[int] = (1 << 61) - 1

_P = np.uint64(PRIME)
_MASK32 = np.uint64(0xFFFFFFFF)
_MASK29 = np.uint64((1 << 29) - 1)
_U3 = np.uint64(3)
_U29 = np.uint64(29)
_U32 = np.uint64(32)
_U61 = np.uint64(61)


@dataclass(frozen=True)
class UniversalHash:
    a: int
    b: int
    m: int
    p: int = PRIME

    def __post_init__(self) -> None:
        if not 1 <= self.a < self.p or not 0 <= self.b < self.p:
            raise ValueError("hash parameters out of range")
        if self.m < 1:
            raise ValueError("hash range m must be >= 1")

    def __hash__(self) -> int:
        # the module-level hash() below shadows the builtin
        return builtins.hash((self.a, self.b, self.m, self.p))

    def __call__(self, x: int) -> int:
        return ((self.a * int(x) + self.b) % self.p) % self.m

    def hash_array(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids)
        if self.p != PRIME:
            flat = [self(int(x)) for x in ids.ravel()]
            return np.asarray(flat, dtype=np.int64).reshape(ids.shape)
        x = ids.astype(np.uint64)
        if np.any(x >= _P):
            raise ValueError("keys must be smaller than the hash prime")
        return (_add_mod(_mul_mod(x, self.a), self.b) % np.uint64(self.m)).astype(np.int64)

    def as_dict(self) -> dict[str, int]:
        return {"a": self.a, "b": self.b, "p": self.p, "m": self.m}


def _fold(s: np.ndarray) -> np.ndarray:
    s = (s & _P) + (s >> _U61)
    return np.where(s >= _P, s - _P, s)


def _mul_mod(x: np.ndarray, a: int) -> np.ndarray:
    # a, x < 2^61: split both into 32-bit halves, use 2^61 == 1 (mod p)
    ah, al = np.uint64(a >> 32), np.uint64(a & 0xFFFFFFFF)
    xh, xl = x >> _U32, x & _MASK32

    hi = (ah * xh) << _U3                      # ah*xh*2^64 == 8*ah*xh
    mid = ah * xl + al * xh                    # < 2^62
    mid = (mid >> _U29) + ((mid & _MASK29) << _U32)
    lo = al * xl
    lo = (lo & _P) + (lo >> _U61)
    return _fold(_fold(hi + mid) + lo)


def _add_mod(x: np.ndarray, b: int) -> np.ndarray:
    return _fold(x + np.uint64(b))


def new_hash(seed: int, m: int) -> UniversalHash:
    if m < 1:
        raise ValueError("hash range m must be >= 1")
    rng = np.random.default_rng(seed)
    a = int(rng.integers(1, PRIME, dtype=np.int64))
    b = int(rng.integers(0, PRIME, dtype=np.int64))
    return UniversalHash(a, b, m)


def hash(f: UniversalHash, x: int) -> int:  # noqa: A001
    return f(x)


def derive_seed(seed: int, tag: str, index: int) -> int:
    digest = hashlib.sha1(f"{seed}:{tag}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def hash_family(seed: int, tag: str, count: int, m: int) -> list[UniversalHash]:
    return [new_hash(derive_seed(seed, tag, j), m) for j in range(count)]
