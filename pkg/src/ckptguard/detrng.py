"""Deterministic byte streams derived from SHA-256 in counter mode.

Everything randomized in this package (synthetic payloads, fault
injection draws) is keyed by an explicit integer seed and derives its
bytes from SHA-256(seed_be8 || counter_be8), so results are identical
across runs, platforms, and interpreter versions.
"""
from __future__ import annotations

import hashlib

BLOCK_SIZE = 32
_U64 = 1 << 64


def _check_seed(seed: int) -> None:
    if not 0 <= seed < _U64:
        raise ValueError(f"seed must fit an unsigned 64-bit integer, got {seed}")


def block(seed: int, counter: int) -> bytes:
    """Raw 32-byte block i of the stream: SHA-256(seed_be8 || i_be8)."""
    _check_seed(seed)
    msg = seed.to_bytes(8, "big") + counter.to_bytes(8, "big")
    return hashlib.sha256(msg).digest()


def keystream(seed: int, nbytes: int) -> bytes:
    """First nbytes of the concatenated block stream for seed."""
    if nbytes < 0:
        raise ValueError("nbytes must be non-negative")
    out = bytearray()
    ctr = 0
    while len(out) < nbytes:
        out += block(seed, ctr)
        ctr += 1
    return bytes(out[:nbytes])


def derive_seed(*names: object) -> int:
    """Mix arbitrary labels into a fresh u64 seed.

    Used to give sub-streams (per part, per purpose) independent seeds
    without consuming draws from the parent stream.
    """
    text = ":".join(str(n) for n in names)
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


class DrawStream:
    """Uniform integer draws backed by the counter-mode block stream.

    Each draw consumes 8-byte big-endian words and uses rejection
    sampling, so values are exactly uniform and depend only on the seed
    and the order of draws.
    """

    def __init__(self, seed: int) -> None:
        _check_seed(seed)
        self._seed = seed
        self._counter = 0
        self._buf = b""

    def _next_u64(self) -> int:
        if len(self._buf) < 8:
            self._buf += block(self._seed, self._counter)
            self._counter += 1
        value = int.from_bytes(self._buf[:8], "big")
        self._buf = self._buf[8:]
        return value

    def below(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError("upper bound must be positive")
        limit = _U64 - (_U64 % n)
        while True:
            value = self._next_u64()
            if value < limit:
                return value % n
