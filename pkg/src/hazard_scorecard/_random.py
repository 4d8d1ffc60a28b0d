"""Counter-based uniform draws.

Every draw is a pure function of ``(seed, key, counter, stream)``, so a
loan's random numbers do not depend on which other loans are processed,
in what order, or on how many threads share the work.
"""
from __future__ import annotations

import hashlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(x: np.ndarray) -> np.ndarray:
    # splitmix64 finaliser; uint64 arithmetic wraps
    x = x ^ (x >> np.uint64(30))
    x = x * _M1
    x = x ^ (x >> np.uint64(27))
    x = x * _M2
    return x ^ (x >> np.uint64(31))


def string_key(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


def string_keys(texts) -> np.ndarray:
    return np.fromiter((string_key(t) for t in texts), dtype=np.uint64, count=len(texts))


def uniforms(seed: int, keys, counters, stream: int = 0) -> np.ndarray:
    """Uniform draws on [0, 1) with 53 random bits, broadcast over keys/counters."""
    keys = np.asarray(keys, dtype=np.uint64)
    counters = np.asarray(counters).astype(np.uint64)
    base = np.array([(int(seed) * 0x100000001B3 + int(stream) * 0x9E3779B1) & 0xFFFFFFFFFFFFFFFF],
                    dtype=np.uint64)
    h = _mix(base + _GOLDEN)
    h = _mix(h ^ keys)
    h = _mix(h + (counters + np.uint64(1)) * _GOLDEN)
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def normals(seed: int, keys, counters, stream: int = 0) -> np.ndarray:
    from scipy.special import ndtri

    u = uniforms(seed, keys, counters, stream)
    return ndtri(np.clip(u, 1e-300, None) if np.ndim(u) else max(u, 1e-300))
