"""Stable 64-bit hashing and canonical JSON used across traces, logs and bundles.

Python's built-in hash() is salted per process, so everything that must be
reproducible across runs (settings digests, payload digests, manifest
entries, derived RNG streams) goes through 64-bit FNV-1a instead.
"""
from __future__ import annotations

import json
from typing import Any, Union

_FNV_OFFSET64 = 0xCBF29CE484222325
_FNV_PRIME64 = 0x100000001B3
MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes, seed: int = _FNV_OFFSET64) -> int:
    """64-bit FNV-1a over raw bytes."""
    h = seed & MASK64
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME64) & MASK64
    return h


def bulk64(*chunks: bytes) -> int:
    """C-speed 64-bit content hash for bulk internal data (trace arrays).

    Not FNV: FNV-1a stays the cross-implementation contract for payload and
    manifest digests, where inputs are small; megabyte arrays hashed on every
    run go through blake2b instead.
    """
    import hashlib

    h = hashlib.blake2b(digest_size=8)
    for c in chunks:
        h.update(c)
    return int.from_bytes(h.digest(), "little")


def _to_bytes(x: Union[int, str, bytes]) -> bytes:
    if isinstance(x, bytes):
        return x
    if isinstance(x, int):
        return (x & MASK64).to_bytes(8, "little")
    return str(x).encode("utf-8")


def mix64(base: int, *parts: Union[int, str, bytes]) -> int:
    """Deterministically mix a base seed with labels into a new 64-bit value.

    Used to derive named RNG streams and per-run seeds from one master seed.
    """
    h = fnv1a64(_to_bytes(base))
    for p in parts:
        h ^= fnv1a64(_to_bytes(p))
        h = (h * _FNV_PRIME64) & MASK64
    # final avalanche so low-entropy inputs still flip high bits
    h ^= h >> 33
    h = (h * 0xFF51AFD7ED558CCD) & MASK64
    h ^= h >> 33
    return h


def canonical_json(obj: Any) -> str:
    """Canonical JSON: sorted keys, compact separators, ASCII only.

    Timestamps and counters must already be integers; floats are allowed only
    for inherently fractional quantities (rates, fractions) and serialize via
    repr, which is deterministic for a given double.
    """
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def digest_json(obj: Any) -> int:
    return fnv1a64(canonical_json(obj).encode("utf-8"))


def digest_file(path, chunk_size: int = 1 << 20) -> tuple[int, int]:
    """Return (fnv1a64, length) of a file's contents."""
    h = _FNV_OFFSET64
    length = 0
    with open(path, "rb") as f:
        while True:
            chunk = f.read(chunk_size)
            if not chunk:
                break
            length += len(chunk)
            h = fnv1a64(chunk, seed=h)
    return h, length
