"""Signed feature-hashing bag-of-words embedding.

Tokens are lowercase alphanumeric runs. Each token is hashed with 64-bit
FNV-1a; bits 1.. pick one of 256 buckets and bit 0 picks the sign. The
accumulated vector is L2-normalised, so ranking is bit-reproducible and
needs nothing beyond numpy.
"""

from __future__ import annotations

import re

import numpy as np

DIM = 256

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = (1 << 64) - 1

# \w minus underscore == unicode letters and digits
_TOKEN_RE = re.compile(r"[^\W_]+")

Embedding = np.ndarray


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK
    return h


def _slot(token: str) -> tuple[int, float]:
    h = fnv1a_64(token.encode("utf-8"))
    return (h >> 1) % DIM, (1.0 if h & 1 == 0 else -1.0)


_slot_cache: dict[str, tuple[int, float]] = {}


def token_slot(token: str) -> tuple[int, float]:
    """Bucket index and sign for ``token``."""
    hit = _slot_cache.get(token)
    if hit is None:
        hit = _slot(token)
        if len(_slot_cache) < 1_000_000:
            _slot_cache[token] = hit
    return hit


def zero_vector() -> Embedding:
    vec = np.zeros(DIM, dtype=np.float64)
    vec.flags.writeable = False
    return vec


def normalize(vec: np.ndarray) -> Embedding:
    """Unit-length copy of ``vec``; the zero vector stays zero."""
    out = np.array(vec, dtype=np.float64)
    norm = float(np.sqrt(np.dot(out, out)))
    if norm > 0.0:
        out /= norm
    out.flags.writeable = False
    return out


def embed_tokens(tokens: list[str]) -> Embedding:
    acc = np.zeros(DIM, dtype=np.float64)
    for token in tokens:
        index, sign = token_slot(token)
        acc[index] += sign
    return normalize(acc)


def embed_text(text: str) -> Embedding:
    return embed_tokens(tokenize(text))


def is_zero(vec: Embedding) -> bool:
    return not vec.any()


def cosine_similarity(a: Embedding, b: Embedding) -> float:
    """Dot product of two unit vectors; 0.0 when either side is the zero vector."""
    if is_zero(a) or is_zero(b):
        return 0.0
    return min(1.0, max(-1.0, float(np.dot(a, b))))
