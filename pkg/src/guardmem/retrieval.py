"""Embedding providers and cosine top-k retrieval."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

STUB_DIM = 256

_FNV_OFFSET = 0x811C9DC5
_FNV_PRIME = 0x01000193
_TOKEN_RE = re.compile(r"[a-z0-9_=]+")


@dataclass(frozen=True)
class RetrievalLimits:
    max_cases: int = 5
    max_broad: int = 2
    max_local: int = 2

    def __post_init__(self):
        if min(self.max_cases, self.max_broad, self.max_local) < 1:
            raise ValueError("retrieval limits must be positive")


class Embedder(Protocol):
    def embed(self, text: str) -> np.ndarray: ...


def tokenize(text: str) -> list[str]:
    """Lowercased tokens; ``key=value`` pairs stay a single token."""
    return _TOKEN_RE.findall(text.lower())


def fnv1a_32(token: str) -> int:
    h = _FNV_OFFSET
    for byte in token.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFF
    return h


class HashingEmbedder:
    """Deterministic bag-of-words embedding: FNV-1a token hashes into fixed buckets."""

    def __init__(self, dim: int = STUB_DIM):
        self.dim = dim
        self._cache: dict[str, np.ndarray] = {}

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise ValueError("cannot embed empty text")
        cached = self._cache.get(text)
        if cached is not None:
            return cached
        vec = np.zeros(self.dim)
        for token in tokenize(text):
            vec[fnv1a_32(token) % self.dim] += 1.0
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            raise ValueError(f"text has no embeddable tokens: {text!r}")
        vec /= norm
        vec.setflags(write=False)
        self._cache[text] = vec
        return vec


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def retrieve(query: np.ndarray, pool: Sequence[tuple[str, np.ndarray]], k: int):
    """Top-``k`` (id, similarity) pairs by cosine, ties broken by id ascending."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if not pool:
        return []
    ids = [item_id for item_id, _ in pool]
    mat = np.vstack([vec for _, vec in pool])
    sims = mat @ query / (np.linalg.norm(mat, axis=1) * np.linalg.norm(query))
    order = sorted(range(len(ids)), key=lambda i: (-sims[i], ids[i]))
    return [(ids[i], float(sims[i])) for i in order[:k]]
