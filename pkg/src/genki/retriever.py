"""Dense retrieval: embeddings, inner-product scoring, top-k, and index files.

The index file layout is fixed little-endian binary:

    magic b"GKIX1" | u32 dim | u64 count | count*dim float32 vectors (row
    major) | per id: u32 byte length + UTF-8 bytes

load_index(save_index(x)) reproduces x bit for bit.
"""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .corpus import Passage, tokenize

logger = logging.getLogger(__name__)

MAGIC = b"GKIX1"


class IndexFormatError(ValueError):
    """Raised when an index file does not follow the expected layout."""


class Embedder(Protocol):
    """Maps questions and passages into a shared vector space."""

    dim: int

    def embed_question(self, text: str) -> np.ndarray: ...

    def embed_passage(self, text: str) -> np.ndarray: ...


class HashEmbedder:
    """Deterministic bag-of-words embedder using a seeded feature hash.

    Each word is hashed (blake2b keyed by the seed) to a bucket and a sign;
    the vector of signed counts is L2 normalized.  No training, no state,
    stable across processes and platforms.
    """

    def __init__(self, dim: int = 256, seed: int = 0):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.seed = seed
        self._key = struct.pack("<q", seed)
        self.empty_count = 0  # texts that produced a zero vector

    def _bucket(self, word: str) -> tuple[int, float]:
        digest = hashlib.blake2b(word.encode("utf-8"), key=self._key, digest_size=8).digest()
        value = int.from_bytes(digest, "little")
        sign = 1.0 if value & 1 else -1.0
        return (value >> 1) % self.dim, sign

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float32)
        words = tokenize(text)
        for word in words:
            bucket, sign = self._bucket(word)
            vec[bucket] += sign
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            self.empty_count += 1
            logger.warning("text embeds to the zero vector: %r", text)
            return vec
        return vec / np.float32(norm)

    # Questions and passages share one text encoder here; the split exists
    # so dual-encoder embedders fit the same protocol.
    def embed_question(self, text: str) -> np.ndarray:
        return self.embed(text)

    def embed_passage(self, text: str) -> np.ndarray:
        return self.embed(text)


@dataclass(frozen=True)
class RetrievalResult:
    """One retrieved passage with its score and 1-based rank."""

    passage_id: str
    score: float
    rank: int


class DenseIndex:
    """Passage vectors (float32, row major) plus aligned passage ids."""

    def __init__(self, matrix: np.ndarray, ids: Sequence[str]):
        matrix = np.ascontiguousarray(matrix, dtype=np.float32)
        if matrix.ndim != 2:
            raise ValueError("matrix must be 2-dimensional")
        if matrix.shape[0] != len(ids):
            raise ValueError(f"{matrix.shape[0]} vectors but {len(ids)} ids")
        if matrix.shape[0] == 0 or matrix.shape[1] == 0:
            raise ValueError("index must hold at least one vector with dim >= 1")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("index vectors must be finite")
        if len(set(ids)) != len(ids):
            raise ValueError("passage ids must be unique")
        self.matrix = matrix
        self.ids = list(ids)

    @classmethod
    def build(cls, passages: Sequence[Passage], embedder: Embedder) -> "DenseIndex":
        """Embed every passage and stack the vectors in passage order."""
        if not passages:
            raise ValueError("cannot build an index over zero passages")
        matrix = np.stack([embedder.embed_passage(p.text) for p in passages])
        return cls(matrix, [p.id for p in passages])

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    @property
    def count(self) -> int:
        return int(self.matrix.shape[0])


def similarity(question_vec: np.ndarray, passage_vec: np.ndarray) -> float:
    """Inner-product relevance score between two vectors of equal dimension."""
    q = np.asarray(question_vec, dtype=np.float64)
    p = np.asarray(passage_vec, dtype=np.float64)
    if q.shape != p.shape or q.ndim != 1:
        raise ValueError(f"dimension mismatch: {q.shape} vs {p.shape}")
    return float(q @ p)


def top_k(index: DenseIndex, question_vec: np.ndarray, k: int) -> list[RetrievalResult]:
    """The k highest-scoring passages by inner product.

    Ordered by descending score; exact score ties break by ascending passage
    id.  Asking for more passages than the index holds returns them all.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(question_vec, dtype=np.float64)
    if q.ndim != 1 or q.shape[0] != index.dim:
        raise ValueError(f"dimension mismatch: query {q.shape} vs index dim {index.dim}")
    scores = index.matrix.astype(np.float64) @ q
    order = sorted(range(index.count), key=lambda i: (-scores[i], index.ids[i]))
    return [
        RetrievalResult(passage_id=index.ids[i], score=float(scores[i]), rank=rank)
        for rank, i in enumerate(order[:k], start=1)
    ]


def save_index(index: DenseIndex, path: str | Path) -> None:
    """Write *index* to *path* in the binary layout documented above."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", index.dim))
        fh.write(struct.pack("<Q", index.count))
        fh.write(np.ascontiguousarray(index.matrix, dtype="<f4").tobytes())
        for pid in index.ids:
            raw = pid.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise IndexFormatError(f"truncated index file while reading {what}")
    return data


def load_index(path: str | Path) -> DenseIndex:
    """Read an index file written by save_index().

    Raises IndexFormatError on a wrong magic, truncation, or trailing bytes;
    a missing file raises the usual FileNotFoundError.
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise IndexFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        (dim,) = struct.unpack("<I", _read_exact(fh, 4, "dim"))
        (count,) = struct.unpack("<Q", _read_exact(fh, 8, "count"))
        if dim < 1 or count < 1:
            raise IndexFormatError(f"{path}: degenerate shape {count}x{dim}")
        raw = _read_exact(fh, count * dim * 4, "vectors")
        matrix = np.frombuffer(raw, dtype="<f4").reshape(count, dim)
        ids = []
        for i in range(count):
            (length,) = struct.unpack("<I", _read_exact(fh, 4, f"id {i} length"))
            ids.append(_read_exact(fh, length, f"id {i}").decode("utf-8"))
        if fh.read(1):
            raise IndexFormatError(f"{path}: trailing bytes after {count} ids")
    return DenseIndex(matrix, ids)
