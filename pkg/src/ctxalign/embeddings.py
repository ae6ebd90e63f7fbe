"""Contextual and static embedding stores.

A ContextualEmbeddingSet holds one vector per word token (already
reduced to last-subword vectors upstream) for every sentence of one
corpus side.  A StaticEmbeddingTable maps word types to vectors in the
usual fastText text format.

Vectors live in memory as float64; the binary file format stores
float32, so loading is exact and writing rounds once at the boundary.

Binary format (little-endian): magic "CTXE", version u32 = 1, dim u32,
sentence_count u32, then per sentence a token_count u32 followed by
token_count * dim float32 values.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, NumericError

MAGIC = b"CTXE"
VERSION = 1


@dataclass(frozen=True)
class ContextualEmbeddingSet:
    """Per-sentence, per-token vectors for one corpus side."""

    dim: int
    sentences: tuple[np.ndarray, ...]

    def __post_init__(self):
        arrays = []
        for k, arr in enumerate(self.sentences):
            a = np.ascontiguousarray(arr, dtype=np.float64)
            if a.ndim != 2 or a.shape[1] != self.dim:
                raise DataError(f"sentence {k}: expected (*, {self.dim}) vectors, got {a.shape}")
            if a.shape[0] == 0:
                raise DataError(f"sentence {k}: no token vectors")
            if not np.all(np.isfinite(a)):
                raise DataError(f"sentence {k}: non-finite components")
            arrays.append(a)
        object.__setattr__(self, "sentences", tuple(arrays))

    def __len__(self) -> int:
        return len(self.sentences)

    def vector(self, sentence_index: int, token_index: int) -> np.ndarray:
        return self.sentences[sentence_index][token_index]

    def token_counts(self) -> list[int]:
        return [a.shape[0] for a in self.sentences]


def write_embeddings(emb: ContextualEmbeddingSet, path: str | os.PathLike) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<III", VERSION, emb.dim, len(emb.sentences)))
        for arr in emb.sentences:
            f.write(struct.pack("<I", arr.shape[0]))
            f.write(arr.astype("<f4").tobytes())


def load_embeddings(path: str | os.PathLike) -> ContextualEmbeddingSet:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise DataError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < 16:
        raise DataError("truncated header")
    version, dim, n_sentences = struct.unpack_from("<III", data, 4)
    if version != VERSION:
        raise DataError(f"unsupported format version {version}")
    offset = 16
    sentences = []
    for k in range(n_sentences):
        if offset + 4 > len(data):
            raise DataError(f"truncated at sentence {k}: missing token count")
        (count,) = struct.unpack_from("<I", data, offset)
        offset += 4
        nbytes = count * dim * 4
        if offset + nbytes > len(data):
            raise DataError(f"truncated at sentence {k}: payload short")
        vecs = np.frombuffer(data, dtype="<f4", count=count * dim, offset=offset)
        sentences.append(vecs.reshape(count, dim).astype(np.float64))
        offset += nbytes
    if offset != len(data):
        raise DataError(f"{len(data) - offset} trailing bytes after declared payload")
    return ContextualEmbeddingSet(dim, tuple(sentences))


@dataclass(frozen=True)
class StaticEmbeddingTable:
    """Word type -> vector, insertion-ordered."""

    dim: int
    vectors: dict[str, np.ndarray]

    def __post_init__(self):
        clean = {}
        for word, vec in self.vectors.items():
            v = np.asarray(vec, dtype=np.float64)
            if v.shape != (self.dim,):
                raise DataError(f"{word!r}: expected dim {self.dim}, got shape {v.shape}")
            if not np.all(np.isfinite(v)):
                raise DataError(f"{word!r}: non-finite components")
            clean[word] = v
        object.__setattr__(self, "vectors", clean)

    def __len__(self) -> int:
        return len(self.vectors)

    def __getitem__(self, word: str) -> np.ndarray:
        return self.vectors[word]

    def __contains__(self, word: str) -> bool:
        return word in self.vectors

    def words(self) -> list[str]:
        return list(self.vectors)

    def matrix(self) -> np.ndarray:
        """Vectors stacked in insertion order, shape (len, dim)."""
        return np.vstack(list(self.vectors.values()))


def load_static_vectors(path: str | os.PathLike) -> StaticEmbeddingTable:
    """Parse the fastText text format: header "count dim", then rows.

    Duplicate words keep their first occurrence.
    """
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise DataError("empty static-vector file")
    header = lines[0].split()
    if len(header) != 2 or not all(h.isdigit() for h in header):
        raise DataError(f"bad header line: {lines[0]!r}")
    count, dim = int(header[0]), int(header[1])
    if len(lines) - 1 != count:
        raise DataError(f"header declares {count} rows, file has {len(lines) - 1}")
    vectors: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split()
        if len(fields) != dim + 1:
            raise DataError(f"line {lineno}: expected word + {dim} floats, got {len(fields)} fields")
        word = fields[0]
        try:
            vec = np.array([float(x) for x in fields[1:]], dtype=np.float64)
        except ValueError:
            raise DataError(f"line {lineno}: non-numeric component") from None
        if word not in vectors:
            vectors[word] = vec
    return StaticEmbeddingTable(dim, vectors)


def write_static_vectors(table: StaticEmbeddingTable, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{len(table)} {table.dim}\n")
        for word, vec in table.vectors.items():
            f.write(word + " " + " ".join(repr(x) for x in vec) + "\n")


def _normalize_rows(m: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms == 0.0):
        raise NumericError(f"zero-norm vector at {what}")
    return m / norms[:, None]


def normalize_center_normalize(table: StaticEmbeddingTable) -> StaticEmbeddingTable:
    """Unit-normalize, subtract the table mean, unit-normalize again.

    The standard preprocessing applied to static vectors before fitting
    a rotation.  The output is invariant to positive per-vector scaling
    of the input.
    """
    if len(table) < 2:
        raise DataError("need at least 2 vectors to center")
    m = table.matrix()
    m = _normalize_rows(m, "first normalization")
    m = m - m.mean(axis=0)
    m = _normalize_rows(m, "second normalization (degenerate after centering)")
    return StaticEmbeddingTable(table.dim, dict(zip(table.vectors, m)))


def sentence_augment(word_vec: np.ndarray, sentence_vectors: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
    """Concatenate [word; sentence avg; sentence max; sentence min].

    The result has dimension exactly 4 * dim and is treated downstream
    as a single vector (cosine over the whole concatenation).
    """
    word = np.asarray(word_vec, dtype=np.float64)
    sent = np.asarray(sentence_vectors, dtype=np.float64)
    if sent.ndim != 2 or sent.shape[0] == 0:
        raise DataError("sentence_vectors must be a non-empty (n, dim) array")
    if word.shape != (sent.shape[1],):
        raise DataError(f"word dim {word.shape} does not match sentence dim {sent.shape[1]}")
    return np.concatenate([word, sent.mean(axis=0), sent.max(axis=0), sent.min(axis=0)])


def from_token_vectors(per_sentence: Iterable[Sequence[np.ndarray]], dim: int) -> ContextualEmbeddingSet:
    """Build a set from per-sentence lists of token vectors."""
    return ContextualEmbeddingSet(dim, tuple(np.asarray(vs, dtype=np.float64) for vs in per_sentence))
