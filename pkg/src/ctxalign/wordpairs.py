"""Unsupervised word-pair extraction via IBM Model 1.

Classic Model 1 EM with a NULL token prepended to every source
sentence, run in both translation directions; the one-to-one pairs in
the intersection of the two Viterbi alignments form a high-precision
word-pair set.  Externally produced Pharaoh files can be used instead
through corpus.load_parallel_corpus.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

from .corpus import Entry, ParallelCorpus, Sentence, WordPairSet
from .errors import DataError

NULL = "<NULL>"
FLOOR = 1e-12


@dataclass(frozen=True)
class TranslationTable:
    """p(target type | source type), normalized per source type.

    ``probs[src][tgt]`` exists for every co-occurring type pair; the
    distinguished NULL source type co-occurs with everything.  Unknown
    lookups fall back to a floor probability so alignment never divides
    by zero while never outranking an observed type.
    """

    probs: dict[str, dict[str, float]]

    def prob(self, src_type: str, tgt_type: str) -> float:
        return self.probs.get(src_type, {}).get(tgt_type, FLOOR)

    @property
    def src_vocab(self) -> set[str]:
        return set(self.probs)

    @property
    def tgt_vocab(self) -> set[str]:
        vocab: set[str] = set()
        for row in self.probs.values():
            vocab.update(row)
        return vocab


@dataclass(frozen=True)
class DirectionalAlignment:
    """Argmax links for one sentence pair: links[j] = source position or None (NULL)."""

    links: tuple[int | None, ...]


def _sentence_pairs(corpus: ParallelCorpus) -> list[tuple[list[str], tuple[str, ...]]]:
    return [([NULL] + list(e.src.tokens), e.tgt.tokens) for e in corpus]


def ibm1_train(corpus: ParallelCorpus, iterations: int = 10) -> TranslationTable:
    """Fit Model 1 by EM: expected link counts, then per-row renormalization.

    Probabilities start uniform over co-occurring types.  Deterministic:
    plain dict iteration follows insertion order, which is fixed by the
    corpus.
    """
    if iterations < 1:
        raise DataError("iterations must be >= 1")
    if len(corpus) == 0:
        raise DataError("cannot train on an empty corpus")
    pairs = _sentence_pairs(corpus)

    probs: dict[str, dict[str, float]] = {}
    for src_toks, tgt_toks in pairs:
        for s in src_toks:
            row = probs.setdefault(s, {})
            for t in tgt_toks:
                row[t] = 0.0
    for row in probs.values():
        uniform = 1.0 / len(row)
        for t in row:
            row[t] = uniform

    for _ in range(iterations):
        counts = {s: dict.fromkeys(row, 0.0) for s, row in probs.items()}
        for src_toks, tgt_toks in pairs:
            for t in tgt_toks:
                total = 0.0
                for s in src_toks:
                    total += probs[s][t]
                for s in src_toks:
                    counts[s][t] += probs[s][t] / total
        for s, row in counts.items():
            z = sum(row.values())
            probs[s] = {t: c / z for t, c in row.items()}
    return TranslationTable(probs)


def corpus_log_likelihood(table: TranslationTable, corpus: ParallelCorpus) -> float:
    """Model 1 log-likelihood of the corpus (uniform alignment prior)."""
    ll = 0.0
    for src_toks, tgt_toks in _sentence_pairs(corpus):
        for t in tgt_toks:
            marginal = sum(table.prob(s, t) for s in src_toks)
            ll += math.log(marginal / len(src_toks))
    return ll


def ibm1_align(table: TranslationTable, src: Sentence, tgt: Sentence) -> DirectionalAlignment:
    """Viterbi links under Model 1: each target token to its best source.

    Candidates are ordered NULL first, then source positions left to
    right; ties keep the earliest candidate, so a full tie links NULL
    and a tie among real positions links the lowest index.
    """
    links: list[int | None] = []
    for t in tgt.tokens:
        best_pos: int | None = None
        best = table.prob(NULL, t)
        for i, s in enumerate(src.tokens):
            p = table.prob(s, t)
            if p > best:
                best = p
                best_pos = i
        links.append(best_pos)
    return DirectionalAlignment(tuple(links))


def intersect(fwd: DirectionalAlignment, rev: DirectionalAlignment) -> WordPairSet:
    """One-to-one pairs linked in both directions.

    ``fwd`` links target positions to source positions; ``rev`` links
    source positions to target positions (roles swapped).  (i, j) is
    kept iff fwd[j] == i and rev[i] == j with neither side NULL.
    """
    kept = set()
    for j, i in enumerate(fwd.links):
        if i is None:
            continue
        if i < len(rev.links) and rev.links[i] == j:
            kept.add((i, j))
    return WordPairSet(frozenset(kept))


def _swapped(corpus: ParallelCorpus) -> ParallelCorpus:
    entries = tuple(
        Entry(e.tgt, e.src, WordPairSet(frozenset((j, i) for i, j in e.pairs)))
        for e in corpus
    )
    return ParallelCorpus(entries, corpus.tgt_language, corpus.src_language)


def extract_word_pairs(corpus: ParallelCorpus, iterations: int = 10) -> ParallelCorpus:
    """Replace the corpus pair sets with bidirectional-intersection pairs."""
    fwd_table = ibm1_train(corpus, iterations)
    rev_table = ibm1_train(_swapped(corpus), iterations)
    entries = []
    for e in corpus:
        fwd = ibm1_align(fwd_table, e.src, e.tgt)
        rev = ibm1_align(rev_table, e.tgt, e.src)
        entries.append(Entry(e.src, e.tgt, intersect(fwd, rev)))
    return corpus.replace_entries(entries)


def write_table_tsv(table: TranslationTable, path: str | os.PathLike) -> None:
    """Dump (src, tgt, probability) rows sorted lexicographically."""
    rows = sorted(
        (s, t, p) for s, row in table.probs.items() for t, p in row.items()
    )
    with open(path, "w", encoding="utf-8") as f:
        for s, t, p in rows:
            f.write(f"{s}\t{t}\t{p!r}\n")
