"""Contextual word retrieval with cosine or CSLS similarity.

Given parallel corpora and their embeddings, a query token in one
language must retrieve its exact counterpart (sentence and position) in
the other.  CSLS discounts each point's cosine by the mean similarity
to its k nearest cross-space neighbors, countering hubness:

    score(x, y) = 2 cos(x, y) - r_T(x) - r_S(y)

where r_T(x) averages the k nearest candidates of x and r_S(y) the k
nearest queries of y.  Scoring is blocked over query rows to bound
memory; block size never changes results.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .corpus import ParallelCorpus, Sentence, dedupe_first_occurrence
from .embeddings import ContextualEmbeddingSet
from .errors import DataError

COSINE = "cosine"
CSLS = "csls"
DEFAULT_BLOCK = 1024

Ref = tuple[int, int]


@dataclass(frozen=True)
class CandidatePool:
    """Flat vectors plus their (sentence, token) back-references."""

    vectors: np.ndarray
    refs: tuple[Ref, ...]

    def __post_init__(self):
        v = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != len(self.refs):
            raise DataError("pool vectors and back-references disagree")
        if v.shape[0] == 0:
            raise DataError("empty pool")
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "refs", tuple(self.refs))

    def __len__(self) -> int:
        return len(self.refs)


def build_pool(emb: ContextualEmbeddingSet) -> CandidatePool:
    """Every token position of every sentence, in (sentence, token) order."""
    if len(emb) == 0:
        raise DataError("empty embedding set")
    refs = []
    for s, arr in enumerate(emb.sentences):
        refs.extend((s, t) for t in range(arr.shape[0]))
    return CandidatePool(np.vstack(emb.sentences), tuple(refs))


def build_pool_at(emb: ContextualEmbeddingSet, refs: Sequence[Ref]) -> CandidatePool:
    """Pool restricted to the given (sentence, token) positions, in order."""
    if not refs:
        raise DataError("empty pool")
    vecs = np.vstack([emb.sentences[s][t] for s, t in refs])
    return CandidatePool(vecs, tuple(refs))


def _unit_rows(m: np.ndarray) -> np.ndarray:
    # zero-norm rows stay zero, giving cos = 0 against everything
    norms = np.linalg.norm(m, axis=1)
    safe = np.where(norms > 0.0, norms, 1.0)
    return m / safe[:, None]


def _topk_row_means(qn: np.ndarray, cn: np.ndarray, k: int, block: int) -> np.ndarray:
    """Mean cosine from each qn row to its k nearest cn rows (blocked)."""
    n, m = qn.shape[0], cn.shape[0]
    k_eff = min(k, m)
    out = np.empty(n)
    for lo in range(0, n, block):
        sims = qn[lo : lo + block] @ cn.T
        top = np.partition(sims, m - k_eff, axis=1)[:, m - k_eff :]
        out[lo : lo + block] = top.mean(axis=1)
    return out


def csls_scores(
    queries: CandidatePool, candidates: CandidatePool, k: int, block: int = DEFAULT_BLOCK
) -> np.ndarray:
    """Full CSLS score matrix (queries x candidates)."""
    if k < 1:
        raise DataError("neighborhood size must be >= 1")
    qn = _unit_rows(queries.vectors)
    cn = _unit_rows(candidates.vectors)
    if qn.shape[1] != cn.shape[1]:
        raise DataError("query and candidate dims differ")
    r_t = _topk_row_means(qn, cn, k, block)
    r_s = _topk_row_means(cn, qn, k, block)
    return 2.0 * (qn @ cn.T) - r_t[:, None] - r_s[None, :]


def retrieve(
    queries: CandidatePool,
    candidates: CandidatePool,
    sim: str = CSLS,
    k: int = 10,
    block: int = DEFAULT_BLOCK,
) -> tuple[np.ndarray, np.ndarray]:
    """Best candidate per query: (indices, scores).

    Ties break to the first candidate in pool order, i.e. the smallest
    (sentence, token) reference.
    """
    if sim not in (COSINE, CSLS):
        raise DataError(f"unknown similarity {sim!r}")
    qn = _unit_rows(queries.vectors)
    cn = _unit_rows(candidates.vectors)
    if qn.shape[1] != cn.shape[1]:
        raise DataError("query and candidate dims differ")
    if sim == CSLS:
        r_t = _topk_row_means(qn, cn, k, block)
        r_s = _topk_row_means(cn, qn, k, block)
    n = qn.shape[0]
    pred = np.empty(n, dtype=np.int64)
    score = np.empty(n)
    for lo in range(0, n, block):
        sims = qn[lo : lo + block] @ cn.T
        if sim == CSLS:
            sims = 2.0 * sims - r_s[None, :]
        idx = np.argmax(sims, axis=1)
        pred[lo : lo + block] = idx
        score[lo : lo + block] = sims[np.arange(idx.size), idx]
    if sim == CSLS:
        score -= r_t
    return pred, score


class PairOutcome(NamedTuple):
    query_ref: Ref
    gold_ref: Ref
    predicted_ref: Ref
    correct: bool
    score: float
    query_word: str
    gold_word: str


@dataclass(frozen=True)
class RetrievalReport:
    """Per-pair outcomes for both directions plus aggregate accuracies."""

    mode: str
    sim: str
    k: int
    src2tgt: tuple[PairOutcome, ...]
    tgt2src: tuple[PairOutcome, ...]

    @property
    def accuracy_src2tgt(self) -> float:
        return sum(o.correct for o in self.src2tgt) / len(self.src2tgt)

    @property
    def accuracy_tgt2src(self) -> float:
        return sum(o.correct for o in self.tgt2src) / len(self.tgt2src)

    @property
    def bidirectional(self) -> float:
        return (self.accuracy_src2tgt + self.accuracy_tgt2src) / 2.0

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "sim": self.sim,
            "k": self.k,
            "pairs": len(self.src2tgt),
            "accuracy_src2tgt": self.accuracy_src2tgt,
            "accuracy_tgt2src": self.accuracy_tgt2src,
            "bidirectional": self.bidirectional,
        }

    def write_json(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.summary(), f, indent=2, sort_keys=True)
            f.write("\n")

    def write_pairs_csv(self, path: str | os.PathLike, direction: str = "src2tgt") -> None:
        rows = self.src2tgt if direction == "src2tgt" else self.tgt2src
        with open(path, "w", encoding="utf-8") as f:
            f.write("query_sent,query_tok,gold_sent,gold_tok,pred_sent,pred_tok,correct,score\n")
            for o in rows:
                f.write(
                    f"{o.query_ref[0]},{o.query_ref[1]},{o.gold_ref[0]},{o.gold_ref[1]},"
                    f"{o.predicted_ref[0]},{o.predicted_ref[1]},{int(o.correct)},{o.score!r}\n"
                )


CONTEXTUAL = "contextual"
NON_CONTEXTUAL = "non-contextual"


def _pair_refs(corpus: ParallelCorpus) -> list[tuple[Ref, Ref]]:
    refs = []
    for idx, entry in enumerate(corpus):
        for i, j in entry.pairs:
            refs.append(((idx, i), (idx, j)))
    return refs


def _direction_outcomes(corpus, query_pool, cand_pool, query_refs, gold_refs, side, sim, k, block):
    pred_idx, scores = retrieve(query_pool, cand_pool, sim, k, block)
    outcomes = []
    for row, (q_ref, g_ref) in enumerate(zip(query_refs, gold_refs)):
        p_ref = cand_pool.refs[pred_idx[row]]
        entry = corpus.entries[q_ref[0]]
        q_word = (entry.src if side == "src" else entry.tgt).tokens[q_ref[1]]
        g_entry = corpus.entries[g_ref[0]]
        g_word = (g_entry.tgt if side == "src" else g_entry.src).tokens[g_ref[1]]
        outcomes.append(
            PairOutcome(q_ref, g_ref, p_ref, p_ref == g_ref, float(scores[row]), q_word, g_word)
        )
    return tuple(outcomes)


def evaluate(
    src_set: ContextualEmbeddingSet,
    tgt_set: ContextualEmbeddingSet,
    eval_corpus: ParallelCorpus,
    sim: str = CSLS,
    k: int = 10,
    mode: str = CONTEXTUAL,
    block: int = DEFAULT_BLOCK,
) -> RetrievalReport:
    """Bidirectional retrieval over the evaluation corpus.

    Contextual mode: queries are the word-pair positions of one side
    and candidates are ALL token positions of the other side, so every
    occurrence is a distractor.  Non-contextual mode first keeps only
    the first pair per word type and restricts both pools to the kept
    positions, removing the need for context disambiguation.

    The corpus is expected to be pre-filtered (pairs seen in training
    and trivial exact matches removed) where that matters.
    """
    if mode not in (CONTEXTUAL, NON_CONTEXTUAL):
        raise DataError(f"unknown mode {mode!r}")
    corpus = dedupe_first_occurrence(eval_corpus) if mode == NON_CONTEXTUAL else eval_corpus
    pair_refs = _pair_refs(corpus)
    if not pair_refs:
        raise DataError("no evaluable word pairs")
    src_refs = [p[0] for p in pair_refs]
    tgt_refs = [p[1] for p in pair_refs]

    src_queries = build_pool_at(src_set, src_refs)
    tgt_queries = build_pool_at(tgt_set, tgt_refs)
    if mode == NON_CONTEXTUAL:
        tgt_cands, src_cands = tgt_queries, src_queries
    else:
        tgt_cands = build_pool(tgt_set)
        src_cands = build_pool(src_set)

    fwd = _direction_outcomes(
        corpus, src_queries, tgt_cands, src_refs, tgt_refs, "src", sim, k, block
    )
    rev = _direction_outcomes(
        corpus, tgt_queries, src_cands, tgt_refs, src_refs, "tgt", sim, k, block
    )
    return RetrievalReport(mode, sim, k, fwd, rev)


class NeighborRow(NamedTuple):
    sentence_index: int
    token_index: int
    score: float
    word: str
    sentence_text: str


def query_neighbors(
    query: Ref,
    src_set: ContextualEmbeddingSet,
    tgt_set: ContextualEmbeddingSet,
    tgt_sentences: Sequence[Sentence],
    sim: str = CSLS,
    k: int = 10,
    top_n: int = 5,
    block: int = DEFAULT_BLOCK,
) -> list[NeighborRow]:
    """Top candidates for one source position, with readable context.

    CSLS neighborhoods use the full source-side pool as the query space,
    matching how evaluation scores are computed.
    """
    s_idx, t_idx = query
    if not (0 <= s_idx < len(src_set)) or not (0 <= t_idx < src_set.sentences[s_idx].shape[0]):
        raise DataError(f"query position {query} out of range")
    src_pool = build_pool(src_set)
    cand_pool = build_pool(tgt_set)
    row = src_pool.refs.index((s_idx, t_idx))
    if sim == CSLS:
        scores = csls_scores(src_pool, cand_pool, k, block)[row]
    elif sim == COSINE:
        scores = (_unit_rows(src_pool.vectors[row : row + 1]) @ _unit_rows(cand_pool.vectors).T)[0]
    else:
        raise DataError(f"unknown similarity {sim!r}")
    order = np.argsort(-scores, kind="stable")[: min(top_n, len(cand_pool))]
    out = []
    for idx in order:
        sent, tok = cand_pool.refs[idx]
        sentence = tgt_sentences[sent]
        out.append(
            NeighborRow(sent, tok, float(scores[idx]), sentence.tokens[tok], " ".join(sentence.tokens))
        )
    return out
