"""Tokenized parallel corpora with word-pair annotations.

Data model: a corpus is a sequence of (source sentence, target sentence,
word pairs) entries for one language pair.  Word pairs are position
tuples (i, j) linking tokens that translate each other.  All values are
immutable after construction and safe to share across workers.

File formats (all UTF-8):
  * parallel text: one sentence per line, whitespace-separated tokens
  * word pairs:    Pharaoh format, zero-based "srcIdx-tgtIdx" tokens
                   separated by spaces, one line per sentence pair
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

from .errors import DataError


@dataclass(frozen=True)
class Sentence:
    """A tokenized sentence in one language."""

    tokens: tuple[str, ...]
    language: str

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.tokens:
            raise DataError("empty sentence")
        for tok in self.tokens:
            if not tok or any(c.isspace() for c in tok):
                raise DataError(f"token contains whitespace or is empty: {tok!r}")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class WordPairSet:
    """One-to-one set of (src_pos, tgt_pos) links within a sentence pair."""

    pairs: frozenset[tuple[int, int]]

    def __post_init__(self):
        object.__setattr__(self, "pairs", frozenset(self.pairs))
        srcs = [i for i, _ in self.pairs]
        tgts = [j for _, j in self.pairs]
        if len(set(srcs)) != len(srcs) or len(set(tgts)) != len(tgts):
            raise DataError("word pairs are not one-to-one")

    def sorted(self) -> list[tuple[int, int]]:
        return sorted(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.sorted())


EMPTY_PAIRS = WordPairSet(frozenset())


class Entry(NamedTuple):
    src: Sentence
    tgt: Sentence
    pairs: WordPairSet


@dataclass(frozen=True)
class ParallelCorpus:
    """Aligned sentence pairs sharing one language pair.

    Corpora loaded from files always have at least one entry; empty
    corpora may arise internally (e.g. an empty training split).
    """

    entries: tuple[Entry, ...]
    src_language: str
    tgt_language: str

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        for k, entry in enumerate(self.entries):
            if entry.src.language != self.src_language or entry.tgt.language != self.tgt_language:
                raise DataError(f"entry {k} does not match corpus language pair")
            for i, j in entry.pairs:
                if not (0 <= i < len(entry.src)):
                    raise DataError(f"entry {k}: src index {i} out of range")
                if not (0 <= j < len(entry.tgt)):
                    raise DataError(f"entry {k}: tgt index {j} out of range")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def replace_entries(self, entries: Iterable[Entry]) -> "ParallelCorpus":
        return ParallelCorpus(tuple(entries), self.src_language, self.tgt_language)


@dataclass(frozen=True)
class CorpusSplits:
    train: ParallelCorpus
    dev: ParallelCorpus
    test: ParallelCorpus


@dataclass(frozen=True)
class SubwordMap:
    """For one sentence, word index -> index of the word's final subword."""

    last_subword: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "last_subword", tuple(self.last_subword))
        for a, b in zip(self.last_subword, self.last_subword[1:]):
            if b <= a:
                raise DataError("subword map is not strictly increasing")

    def __getitem__(self, word_index: int) -> int:
        return self.last_subword[word_index]

    def __len__(self) -> int:
        return len(self.last_subword)


def parse_pharaoh_line(line: str) -> frozenset[tuple[int, int]]:
    """Parse one Pharaoh line ("0-0 1-2 ...") into position tuples."""
    pairs = set()
    for tok in line.split():
        left, sep, right = tok.partition("-")
        if not sep or not left.isdigit() or not right.isdigit():
            raise DataError(f"malformed Pharaoh token: {tok!r}")
        pairs.add((int(left), int(right)))
    return frozenset(pairs)


def format_pharaoh(pairs: WordPairSet) -> str:
    return " ".join(f"{i}-{j}" for i, j in pairs.sorted())


def _read_lines(path: str | os.PathLike) -> list[str]:
    with open(path, encoding="utf-8") as f:
        return f.read().splitlines()


def load_parallel_corpus(
    src_path: str | os.PathLike,
    tgt_path: str | os.PathLike,
    pairs_path: str | os.PathLike,
    src_language: str = "src",
    tgt_language: str = "tgt",
) -> ParallelCorpus:
    """Load a line-aligned corpus from text + Pharaoh files.

    Line k of each file describes entry k.  Rejects mismatched line
    counts, empty sentences, and pair indices out of range.
    """
    src_lines = _read_lines(src_path)
    tgt_lines = _read_lines(tgt_path)
    pair_lines = _read_lines(pairs_path)
    if not (len(src_lines) == len(tgt_lines) == len(pair_lines)):
        raise DataError(
            "line-count mismatch: %d src, %d tgt, %d pairs"
            % (len(src_lines), len(tgt_lines), len(pair_lines))
        )
    if not src_lines:
        raise DataError("corpus files are empty")
    entries = []
    for k, (s_line, t_line, p_line) in enumerate(zip(src_lines, tgt_lines, pair_lines)):
        try:
            src = Sentence(tuple(s_line.split()), src_language)
            tgt = Sentence(tuple(t_line.split()), tgt_language)
            pairs = WordPairSet(parse_pharaoh_line(p_line))
        except DataError as e:
            raise DataError(f"line {k}: {e}") from None
        entries.append(Entry(src, tgt, pairs))
    return ParallelCorpus(tuple(entries), src_language, tgt_language)


def write_parallel_corpus(
    corpus: ParallelCorpus,
    src_path: str | os.PathLike,
    tgt_path: str | os.PathLike,
    pairs_path: str | os.PathLike,
) -> None:
    """Write the three corpus files in canonical form (pairs sorted)."""
    with open(src_path, "w", encoding="utf-8") as f:
        f.writelines(" ".join(e.src.tokens) + "\n" for e in corpus)
    with open(tgt_path, "w", encoding="utf-8") as f:
        f.writelines(" ".join(e.tgt.tokens) + "\n" for e in corpus)
    with open(pairs_path, "w", encoding="utf-8") as f:
        f.writelines(format_pharaoh(e.pairs) + "\n" for e in corpus)


def split_corpus(
    corpus: ParallelCorpus, test_n: int = 1024, dev_n: int = 1024, train_n: int = 250_000
) -> CorpusSplits:
    """Carve test/dev/train blocks off the end of the corpus.

    The last ``test_n`` entries (most recent, in file order) form the
    test set, the block before them the dev set, and up to ``train_n``
    entries before that the training set.  Blocks preserve file order
    and are pairwise disjoint.
    """
    n = len(corpus)
    if n < test_n + dev_n:
        raise DataError(f"corpus has {n} entries, need at least {test_n + dev_n}")
    test_lo = n - test_n
    dev_lo = test_lo - dev_n
    train_lo = max(0, dev_lo - train_n)
    return CorpusSplits(
        train=corpus.replace_entries(corpus.entries[train_lo:dev_lo]),
        dev=corpus.replace_entries(corpus.entries[dev_lo:test_lo]),
        test=corpus.replace_entries(corpus.entries[test_lo:]),
    )


def train_type_pairs(train: ParallelCorpus) -> frozenset[tuple[str, str]]:
    """(src word, tgt word) string pairs linked anywhere in ``train``."""
    seen = set()
    for entry in train:
        for i, j in entry.pairs:
            seen.add((entry.src.tokens[i], entry.tgt.tokens[j]))
    return frozenset(seen)


def filter_eval_pairs(eval_corpus: ParallelCorpus, train: ParallelCorpus) -> ParallelCorpus:
    """Drop evaluation word pairs seen in training or trivially identical.

    A pair is removed if its (source word, target word) strings occur as
    a word pair in the training corpus, or if the two words are equal
    after lowercasing (punctuation, numbers, shared names).  Sentences
    whose pair sets become empty stay in the corpus: their tokens still
    serve as retrieval distractors.
    """
    if (eval_corpus.src_language, eval_corpus.tgt_language) != (
        train.src_language,
        train.tgt_language,
    ):
        raise DataError("evaluation and training corpora have different language pairs")
    seen = train_type_pairs(train)
    entries = []
    for entry in eval_corpus:
        kept = frozenset(
            (i, j)
            for i, j in entry.pairs
            if (entry.src.tokens[i], entry.tgt.tokens[j]) not in seen
            and entry.src.tokens[i].lower() != entry.tgt.tokens[j].lower()
        )
        entries.append(Entry(entry.src, entry.tgt, WordPairSet(kept)))
    return eval_corpus.replace_entries(entries)


def dedupe_first_occurrence(corpus: ParallelCorpus) -> ParallelCorpus:
    """Keep only the first pair per word type, scanning in corpus order.

    A pair survives only if neither its source type nor its target type
    has appeared in an earlier kept pair.  Sentence text is unchanged,
    so retrieval over the result needs no context disambiguation.
    """
    seen_src: set[str] = set()
    seen_tgt: set[str] = set()
    entries = []
    for entry in corpus:
        kept = set()
        for i, j in entry.pairs:
            s_type = entry.src.tokens[i]
            t_type = entry.tgt.tokens[j]
            if s_type in seen_src or t_type in seen_tgt:
                continue
            seen_src.add(s_type)
            seen_tgt.add(t_type)
            kept.add((i, j))
        entries.append(Entry(entry.src, entry.tgt, WordPairSet(frozenset(kept))))
    return corpus.replace_entries(entries)


CONTINUATION = "##"


def map_subwords(word_tokens: Sequence[str], subword_tokens: Sequence[str]) -> SubwordMap:
    """Map each word to the index of its final subword.

    Subwords use the "##" continuation-marker convention; stripping the
    markers and concatenating must reproduce the word sequence exactly.
    """
    last = []
    pos = 0
    n = len(subword_tokens)
    for word in word_tokens:
        if pos >= n:
            raise DataError(f"ran out of subwords at word {word!r}")
        piece = subword_tokens[pos]
        if piece.startswith(CONTINUATION):
            raise DataError(f"word {word!r} starts with continuation subword {piece!r}")
        acc = piece
        while acc != word:
            pos += 1
            if pos >= n or not subword_tokens[pos].startswith(CONTINUATION):
                raise DataError(f"subwords do not compose to word {word!r} (got {acc!r})")
            acc += subword_tokens[pos][len(CONTINUATION):]
            if len(acc) > len(word):
                raise DataError(f"subwords overrun word {word!r} (got {acc!r})")
        last.append(pos)
        pos += 1
    if pos != n:
        raise DataError(f"{n - pos} trailing subwords left after the last word")
    return SubwordMap(tuple(last))
