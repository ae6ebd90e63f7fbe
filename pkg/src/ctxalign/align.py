"""Alignment procedures: closed-form orthogonal rotation and fine-tuning.

Two routes to move source-language embeddings toward the target side:

  * procrustes_fit: the optimal orthogonal map between paired vectors,
    solved in closed form through an SVD.
  * finetune_align: gradient training of a Mapper (linear or residual
    MLP) applied on top of frozen base embeddings, minimizing the
    squared distance between word pairs (L) plus an anchor penalty (R)
    keeping target-side outputs near their frozen base values, with
    equal-sized per-language batches every step.

At desk scale the trainable object is a single Mapper shared by all
languages: aligned(i, s) = mapper(base(i, s)), with the frozen base
playing the role of the pre-alignment reference.  Gradients are
hand-written backprop over the two fixed architectures, verified
against central differences.

Serialization (little-endian): magic "CMAP" (mappers) or "CROT"
(rotations), version u32, kind u8, dim u32, hidden_dim u32, parameter
count u64, then float64 parameters.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .corpus import ParallelCorpus
from .embeddings import ContextualEmbeddingSet
from .errors import DataError, NumericError
from .numeric import AdamState, adam_step, svd, warmup_lr
from .seeding import substream

LINEAR = "linear"
RESIDUAL_MLP = "residual-mlp"
_KIND_CODES = {LINEAR: 0, RESIDUAL_MLP: 1}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


@dataclass(frozen=True)
class RotationMap:
    """Orthogonal d x d matrix from a Procrustes fit."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise DataError(f"rotation must be square, got {w.shape}")
        gram_err = np.linalg.norm(w.T @ w - np.eye(w.shape[0]))
        if not np.isfinite(gram_err) or gram_err >= 1e-8:
            raise NumericError(f"matrix is not orthogonal (||W^T W - I|| = {gram_err:.3g})")
        object.__setattr__(self, "w", w)

    @property
    def dim(self) -> int:
        return self.w.shape[0]


def procrustes_fit(x: np.ndarray, y: np.ndarray) -> RotationMap:
    """Orthogonal W minimizing sum ||W x_i - y_i||^2 over paired rows.

    W = V U^T where U S V^T = svd(X^T Y).  Reflections are permitted
    (det(W) may be -1).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape != y.shape:
        raise DataError(f"paired matrices must share shape, got {x.shape} vs {y.shape}")
    if x.shape[0] < 1:
        raise DataError("need at least one pair")
    u, _, v = svd(x.T @ y)
    return RotationMap(v @ u.T)


def rotation_apply(rot: RotationMap, emb: ContextualEmbeddingSet) -> ContextualEmbeddingSet:
    """Replace every vector v by W v (an isometry: norms preserved)."""
    if rot.dim != emb.dim:
        raise DataError(f"rotation dim {rot.dim} vs embedding dim {emb.dim}")
    return ContextualEmbeddingSet(emb.dim, tuple(a @ rot.w.T for a in emb.sentences))


def word_pair_matrices(
    corpus: ParallelCorpus,
    src_set: ContextualEmbeddingSet,
    tgt_set: ContextualEmbeddingSet,
) -> tuple[np.ndarray, np.ndarray]:
    """Stack (source vector, target vector) rows for every word pair."""
    _check_cover(corpus, src_set, tgt_set)
    xs, ys = [], []
    for k, entry in enumerate(corpus):
        for i, j in entry.pairs:
            xs.append(src_set.sentences[k][i])
            ys.append(tgt_set.sentences[k][j])
    if not xs:
        raise DataError("corpus has no word pairs")
    return np.vstack(xs), np.vstack(ys)


def sentence_rotation_fit(
    src_set: ContextualEmbeddingSet,
    tgt_set: ContextualEmbeddingSet,
    corpus: ParallelCorpus,
) -> RotationMap:
    """Procrustes on per-sentence mean vectors instead of word pairs."""
    _check_cover(corpus, src_set, tgt_set)
    x = np.vstack([a.mean(axis=0) for a in src_set.sentences])
    y = np.vstack([a.mean(axis=0) for a in tgt_set.sentences])
    return procrustes_fit(x, y)


def _check_cover(corpus, src_set, tgt_set):
    if len(src_set) != len(corpus) or len(tgt_set) != len(corpus):
        raise DataError("embedding sets do not cover the corpus")
    if src_set.dim != tgt_set.dim:
        raise DataError("source and target dims differ")
    for k, entry in enumerate(corpus):
        if src_set.sentences[k].shape[0] != len(entry.src):
            raise DataError(f"entry {k}: src token/vector count mismatch")
        if tgt_set.sentences[k].shape[0] != len(entry.tgt):
            raise DataError(f"entry {k}: tgt token/vector count mismatch")


@dataclass(frozen=True)
class Mapper:
    """Trainable transform over base embeddings; exact identity at init.

    linear:       v -> M v + b            (M = I, b = 0 at init)
    residual-mlp: v -> v + W2 tanh(W1 v + b1) + b2
                  (W2 = 0, b2 = 0 at init; W1 seeded Gaussian)

    Parameters live in one flat float64 vector ``theta``; the slices
    below are views into it.
    """

    kind: str
    dim: int
    hidden_dim: int
    theta: np.ndarray

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise DataError(f"unknown mapper kind {self.kind!r}")
        theta = np.asarray(self.theta, dtype=np.float64)
        if theta.shape != (self.parameter_count(self.kind, self.dim, self.hidden_dim),):
            raise DataError(f"theta has wrong length {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise NumericError("non-finite mapper parameters")
        object.__setattr__(self, "theta", theta)

    @staticmethod
    def parameter_count(kind: str, dim: int, hidden_dim: int) -> int:
        if kind == LINEAR:
            return dim * dim + dim
        return hidden_dim * dim + hidden_dim + dim * hidden_dim + dim

    @classmethod
    def create(cls, kind: str, dim: int, hidden_dim: int | None = None, seed: int = 0) -> "Mapper":
        if kind == LINEAR:
            theta = np.concatenate([np.eye(dim).ravel(), np.zeros(dim)])
            return cls(LINEAR, dim, 0, theta)
        if kind == RESIDUAL_MLP:
            h = dim if hidden_dim is None else hidden_dim
            rng = substream(seed, "mapper.init")
            w1 = rng.standard_normal((h, dim)) / math.sqrt(dim)
            theta = np.concatenate([w1.ravel(), np.zeros(h), np.zeros(dim * h), np.zeros(dim)])
            return cls(RESIDUAL_MLP, dim, h, theta)
        raise DataError(f"unknown mapper kind {kind!r}")

    def with_theta(self, theta: np.ndarray) -> "Mapper":
        return Mapper(self.kind, self.dim, self.hidden_dim, theta)

    def _views(self, theta: np.ndarray):
        d, h = self.dim, self.hidden_dim
        if self.kind == LINEAR:
            return theta[: d * d].reshape(d, d), theta[d * d :]
        w1_end = h * d
        b1_end = w1_end + h
        w2_end = b1_end + d * h
        return (
            theta[:w1_end].reshape(h, d),
            theta[w1_end:b1_end],
            theta[b1_end:w2_end].reshape(d, h),
            theta[w2_end:],
        )

    def forward(self, v: np.ndarray) -> np.ndarray:
        """Apply the transform to one vector or a batch of row vectors."""
        v = np.asarray(v, dtype=np.float64)
        single = v.ndim == 1
        batch = v[None, :] if single else v
        if batch.shape[1] != self.dim:
            raise DataError(f"expected dim {self.dim}, got {batch.shape[1]}")
        out, _ = self._forward_cache(batch)
        return out[0] if single else out

    def _forward_cache(self, batch: np.ndarray):
        if self.kind == LINEAR:
            m, b = self._views(self.theta)
            return batch @ m.T + b, (batch,)
        w1, b1, w2, b2 = self._views(self.theta)
        act = np.tanh(batch @ w1.T + b1)
        return batch + act @ w2.T + b2, (batch, act)

    def _backward(self, cache, upstream: np.ndarray, grad: np.ndarray) -> None:
        """Accumulate d(loss)/d(theta) into ``grad`` given d(loss)/d(output)."""
        if self.kind == LINEAR:
            (batch,) = cache
            gm, gb = self._views(grad)
            gm += upstream.T @ batch
            gb += upstream.sum(axis=0)
            return
        batch, act = cache
        gw1, gb1, gw2, gb2 = self._views(grad)
        gw2 += upstream.T @ act
        gb2 += upstream.sum(axis=0)
        g_act = (upstream @ self._views(self.theta)[2]) * (1.0 - act * act)
        gw1 += g_act.T @ batch
        gb1 += g_act.sum(axis=0)


def mapper_forward(mapper: Mapper, v: np.ndarray) -> np.ndarray:
    return mapper.forward(v)


class BatchItem(NamedTuple):
    """One sentence pair inside a training batch."""

    src_vectors: np.ndarray
    tgt_vectors: np.ndarray
    pairs: Sequence[tuple[int, int]]
    tgt_base_vectors: np.ndarray


def alignment_loss(
    mapper: Mapper, batch: Sequence[BatchItem], lam: float
) -> tuple[float, float, float, np.ndarray]:
    """Loss L + lam * R over one batch and its analytic gradient.

    L is the mean squared distance between mapped word-pair vectors;
    R is the mean squared drift of mapped target tokens (all positions,
    aligned or not) from their frozen base vectors.  Means make the
    gradients batch-size invariant.
    """
    if not batch:
        raise DataError("empty batch")
    return _loss_and_grad(mapper, batch, lam, require_pairs=True)


def _loss_and_grad(mapper, batch, lam, require_pairs):
    d = mapper.dim
    xs, ys, ts, t0s = [], [], [], []
    for item in batch:
        src = np.asarray(item[0], dtype=np.float64)
        tgt = np.asarray(item[1], dtype=np.float64)
        base = np.asarray(item[3], dtype=np.float64)
        if src.shape[1] != d or tgt.shape[1] != d or base.shape != tgt.shape:
            raise DataError("batch item dimensions do not match the mapper")
        for i, j in sorted(item[2]):
            if not (0 <= i < src.shape[0] and 0 <= j < tgt.shape[0]):
                raise DataError(f"pair ({i}, {j}) out of range")
            xs.append(src[i])
            ys.append(tgt[j])
        ts.append(tgt)
        t0s.append(base)
    n_pairs = len(xs)
    if n_pairs == 0 and require_pairs:
        raise DataError("batch contains no word pairs; L is undefined")

    grad = np.zeros_like(mapper.theta)
    loss_l = 0.0
    if n_pairs:
        x = np.vstack(xs)
        y = np.vstack(ys)
        mx, cache_x = mapper._forward_cache(x)
        my, cache_y = mapper._forward_cache(y)
        diff = mx - my
        loss_l = float(np.sum(diff * diff)) / n_pairs
        g = (2.0 / n_pairs) * diff
        mapper._backward(cache_x, g, grad)
        mapper._backward(cache_y, -g, grad)

    t = np.vstack(ts)
    t0 = np.vstack(t0s)
    mt, cache_t = mapper._forward_cache(t)
    drift = mt - t0
    loss_r = float(np.sum(drift * drift)) / t.shape[0]
    mapper._backward(cache_t, (2.0 * lam / t.shape[0]) * drift, grad)

    return loss_l, loss_r, loss_l + lam * loss_r, grad


@dataclass(frozen=True)
class AlignConfig:
    """Fine-tuning hyperparameters; defaults follow the training recipe
    used for the contextual alignment experiments (lr 5e-5, betas
    0.9/0.98, eps 1e-9, 10% linear warmup, 1 epoch, 2 sentence pairs
    per language per batch, lam 1)."""

    lam: float = 1.0
    base_lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    warmup_frac: float = 0.10
    epochs: int = 1
    pairs_per_language: int = 2
    seed: int = 0
    schedule: str = "constant"

    def __post_init__(self):
        if self.lam < 0:
            raise DataError("lam must be >= 0")
        if not (0.0 <= self.warmup_frac <= 1.0):
            raise DataError("warmup_frac must be in [0, 1]")
        if self.epochs < 0 or self.pairs_per_language < 1:
            raise DataError("epochs must be >= 0 and batch size >= 1")


class TraceStep(NamedTuple):
    step: int
    lr: float
    loss_l: float
    loss_r: float
    total: float


@dataclass(frozen=True)
class TrainTrace:
    steps: tuple[TraceStep, ...]

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write("step,lr,L,R,total\n")
            for row in self.steps:
                f.write(f"{row.step},{row.lr!r},{row.loss_l!r},{row.loss_r!r},{row.total!r}\n")


class _EntryStream:
    """Endless seeded stream over corpus entries; reshuffles on wrap."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n = n
        self.rng = rng
        self.order = rng.permutation(n)
        self.pos = 0

    def draw(self, count: int) -> list[int]:
        out = []
        for _ in range(count):
            if self.pos >= self.n:
                self.order = self.rng.permutation(self.n)
                self.pos = 0
            out.append(int(self.order[self.pos]))
            self.pos += 1
        return out


def finetune_align(
    mapper: Mapper,
    corpora: Sequence[tuple[ParallelCorpus, ContextualEmbeddingSet, ContextualEmbeddingSet]],
    cfg: AlignConfig,
) -> tuple[Mapper, TrainTrace]:
    """Train the shared mapper on equal-sized per-language batches.

    Every step draws ``cfg.pairs_per_language`` sentence pairs from each
    corpus and takes one Adam step on the summed objective
    sum_k (L_k + lam * R_k).  One epoch is one pass over the largest
    corpus; smaller corpora cycle with reshuffling.  Fully deterministic
    given the config seed.
    """
    if not corpora:
        raise DataError("no corpora to train on")
    anchor = corpora[0][0].tgt_language
    for corp, src_set, tgt_set in corpora:
        if corp.tgt_language != anchor:
            raise DataError("all corpora must share the target (anchor) language")
        if len(corp) == 0:
            raise DataError("empty corpus")
        if src_set.dim != mapper.dim or tgt_set.dim != mapper.dim:
            raise DataError("embedding dim does not match the mapper")
        _check_cover(corp, src_set, tgt_set)

    largest = max(len(corp) for corp, _, _ in corpora)
    steps_per_epoch = math.ceil(largest / cfg.pairs_per_language)
    total_steps = steps_per_epoch * cfg.epochs
    if total_steps == 0:
        return mapper, TrainTrace(())

    streams = [
        _EntryStream(len(corp), substream(cfg.seed, f"align.shuffle.{k}"))
        for k, (corp, _, _) in enumerate(corpora)
    ]
    state = AdamState.fresh(
        mapper.theta.size,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.eps,
        base_lr=cfg.base_lr,
        warmup_steps=int(cfg.warmup_frac * total_steps),
        total_steps=total_steps,
        schedule=cfg.schedule,
    )
    params = mapper.theta.copy()
    trace = []
    for _ in range(total_steps):
        current = mapper.with_theta(params)
        grad = np.zeros_like(params)
        step_l = step_r = 0.0
        for (corp, src_set, tgt_set), stream in zip(corpora, streams):
            batch = []
            for idx in stream.draw(cfg.pairs_per_language):
                batch.append(
                    BatchItem(
                        src_set.sentences[idx],
                        tgt_set.sentences[idx],
                        corp.entries[idx].pairs.sorted(),
                        tgt_set.sentences[idx],
                    )
                )
            # A batch may momentarily contain no word pairs (sparse
            # annotations); it then contributes only the anchor term.
            l_k, r_k, _, g_k = _loss_and_grad(current, batch, cfg.lam, require_pairs=False)
            grad += g_k
            step_l += l_k
            step_r += r_k
        params = adam_step(state, params, grad)
        trace.append(
            TraceStep(state.step, warmup_lr(state), step_l, step_r, step_l + cfg.lam * step_r)
        )
    return mapper.with_theta(params), TrainTrace(tuple(trace))


def _write_envelope(path, magic: bytes, kind_code: int, dim: int, hidden: int, params: np.ndarray):
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<IBIIQ", 1, kind_code, dim, hidden, params.size))
        f.write(params.astype("<f8").tobytes())


def _read_envelope(path, magic: bytes):
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != magic:
        raise DataError(f"bad magic {data[:4]!r}, expected {magic!r}")
    version, kind_code, dim, hidden, count = struct.unpack_from("<IBIIQ", data, 4)
    if version != 1:
        raise DataError(f"unsupported version {version}")
    offset = 4 + struct.calcsize("<IBIIQ")
    if len(data) != offset + count * 8:
        raise DataError("parameter payload length mismatch")
    params = np.frombuffer(data, dtype="<f8", count=count, offset=offset).copy()
    return kind_code, dim, hidden, params


def save_mapper(mapper: Mapper, path: str | os.PathLike) -> None:
    _write_envelope(path, b"CMAP", _KIND_CODES[mapper.kind], mapper.dim, mapper.hidden_dim, mapper.theta)


def load_mapper(path: str | os.PathLike) -> Mapper:
    kind_code, dim, hidden, params = _read_envelope(path, b"CMAP")
    if kind_code not in _CODE_KINDS:
        raise DataError(f"unknown mapper kind code {kind_code}")
    return Mapper(_CODE_KINDS[kind_code], dim, hidden, params)


def save_rotation(rot: RotationMap, path: str | os.PathLike) -> None:
    _write_envelope(path, b"CROT", 0, rot.dim, 0, rot.w.ravel())


def load_rotation(path: str | os.PathLike) -> RotationMap:
    _, dim, _, params = _read_envelope(path, b"CROT")
    if params.size != dim * dim:
        raise DataError("rotation payload size mismatch")
    return RotationMap(params.reshape(dim, dim))
