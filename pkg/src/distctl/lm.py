"""Tabular order-k autoregressive models over a finite sequence space.

Termination convention: a model emits body tokens step by step; at every step
before lmax the softmax covers the full vocabulary (EOS included), and at step
lmax EOS is forced with probability 1. Every model is therefore an exactly
normalized distribution over the finite universe.

Contexts are the last min(k-1, t) tokens at step t (begin-of-sequence padding
is implicit in the shorter-context rows), indexed with the same
length-then-lex coding used for sequence enumeration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    EmptyCorpus,
    NotTrainable,
    SchemaMismatch,
    UniverseTooLarge,
)
from .seqspace import (
    ENUMERATION_GUARD,
    SampleBatch,
    Sequence,
    SequenceSpace,
    Vocabulary,
    length_offsets,
    string_space_size,
)

MODEL_FORMAT = "distctl-tabular-ar"
MODEL_VERSION = 1


@dataclass
class SgdConfig:
    learning_rate: float
    steps: int = 10000
    batch_size: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch_size must be >= 1")


class _Coding:
    """Rolling-context arithmetic shared by every batched model operation."""

    def __init__(self, space: SequenceSpace, order: int):
        if order < 1:
            raise ConfigError("order must be >= 1")
        self.body_size = space.body_size
        self.m_eff = min(order - 1, max(space.lmax - 1, 0))
        self.n_contexts = string_space_size(self.body_size, self.m_eff)
        if self.n_contexts > ENUMERATION_GUARD:
            raise UniverseTooLarge(
                f"context table would hold {self.n_contexts} rows "
                f"(> {ENUMERATION_GUARD})"
            )
        self.offsets = length_offsets(self.body_size, self.m_eff)
        self.modulus = self.body_size**self.m_eff if self.m_eff > 0 else 1
        # vocabulary index -> body rank (EOS slot unused)
        rank = np.zeros(space.vocabulary.size, dtype=np.int64)
        for r, v in enumerate(space.vocabulary.body_indices):
            rank[v] = r
        self.rank_of = rank

    def step_offset(self, t: int) -> int:
        return int(self.offsets[min(t, self.m_eff)])

    def roll(self, val: np.ndarray, t: int, ranks: np.ndarray) -> np.ndarray:
        """Context value after emitting `ranks` at step t."""
        new = val * self.body_size + ranks
        if t + 1 > self.m_eff:
            new %= self.modulus
        return new


def _iter_events(model: "TabularARModel", batch: SampleBatch):
    """Per step: (row indices, context codes, emitted tokens) of free emissions.

    Free emissions are the body tokens plus the EOS choice for sequences
    shorter than lmax; the forced EOS at step lmax carries no parameters and
    is skipped.
    """
    coding = model.coding
    lengths = batch.lengths
    eos = model.space.vocabulary.eos_index
    n = len(batch)
    val = np.zeros(n, dtype=np.int64)
    for t in range(model.space.lmax):
        emit_body = lengths > t
        active = lengths >= t
        if not active.any():
            break
        codes = coding.step_offset(t) + val
        toks = np.where(emit_body, batch.tokens[:, t], eos)
        rows = np.nonzero(active)[0]
        yield rows, codes[rows], toks[rows].astype(np.int64)
        safe = np.where(emit_body, batch.tokens[:, t], 0)
        ranks = coding.rank_of[safe]
        val = np.where(emit_body, coding.roll(val, t, ranks), val)


@dataclass
class TabularARModel:
    """Softmax next-token table over all reachable contexts."""

    space: SequenceSpace
    order: int
    logits: np.ndarray
    trainable: bool = False
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.coding = _Coding(self.space, self.order)
        expected = (self.coding.n_contexts, self.space.vocabulary.size)
        if self.logits.shape != expected:
            raise ConfigError(f"logits shape {self.logits.shape} != expected {expected}")
        if np.isnan(self.logits).any():
            raise ConfigError("logits contain NaN")
        if np.isposinf(self.logits).any():
            raise ConfigError("logits contain +inf")
        if self.trainable and np.isneginf(self.logits).any():
            raise ConfigError("-inf logit sentinel is only permitted in frozen models")
        if np.isneginf(self.logits).all(axis=1).any():
            raise ConfigError("a context row has no admissible next token")

    # -- constructors -------------------------------------------------------

    @classmethod
    def uniform_logits(cls, space: SequenceSpace, order: int = 1, trainable: bool = False):
        """Uniform next-token distribution at every context (all-zero logits)."""
        coding = _Coding(space, order)
        logits = np.zeros((coding.n_contexts, space.vocabulary.size))
        return cls(space=space, order=order, logits=logits, trainable=trainable)

    @classmethod
    def from_distribution(
        cls,
        space: SequenceSpace,
        probs: np.ndarray,
        trainable: bool = False,
    ) -> "TabularARModel":
        """Full-context model whose distribution equals `probs` (enumeration order)."""
        probs = np.asarray(probs, dtype=float)
        if probs.shape != (space.universe_size,):
            raise ConfigError("probs must cover the universe in enumeration order")
        if abs(probs.sum() - 1.0) > 1e-9 or (probs < 0).any():
            raise ConfigError("probs must be a normalized distribution")
        b = space.body_size
        lmax = space.lmax
        offsets = length_offsets(b, lmax)
        # mass[r] = total probability of sequences having prefix r, built leaf-up
        mass = probs.copy()
        for k in range(lmax - 1, -1, -1):
            lo, hi = offsets[k], offsets[k] + b**k
            children = mass[offsets[k + 1] : offsets[k + 1] + b ** (k + 1)]
            mass[lo:hi] += children.reshape(b**k, b).sum(axis=1)
        order = max(lmax, 1)
        coding = _Coding(space, order)
        v = space.vocabulary.size
        eos = space.vocabulary.eos_index
        body = np.asarray(space.vocabulary.body_indices, dtype=np.int64)
        with np.errstate(divide="ignore", invalid="ignore"):
            logits = np.zeros((coding.n_contexts, v))
            for k in range(coding.m_eff + 1):
                lo = int(coding.offsets[k])
                count = b**k
                pm = mass[offsets[k] : offsets[k] + count]
                cond = np.zeros((count, v))
                cond[:, eos] = probs[offsets[k] : offsets[k] + count]
                if k < lmax:
                    kids = mass[offsets[k + 1] : offsets[k + 1] + count * b].reshape(count, b)
                    cond[:, body] = kids
                ok = pm > 0
                cond[ok] /= pm[ok, None]
                cond[~ok] = 1.0 / v  # unreachable contexts: keep rows usable
                logits[lo : lo + count] = np.log(cond)
        if trainable and np.isneginf(logits).any():
            raise ConfigError("distribution has zeros; a trainable model needs full support")
        return cls(space=space, order=order, logits=logits, trainable=trainable)

    @classmethod
    def uniform_over_universe(cls, space: SequenceSpace, trainable: bool = False):
        """The uniform distribution over the whole universe (not uniform next-token)."""
        u = np.full(space.universe_size, 1.0 / space.universe_size)
        return cls.from_distribution(space, u, trainable=trainable)

    # -- core ---------------------------------------------------------------

    def _tables(self):
        if "logprob" not in self._cache:
            logits = self.logits
            m = np.max(logits, axis=1, keepdims=True)
            lse = m + np.log(np.sum(np.exp(logits - m), axis=1, keepdims=True))
            logprob = logits - lse
            self._cache["logprob"] = logprob
            self._cache["prob"] = np.exp(logprob)
        return self._cache["logprob"], self._cache["prob"]

    def invalidate(self):
        self._cache.clear()

    def log_prob_batch(self, batch: SampleBatch) -> np.ndarray:
        logprob, _ = self._tables()
        out = np.zeros(len(batch))
        for rows, codes, toks in _iter_events(self, batch):
            out[rows] += logprob[codes, toks]
        return out

    def log_prob(self, x: Sequence) -> float:
        return float(self.log_prob_batch(SampleBatch.from_sequences(self.space, [x]))[0])

    def sample_batch(self, n: int, rng: np.random.Generator) -> SampleBatch:
        """Ancestral sampling, vectorized over the batch via the Gumbel-max trick."""
        if n < 1:
            raise ConfigError("sample count must be >= 1")
        logprob, _ = self._tables()
        coding = self.coding
        lmax = self.space.lmax
        eos = self.space.vocabulary.eos_index
        tokens = np.full((n, lmax), -1, dtype=np.int32)
        lengths = np.full(n, lmax, dtype=np.int64)
        val = np.zeros(n, dtype=np.int64)
        alive = np.ones(n, dtype=bool)
        for t in range(lmax):
            u = rng.random((n, self.space.vocabulary.size))
            if not alive.any():
                continue  # keep rng consumption independent of outcomes
            codes = coding.step_offset(t) + val
            with np.errstate(divide="ignore"):
                gumbel = -np.log(-np.log(u))
            pick = np.argmax(logprob[codes] + gumbel, axis=1)
            ended = alive & (pick == eos)
            lengths[ended] = t
            grow = alive & ~ended
            tokens[grow, t] = pick[grow].astype(np.int32)
            ranks = coding.rank_of[np.where(grow, pick, 0)]
            val = np.where(grow, coding.roll(val, t, ranks), val)
            alive = grow
        return SampleBatch(tokens=tokens, lengths=lengths)

    def sample(self, n: int, seed: int) -> list[Sequence]:
        rng = np.random.default_rng(seed)
        return self.sample_batch(n, rng).sequences()

    def grad_weighted_sum(self, batch: SampleBatch, weights: np.ndarray) -> np.ndarray:
        """Sum over the batch of weight_i * grad log_prob(x_i), as a logits-shaped table."""
        if not self.trainable:
            raise NotTrainable("model is frozen")
        _, prob = self._tables()
        weights = np.asarray(weights, dtype=float)
        grad = np.zeros_like(self.logits)
        for rows, codes, toks in _iter_events(self, batch):
            w = weights[rows]
            np.add.at(grad, (codes, toks), w)
            np.add.at(grad, codes, -w[:, None] * prob[codes])
        return grad

    def grad_log_prob(self, x: Sequence) -> np.ndarray:
        """Score-function gradient (one-hot minus softmax at each visited context)."""
        batch = SampleBatch.from_sequences(self.space, [x])
        return self.grad_weighted_sum(batch, np.ones(1))

    def apply_update(self, grad: np.ndarray, learning_rate: float) -> "TabularARModel":
        if not self.trainable:
            raise NotTrainable("model is frozen")
        if grad.shape != self.logits.shape:
            raise ConfigError("gradient shape does not match logits")
        self.logits += learning_rate * grad
        self.invalidate()
        return self

    def exact_distribution(self) -> np.ndarray:
        """Probability of every sequence, aligned with space.enumeration()."""
        return np.exp(self.log_prob_batch(self.space.enumeration()))

    def frozen_copy(self) -> "TabularARModel":
        return TabularARModel(
            space=self.space, order=self.order, logits=self.logits.copy(), trainable=False
        )

    def trainable_copy(self) -> "TabularARModel":
        return TabularARModel(
            space=self.space, order=self.order, logits=self.logits.copy(), trainable=True
        )

    def to_order(self, order: int, trainable: bool = False) -> "TabularARModel":
        """Re-express the same distribution with a longer context window."""
        new_coding = _Coding(self.space, order)
        old = self.coding
        if new_coding.m_eff < old.m_eff:
            raise ConfigError("to_order cannot shorten the context window")
        b = new_coding.body_size
        rows = np.zeros(new_coding.n_contexts, dtype=np.int64)
        for k in range(new_coding.m_eff + 1):
            lo = int(new_coding.offsets[k])
            count = b**k
            ko = min(old.m_eff, k)
            # suffix value of the last ko symbols of each length-k string
            vals = np.arange(count, dtype=np.int64) % (b**ko if ko > 0 else 1)
            rows[lo : lo + count] = old.offsets[ko] + vals
        return TabularARModel(
            space=self.space, order=order, logits=self.logits[rows].copy(), trainable=trainable
        )

    # -- persistence --------------------------------------------------------

    def to_document(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "order": self.order,
            "lmax": self.space.lmax,
            "vocabulary": {
                "tokens": list(self.space.vocabulary.tokens),
                "eos_index": self.space.vocabulary.eos_index,
            },
            "trainable": self.trainable,
            "logits": [[float(v) for v in row] for row in self.logits],
        }

    @classmethod
    def from_document(cls, doc: dict) -> "TabularARModel":
        if not isinstance(doc, dict):
            raise SchemaMismatch("model document must be a mapping")
        expected_keys = {"format", "version", "order", "lmax", "vocabulary", "trainable", "logits"}
        if set(doc) != expected_keys:
            missing = expected_keys - set(doc)
            extra = set(doc) - expected_keys
            raise SchemaMismatch(f"model document keys mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        if doc["format"] != MODEL_FORMAT:
            raise SchemaMismatch(f"unexpected document format {doc['format']!r}")
        if doc["version"] != MODEL_VERSION:
            raise SchemaMismatch(
                f"unsupported model version {doc['version']!r} (expected {MODEL_VERSION})"
            )
        vocab_doc = doc["vocabulary"]
        if set(vocab_doc) != {"tokens", "eos_index"}:
            raise SchemaMismatch("vocabulary block keys mismatch")
        vocab = Vocabulary(tuple(vocab_doc["tokens"]), vocab_doc["eos_index"])
        space = SequenceSpace(vocabulary=vocab, lmax=doc["lmax"])
        logits = np.asarray(doc["logits"], dtype=float)
        return cls(space=space, order=doc["order"], logits=logits, trainable=doc["trainable"])


def mle_fit(
    space: SequenceSpace,
    corpus: list[Sequence],
    order: int,
    smoothing: float = 0.0,
) -> TabularARModel:
    """Add-lambda-smoothed maximum-likelihood k-gram fit.

    Only free emissions are counted: the forced EOS at full length is not an
    observation. Contexts never visited by the corpus get a uniform row.
    """
    if not corpus:
        raise EmptyCorpus("mle_fit needs a non-empty corpus")
    if smoothing < 0:
        raise ConfigError("smoothing must be >= 0")
    coding = _Coding(space, order)
    counts = np.zeros((coding.n_contexts, space.vocabulary.size))
    probe = TabularARModel.uniform_logits(space, order)
    batch = SampleBatch.from_sequences(space, corpus)
    for rows, codes, toks in _iter_events(probe, batch):
        np.add.at(counts, (codes, toks), 1.0)
    counts += smoothing
    with np.errstate(divide="ignore"):
        logits = np.log(counts)
    unvisited = ~np.isfinite(logits).any(axis=1)
    logits[unvisited] = 0.0
    return TabularARModel(space=space, order=order, logits=logits, trainable=False)
