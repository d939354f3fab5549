"""Rule-based feature functions and moment-constraint specifications.

Every feature is total over the universe, including the empty sequence, and
is evaluated both per sequence (reference path) and vectorized over batches
(fast path); tests hold the two paths equal over full enumerations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NoPointwiseConstraints
from .seqspace import SampleBatch, Sequence, Vocabulary


def _valid_mask(batch: SampleBatch) -> np.ndarray:
    return np.arange(batch.width)[None, :] < batch.lengths[:, None]


class Feature:
    """Base feature: named, range-declared function of a sequence."""

    id: str
    binary: bool

    def evaluate(self, x: Sequence) -> float:
        raise NotImplementedError

    def evaluate_batch(self, batch: SampleBatch) -> np.ndarray:
        return np.array([self.evaluate(batch.row(i)) for i in range(len(batch))])


class TokenPresence(Feature):
    binary = True

    def __init__(self, vocab: Vocabulary, token: str, feature_id: str | None = None):
        self.index = vocab.index(token)
        self.id = feature_id or f"has_{token}"

    def evaluate(self, x: Sequence) -> float:
        return 1.0 if self.index in x.tokens else 0.0

    def evaluate_batch(self, batch: SampleBatch) -> np.ndarray:
        hit = (batch.tokens == self.index) & _valid_mask(batch)
        return hit.any(axis=1).astype(float)


class WordlistPresence(Feature):
    """1 iff the sequence contains at least one token from the list."""

    binary = True

    def __init__(self, vocab: Vocabulary, tokens: list[str], feature_id: str | None = None):
        if not tokens:
            raise ConfigError("wordlist-presence needs at least one token")
        self.indices = frozenset(vocab.index(t) for t in tokens)
        self.id = feature_id or "has_any_" + "_".join(sorted(tokens))

    def evaluate(self, x: Sequence) -> float:
        return 1.0 if self.indices & set(x.tokens) else 0.0

    def evaluate_batch(self, batch: SampleBatch) -> np.ndarray:
        hit = np.isin(batch.tokens, list(self.indices)) & _valid_mask(batch)
        return hit.any(axis=1).astype(float)


class TokenRatio(Feature):
    """Count(numerator tokens) / count(denominator tokens), a real in [0, 1].

    `empty_default` is returned when the sequence contains no denominator
    token at all (the empty sequence included).
    """

    binary = False

    def __init__(
        self,
        vocab: Vocabulary,
        numerator: list[str],
        denominator: list[str],
        empty_default: float = 0.0,
        feature_id: str | None = None,
    ):
        self.num = frozenset(vocab.index(t) for t in numerator)
        self.den = frozenset(vocab.index(t) for t in denominator)
        if not self.num <= self.den:
            raise ConfigError("token-ratio numerator must be a subset of the denominator")
        if not 0.0 <= empty_default <= 1.0:
            raise ConfigError("token-ratio empty_default must lie in [0, 1]")
        self.empty_default = empty_default
        self.id = feature_id or "ratio_" + "_".join(sorted(numerator))

    def evaluate(self, x: Sequence) -> float:
        den = sum(1 for t in x.tokens if t in self.den)
        if den == 0:
            return self.empty_default
        num = sum(1 for t in x.tokens if t in self.num)
        return num / den

    def evaluate_batch(self, batch: SampleBatch) -> np.ndarray:
        mask = _valid_mask(batch)
        num = (np.isin(batch.tokens, list(self.num)) & mask).sum(axis=1)
        den = (np.isin(batch.tokens, list(self.den)) & mask).sum(axis=1)
        out = np.full(len(batch), self.empty_default, dtype=float)
        nonzero = den > 0
        out[nonzero] = num[nonzero] / den[nonzero]
        return out


class PrefixMatch(Feature):
    """1 iff the sequence starts with the given token string."""

    binary = True

    def __init__(self, vocab: Vocabulary, tokens: list[str], feature_id: str | None = None):
        if not tokens:
            raise ConfigError("prefix-match needs a non-empty pattern")
        self.pattern = tuple(vocab.index(t) for t in tokens)
        self.id = feature_id or "prefix_" + "_".join(tokens)

    def evaluate(self, x: Sequence) -> float:
        return 1.0 if x.tokens[: len(self.pattern)] == self.pattern else 0.0

    def evaluate_batch(self, batch: SampleBatch) -> np.ndarray:
        k = len(self.pattern)
        if k > batch.width:
            return np.zeros(len(batch))
        long_enough = batch.lengths >= k
        match = (batch.tokens[:, :k] == np.asarray(self.pattern)).all(axis=1)
        return (long_enough & match).astype(float)


class PredicateTable(Feature):
    """Explicit sequence-to-value map; the test-oriented escape hatch."""

    def __init__(
        self,
        table: dict[Sequence, float],
        default: float = 0.0,
        binary: bool = True,
        feature_id: str = "table",
    ):
        self.table = dict(table)
        self.default = default
        self.binary = binary
        self.id = feature_id
        if binary:
            values = set(self.table.values()) | {default}
            if not values <= {0.0, 1.0}:
                raise ConfigError("binary predicate-table may only hold 0/1 values")

    def evaluate(self, x: Sequence) -> float:
        return self.table.get(x, self.default)


@dataclass(frozen=True)
class ConstraintSpec:
    """One feature with its target moment; pointwise means every x must satisfy it."""

    feature: Feature
    target: float
    pointwise: bool = False

    def __post_init__(self):
        if self.pointwise:
            if not self.feature.binary:
                raise ConfigError(
                    f"constraint '{self.feature.id}': pointwise constraints need a binary feature"
                )
            if self.target != 1.0:
                raise ConfigError(
                    f"constraint '{self.feature.id}': pointwise target must be 1.0"
                )
        elif self.feature.binary and not 0.0 < self.target < 1.0:
            raise ConfigError(
                f"constraint '{self.feature.id}': distributional target for a binary "
                "feature must lie strictly inside (0, 1); use a pointwise constraint "
                "to express certainty"
            )


class ConstraintSet:
    """Ordered constraints with unique feature ids."""

    def __init__(self, constraints: list[ConstraintSpec]):
        ids = [c.feature.id for c in constraints]
        if len(set(ids)) != len(ids):
            raise ConfigError("constraint feature ids must be unique")
        self.constraints = list(constraints)

    def __len__(self) -> int:
        return len(self.constraints)

    def __iter__(self):
        return iter(self.constraints)

    @property
    def ids(self) -> list[str]:
        return [c.feature.id for c in self.constraints]

    @property
    def targets(self) -> np.ndarray:
        return np.array([c.target for c in self.constraints])

    @property
    def pointwise_members(self) -> list[ConstraintSpec]:
        return [c for c in self.constraints if c.pointwise]

    @property
    def all_pointwise(self) -> bool:
        return len(self.constraints) > 0 and all(c.pointwise for c in self.constraints)

    def evaluate_vector(self, x: Sequence) -> np.ndarray:
        return np.array([c.feature.evaluate(x) for c in self.constraints])

    def feature_matrix(self, batch: SampleBatch) -> np.ndarray:
        """(n_samples, n_constraints) feature values, columns in constraint order."""
        if not self.constraints:
            return np.zeros((len(batch), 0))
        return np.column_stack([c.feature.evaluate_batch(batch) for c in self.constraints])

    def pointwise_predicate(self, x: Sequence) -> float:
        members = self.pointwise_members
        if not members:
            raise NoPointwiseConstraints("constraint set has no pointwise members")
        out = 1.0
        for c in members:
            out *= c.feature.evaluate(x)
        return out

    def pointwise_predicate_batch(self, batch: SampleBatch) -> np.ndarray:
        members = self.pointwise_members
        if not members:
            raise NoPointwiseConstraints("constraint set has no pointwise members")
        out = np.ones(len(batch))
        for c in members:
            out *= c.feature.evaluate_batch(batch)
        return out
