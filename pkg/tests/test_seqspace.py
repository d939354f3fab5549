import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distctl.errors import ConfigError, EmptyCorpus, UniverseTooLarge
from distctl.seqspace import (
    SampleBatch,
    Sequence,
    SequenceSpace,
    Vocabulary,
    tokenize_corpus,
)

from helpers import small_space


def test_vocabulary_rejects_duplicates_and_bad_eos():
    with pytest.raises(ConfigError):
        Vocabulary(("a", "a", "<eos>"), 2)
    with pytest.raises(ConfigError):
        Vocabulary(("a", "", "<eos>"), 2)
    with pytest.raises(ConfigError):
        Vocabulary(("a", "<eos>"), 5)
    with pytest.raises(ConfigError):
        Vocabulary.from_body_tokens(["a", "<eos>"])


def test_enumerate_seven_sequences(ab_space):
    seqs = [s.tokens for s in ab_space.enumerate()]
    # epsilon, a, b, aa, ab, ba, bb with a=0, b=1
    assert seqs == [(), (0,), (1,), (0, 0), (0, 1), (1, 0), (1, 1)]


def test_enumerate_single_token_vocab():
    space = small_space(1, 1)
    assert [s.tokens for s in space.enumerate()] == [(), (0,)]


def test_enumerate_count_geometric_series():
    space = small_space(3, 4)
    expected = sum(3**k for k in range(5))  # 121
    assert expected == 121
    assert space.universe_size == expected
    assert sum(1 for _ in space.enumerate()) == expected


@settings(max_examples=25, deadline=None)
@given(body=st.integers(1, 4), lmax=st.integers(1, 6))
def test_enumeration_matches_closed_form_and_is_valid(body, lmax):
    space = small_space(body, lmax)
    seqs = list(space.enumerate())
    assert len(seqs) == space.universe_size
    assert len(set(s.tokens for s in seqs)) == len(seqs)
    for s in seqs:
        space.validate(s)


def test_enumeration_count_at_size_caps():
    space = small_space(5, 8)
    expected = sum(5**k for k in range(9))
    assert space.universe_size == expected == 488281
    batch = space.enumeration()
    assert len(batch) == expected
    assert int(np.sum(batch.lengths == 8)) == 5**8


def test_enumeration_deterministic(ab_space):
    first = [s.tokens for s in ab_space.enumerate()]
    second = [s.tokens for s in ab_space.enumerate()]
    assert first == second
    batch = ab_space.enumeration()
    assert [tuple(r) for r in batch.tokens.tolist()] == [
        tuple(r) for r in ab_space.enumeration().tokens.tolist()
    ]


def test_universe_guard():
    space = small_space(10, 8)  # > 1e8 sequences
    with pytest.raises(UniverseTooLarge):
        list(space.enumerate())
    with pytest.raises(UniverseTooLarge):
        space.enumeration()


def test_sequence_rank_matches_enumeration_order():
    space = small_space(3, 3)
    for i, s in enumerate(space.enumerate()):
        assert space.sequence_rank(s) == i


def test_sample_batch_round_trip(ab_space):
    seqs = [Sequence(()), Sequence((0,)), Sequence((1, 0))]
    batch = SampleBatch.from_sequences(ab_space, seqs)
    assert batch.sequences() == seqs
    assert batch.row(2) == seqs[2]
    with pytest.raises(ConfigError):
        SampleBatch.from_sequences(ab_space, [Sequence((0, 1, 0))])  # too long
    with pytest.raises(ConfigError):
        SampleBatch.from_sequences(ab_space, [Sequence((2,))])  # EOS in body


def test_tokenize_basic():
    out = tokenize_corpus("a b\nb", lmax=4)
    assert [s.tokens for s in out.sequences] == [(0, 1), (1,)]
    assert out.vocabulary.tokens == ("a", "b", "<eos>")
    assert out.truncated == 0


def test_tokenize_truncates_long_lines():
    out = tokenize_corpus("x x x x x x", lmax=3)
    assert len(out.sequences) == 1
    assert out.sequences[0].tokens == (0, 0, 0)
    assert out.truncated == 1


def test_tokenize_vocab_size_includes_eos():
    lines = "\n".join("alpha beta gamma delta eps" for _ in range(100))
    out = tokenize_corpus(lines, lmax=8)
    assert out.vocabulary.size == 6


def test_tokenize_empty_corpus():
    with pytest.raises(EmptyCorpus):
        tokenize_corpus("", lmax=3)
    with pytest.raises(EmptyCorpus):
        tokenize_corpus("\n  \n", lmax=3)


def test_tokenize_rejects_reserved_eos():
    with pytest.raises(ConfigError):
        tokenize_corpus("a <eos> b", lmax=3)


def test_lmax_positive():
    vocab = Vocabulary.from_body_tokens(["a"])
    with pytest.raises(ConfigError):
        SequenceSpace(vocabulary=vocab, lmax=0)


def test_enumeration_batch_alignment():
    space = small_space(2, 3)
    batch = space.enumeration()
    listed = list(space.enumerate())
    assert batch.sequences() == listed
    assert np.all(batch.lengths == [len(s) for s in listed])
