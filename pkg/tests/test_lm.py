import json

import numpy as np
import pytest
import scipy.stats

from distctl.errors import ConfigError, EmptyCorpus, NotTrainable, SchemaMismatch
from distctl.lm import MODEL_VERSION, TabularARModel, mle_fit
from distctl.seqspace import Sequence

from helpers import naive_log_prob, random_model, small_space


def test_mle_next_token_ratio_before_eos(ab_space):
    corpus = [Sequence((0,)), Sequence((0,)), Sequence((1,))]
    model = mle_fit(ab_space, corpus, order=1, smoothing=0.0)
    probs = np.exp(model.logits[0] - np.log(np.sum(np.exp(model.logits[0]))))
    # transitions at the first position: a, a, b plus three EOS events
    assert probs[0] / (probs[0] + probs[1]) == pytest.approx(2.0 / 3.0)


def test_mle_smoothing_gives_full_support(ab_space):
    corpus = [Sequence((0,))]
    model = mle_fit(ab_space, corpus, order=2, smoothing=1.0)
    assert (model.exact_distribution() > 0).all()


def test_mle_concentrates_on_single_sequence(ab_space):
    target = Sequence((0, 1))
    model = mle_fit(ab_space, [target], order=1, smoothing=0.0)
    dist = model.exact_distribution()
    assert dist[ab_space.sequence_rank(target)] == dist.max()
    # with a repeated token the maximum is unique
    repeated = Sequence((0, 0))
    model2 = mle_fit(ab_space, [repeated], order=1, smoothing=0.0)
    dist2 = model2.exact_distribution()
    assert np.argmax(dist2) == ab_space.sequence_rank(repeated)
    assert dist2[ab_space.sequence_rank(repeated)] == pytest.approx(1.0)


def test_mle_empty_corpus(ab_space):
    with pytest.raises(EmptyCorpus):
        mle_fit(ab_space, [], order=1)


def test_log_prob_uniform_binary():
    space = small_space(1, 1)
    model = TabularARModel.uniform_logits(space, order=1)
    assert model.log_prob(Sequence(())) == pytest.approx(np.log(0.5))
    assert model.log_prob(Sequence((0,))) == pytest.approx(np.log(0.5))


def test_forced_eos_at_lmax(ab_space):
    model = TabularARModel.uniform_logits(ab_space, order=1)
    # P([a,a]) = (1/3) * (1/3) * 1: the step at lmax carries no EOS factor
    assert model.log_prob(Sequence((0, 0))) == pytest.approx(np.log(1.0 / 9.0))


@pytest.mark.parametrize("body,lmax,order", [(2, 2, 1), (3, 4, 2), (5, 5, 3), (5, 8, 2)])
def test_normalization_over_universe(body, lmax, order, rng):
    space = small_space(body, lmax)
    model = random_model(space, order, rng, scale=1.5)
    assert model.exact_distribution().sum() == pytest.approx(1.0, abs=1e-9)


def test_log_prob_matches_chain_rule_oracle(rng):
    for _ in range(20):
        space = small_space(int(rng.integers(2, 4)), int(rng.integers(2, 5)))
        model = random_model(space, int(rng.integers(1, 4)), rng)
        for seq in list(space.enumerate())[:: max(1, space.universe_size // 10)]:
            assert model.log_prob(seq) == pytest.approx(naive_log_prob(model, seq), rel=1e-10)


def test_mle_model_matches_chain_rule_oracle(ab_space):
    corpus = [Sequence((0,)), Sequence((0, 1)), Sequence((1,)), Sequence((0,))]
    model = mle_fit(ab_space, corpus, order=2, smoothing=0.5)
    for seq in ab_space.enumerate():
        assert model.log_prob(seq) == pytest.approx(naive_log_prob(model, seq), rel=1e-10)


def test_sampling_frequency():
    space = small_space(1, 1)
    model = TabularARModel.uniform_logits(space, order=1)
    seqs = model.sample(10000, seed=11)
    freq = sum(1 for s in seqs if s.tokens == (0,)) / 10000
    assert abs(freq - 0.5) < 0.02  # 3 sigma of Bin(10000, 1/2) is 0.015


def test_sampling_deterministic(ab_space, rng):
    model = random_model(ab_space, 2, rng)
    assert model.sample(500, seed=3) == model.sample(500, seed=3)


def test_sampling_degenerate_point_mass(ab_space):
    dist = np.zeros(ab_space.universe_size)
    dist[0] = 1.0  # all mass on the empty sequence
    model = TabularARModel.from_distribution(ab_space, dist)
    assert all(s.tokens == () for s in model.sample(200, seed=0))


@pytest.mark.parametrize("body,lmax,order,scale", [(3, 3, 2, 0.8), (2, 4, 1, 1.2), (4, 3, 3, 0.5)])
def test_sampling_chi_square_goodness_of_fit(body, lmax, order, scale, rng):
    space = small_space(body, lmax)
    model = random_model(space, order, rng, scale=scale)
    exact = model.exact_distribution()
    batch = model.sample_batch(100000, np.random.default_rng(123))
    ranks = [space.sequence_rank(s) for s in batch.sequences()]
    counts = np.bincount(ranks, minlength=space.universe_size)
    expected = exact * len(ranks)
    keep = expected >= 5
    observed = counts[keep].astype(float)
    buckets = expected[keep]
    if (~keep).any():
        observed = np.concatenate([observed, [counts[~keep].sum()]])
        buckets = np.concatenate([buckets, [expected[~keep].sum()]])
    stat, pvalue = scipy.stats.chisquare(observed, buckets)
    assert pvalue > 0.001


def test_grad_zero_when_softmax_saturated(ab_space):
    model = TabularARModel.uniform_logits(ab_space, order=1, trainable=True)
    model.logits[0, 0] = 60.0  # next token 'a' is near-deterministic
    model.invalidate()
    grad = model.grad_log_prob(Sequence((0, 0)))
    assert np.abs(grad[0]).max() < 1e-20


def test_grad_uniform_binary_half():
    space = small_space(1, 2)
    model = TabularARModel.uniform_logits(space, order=1, trainable=True)
    grad = model.grad_log_prob(Sequence((0, 0)))
    # two free steps, each contributing (1 - 1/2) on 'a' and -1/2 on EOS
    assert grad[0, 0] == pytest.approx(1.0)
    assert grad[0, 1] == pytest.approx(-1.0)


def test_grad_matches_finite_differences(rng):
    for _ in range(100):
        space = small_space(int(rng.integers(2, 4)), int(rng.integers(2, 4)))
        model = random_model(space, int(rng.integers(1, 4)), rng, trainable=True)
        seqs = list(space.enumerate())
        x = seqs[int(rng.integers(len(seqs)))]
        grad = model.grad_log_prob(x)
        direction = rng.standard_normal(model.logits.shape)
        eps = 1e-6
        plus = TabularARModel(
            space=space, order=model.order, logits=model.logits + eps * direction, trainable=True
        )
        minus = TabularARModel(
            space=space, order=model.order, logits=model.logits - eps * direction, trainable=True
        )
        numeric = (plus.log_prob(x) - minus.log_prob(x)) / (2 * eps)
        analytic = float((grad * direction).sum())
        scale = max(abs(numeric), abs(analytic), 1e-8)
        assert abs(numeric - analytic) / scale < 1e-6


def test_grad_requires_trainable(ab_space):
    model = TabularARModel.uniform_logits(ab_space, order=1)
    with pytest.raises(NotTrainable):
        model.grad_log_prob(Sequence((0,)))
    with pytest.raises(NotTrainable):
        model.apply_update(np.zeros_like(model.logits), 0.1)


def test_apply_update_identity_and_reversibility(ab_space, rng):
    model = random_model(ab_space, 2, rng, trainable=True)
    before = model.logits.copy()
    model.apply_update(np.zeros_like(before), 0.5)
    assert np.array_equal(model.logits, before)
    grad = rng.standard_normal(before.shape)
    model.apply_update(grad, 0.25)
    model.apply_update(-grad, 0.25)
    # add-then-subtract of the identical increment restores up to one rounding ulp
    assert np.allclose(model.logits, before, rtol=0.0, atol=1e-14)


def test_apply_update_monotone_in_target_token(ab_space):
    model = TabularARModel.uniform_logits(ab_space, order=1, trainable=True)
    before = model._tables()[1][0, 0]
    grad = np.zeros_like(model.logits)
    grad[0, 0] = 5.0
    model.apply_update(grad, 1.0)
    after = model._tables()[1][0, 0]
    assert after > before


def test_serialize_round_trip(ab_space, rng):
    model = random_model(ab_space, 2, rng)
    doc = json.loads(json.dumps(model.to_document()))
    restored = TabularARModel.from_document(doc)
    assert np.array_equal(restored.logits, model.logits)
    for seq in ab_space.enumerate():
        assert restored.log_prob(seq) == model.log_prob(seq)


def test_serialize_round_trip_with_neg_inf(ab_space):
    model = mle_fit(ab_space, [Sequence((0,))], order=1, smoothing=0.0)
    assert np.isneginf(model.logits).any()
    doc = json.loads(json.dumps(model.to_document()))
    restored = TabularARModel.from_document(doc)
    assert np.array_equal(restored.logits, model.logits)


def test_deserialize_corrupt_field(ab_space):
    doc = TabularARModel.uniform_logits(ab_space, order=1).to_document()
    doc["logitz"] = doc.pop("logits")
    with pytest.raises(SchemaMismatch):
        TabularARModel.from_document(doc)


def test_deserialize_version_mismatch(ab_space):
    doc = TabularARModel.uniform_logits(ab_space, order=1).to_document()
    doc["version"] = MODEL_VERSION + 1
    with pytest.raises(SchemaMismatch, match="version"):
        TabularARModel.from_document(doc)


def test_trainable_rejects_neg_inf(ab_space):
    model = mle_fit(ab_space, [Sequence((0,))], order=1, smoothing=0.0)
    with pytest.raises(ConfigError):
        TabularARModel(space=ab_space, order=1, logits=model.logits, trainable=True)


def test_from_distribution_reproduces_any_distribution(rng):
    space = small_space(3, 3)
    raw = rng.random(space.universe_size)
    dist = raw / raw.sum()
    model = TabularARModel.from_distribution(space, dist)
    assert np.allclose(model.exact_distribution(), dist, atol=1e-12)


def test_uniform_over_universe(ab_space):
    model = TabularARModel.uniform_over_universe(ab_space)
    assert np.allclose(model.exact_distribution(), np.full(7, 1.0 / 7.0))


def test_to_order_preserves_distribution(rng):
    space = small_space(3, 4)
    model = random_model(space, 2, rng)
    lifted = model.to_order(4)
    assert np.allclose(lifted.exact_distribution(), model.exact_distribution(), atol=1e-14)
    with pytest.raises(ConfigError):
        lifted.to_order(2)


def test_batch_and_scalar_log_prob_agree(rng):
    space = small_space(3, 4)
    model = random_model(space, 3, rng)
    batch = space.enumeration()
    vectorized = model.log_prob_batch(batch)
    scalar = np.array([model.log_prob(s) for s in batch.sequences()])
    assert np.allclose(vectorized, scalar, atol=1e-12)
