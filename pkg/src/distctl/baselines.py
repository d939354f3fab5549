"""Comparison trainers: reward-maximizing policy gradient, KL-penalized reward,
and rejection sampling followed by a supervised k-gram fit.

The KL-penalized trainer is a plain score-function policy gradient on the
penalized per-sample reward (no PPO machinery); with beta = 0 it reduces
bitwise to the plain feature-reward trainer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ebm import Ebm
from .errors import ConfigError, NoAcceptedSamples
from .features import ConstraintSet
from .lm import TabularARModel, mle_fit
from .metrics import EvalOptions, MetricsRecord, snapshot
from .seqspace import SampleBatch

REINFORCE_PHI = "reinforce-phi"
REINFORCE_P = "reinforce-P"
KL_PENALIZED = "kl-penalized"
REJECTION_MLE = "rejection-mle"

TRAINER_KINDS = (REINFORCE_PHI, REINFORCE_P, KL_PENALIZED)


@dataclass
class BaselineConfig:
    kind: str
    iterations: int = 0
    samples_per_iteration: int = 1
    learning_rate: float = 0.1
    beta: float | None = None
    beta_adaptive: bool = False
    kl_target: float | None = None
    beta_step: float = 0.1
    eval_every: int = 10
    seed: int = 0
    policy_order: int | None = None
    sample_budget: int | None = None
    fit_order: int | None = None
    fit_smoothing: float = 1.0

    def __post_init__(self):
        if self.kind not in TRAINER_KINDS + (REJECTION_MLE,):
            raise ConfigError(f"unknown baseline kind {self.kind!r}")
        if (self.beta is not None) != (self.kind == KL_PENALIZED):
            raise ConfigError("beta must be given exactly when kind is kl-penalized")
        if self.beta_adaptive and self.kl_target is None:
            raise ConfigError("beta_adaptive needs a kl_target")
        if self.kind == REJECTION_MLE:
            if self.sample_budget is None or self.fit_order is None:
                raise ConfigError("rejection-mle needs sample_budget and fit_order")
        elif self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")


def reinforce_step(
    policy: TabularARModel,
    reward_fn,
    k: int,
    learning_rate: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """One policy-gradient step on samples from the policy itself.

    Applies learning_rate * mean_k(reward * grad log pi); returns the rewards.
    """
    samples = policy.sample_batch(k, rng)
    rewards = np.asarray(reward_fn(samples), dtype=float)
    grad = policy.grad_weighted_sum(samples, rewards)
    policy.apply_update(grad, learning_rate / k)
    return rewards


def kl_penalized_step(
    policy: TabularARModel,
    base: TabularARModel,
    reward_fn,
    beta: float,
    k: int,
    learning_rate: float,
    rng: np.random.Generator,
    beta_adaptive: bool = False,
    kl_target: float | None = None,
    beta_step: float = 0.1,
) -> float:
    """Policy-gradient step on reward(x) - beta * log(pi(x)/a(x)); returns new beta.

    When adaptive, beta moves multiplicatively by (1 + beta_step): up while the
    estimated KL(pi||a) exceeds the target, down otherwise.
    """
    samples = policy.sample_batch(k, rng)
    rewards = np.asarray(reward_fn(samples), dtype=float)
    log_ratio = policy.log_prob_batch(samples) - base.log_prob_batch(samples)
    penalized = rewards - beta * log_ratio
    grad = policy.grad_weighted_sum(samples, penalized)
    policy.apply_update(grad, learning_rate / k)
    if beta_adaptive:
        estimated_kl = float(log_ratio.mean())
        if estimated_kl > kl_target:
            beta = beta * (1.0 + beta_step)
        else:
            beta = beta / (1.0 + beta_step)
    return beta


@dataclass
class RejectionStats:
    drawn: int
    kept: int

    @property
    def acceptance_rate(self) -> float:
        return self.kept / self.drawn if self.drawn else 0.0


def rejection_mle(
    base: TabularARModel,
    constraint_set: ConstraintSet,
    sample_budget: int,
    order: int,
    smoothing: float,
    seed: int = 0,
    chunk: int = 8192,
) -> tuple[TabularARModel, RejectionStats]:
    """Sample the base, keep sequences passing the pointwise predicate, MLE-fit on them."""
    if sample_budget < 1:
        raise ConfigError("sample_budget must be >= 1")
    rng = np.random.default_rng(seed)
    kept = []
    drawn = 0
    while drawn < sample_budget:
        n = min(chunk, sample_budget - drawn)
        batch = base.sample_batch(n, rng)
        drawn += n
        accept = constraint_set.pointwise_predicate_batch(batch) == 1.0
        for i in np.nonzero(accept)[0]:
            kept.append(batch.row(int(i)))
    stats = RejectionStats(drawn=drawn, kept=len(kept))
    if not kept:
        raise NoAcceptedSamples(
            f"no sample satisfied the pointwise predicate within budget {sample_budget}"
        )
    model = mle_fit(base.space, kept, order=order, smoothing=smoothing)
    return model, stats


@dataclass
class BaselineResult:
    policy: TabularARModel
    history: list[MetricsRecord]
    final_beta: float | None = None


def train_baseline(
    base: TabularARModel,
    target: Ebm,
    config: BaselineConfig,
    eval_options: EvalOptions | None = None,
) -> BaselineResult:
    """Run a policy-gradient baseline with the same snapshot cadence as the
    distributional trainer. The feature reward is the sum over constraint
    features (a single constraint's reward is just its feature)."""
    if config.kind == REJECTION_MLE:
        raise ConfigError("rejection-mle is fitted via rejection_mle, not trained")
    eval_options = eval_options or EvalOptions()
    rng_train, rng_eval = [
        np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(2)
    ]
    order = config.policy_order
    if order is None:
        order = max(base.order, base.space.lmax)
    policy = base.to_order(order, trainable=True)
    constraint_set = target.constraint_set

    def phi_reward(batch: SampleBatch) -> np.ndarray:
        return constraint_set.feature_matrix(batch).sum(axis=1)

    def score_reward(batch: SampleBatch) -> np.ndarray:
        return np.exp(target.log_score_batch(batch))

    beta = config.beta
    history = [
        snapshot(0, config.kind, policy, base, target, rng_eval, eval_options)
    ]
    for i in range(config.iterations):
        if config.kind == REINFORCE_PHI:
            reinforce_step(
                policy, phi_reward, config.samples_per_iteration, config.learning_rate, rng_train
            )
        elif config.kind == REINFORCE_P:
            reinforce_step(
                policy, score_reward, config.samples_per_iteration, config.learning_rate, rng_train
            )
        else:
            beta = kl_penalized_step(
                policy,
                base,
                phi_reward,
                beta,
                config.samples_per_iteration,
                config.learning_rate,
                rng_train,
                beta_adaptive=config.beta_adaptive,
                kl_target=config.kl_target,
                beta_step=config.beta_step,
            )
        if (i + 1) % config.eval_every == 0:
            history.append(
                snapshot(i + 1, config.kind, policy, base, target, rng_eval, eval_options)
            )
    return BaselineResult(policy=policy, history=history, final_beta=beta)
