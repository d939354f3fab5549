"""Adaptive distributional policy-gradient training toward an EBM target.

Each iteration draws a batch from the frozen proposal, applies importance
weighted score-function updates to the policy (weight = score(x)/q(x)), folds
the batch's partition-function estimate into a moving average, and, when
adaptivity is on, replaces the proposal with a frozen copy of the policy
whenever the policy's estimated divergence from the target drops strictly
below the proposal's. Both divergence estimates reuse the iteration's samples
and the shared moving-average Z.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ebm import Ebm
from .errors import ConfigError
from .estimators import (
    ZMovingAverage,
    importance_ratios,
    kl_p_from_logs,
    tvd_p_from_logs,
)
from .lm import TabularARModel
from .metrics import EvalOptions, MetricsRecord, snapshot
from .seqspace import SampleBatch

ADAPTIVITY_KL = "kl"
ADAPTIVITY_TVD = "tvd"
ADAPTIVITY_NONE = "none"

OPTIMIZER_SGD = "sgd"
OPTIMIZER_ADAM = "adam"


@dataclass
class DpgConfig:
    iterations: int
    samples_per_iteration: int
    learning_rate: float = 0.1
    adaptivity: str = ADAPTIVITY_KL
    batch_update: bool = True
    optimizer: str = OPTIMIZER_SGD
    eval_every: int = 10
    seed: int = 0
    policy_order: int | None = None

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.samples_per_iteration < 1:
            raise ConfigError("samples_per_iteration must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.adaptivity not in (ADAPTIVITY_KL, ADAPTIVITY_TVD, ADAPTIVITY_NONE):
            raise ConfigError(f"unknown adaptivity {self.adaptivity!r}")
        if self.optimizer not in (OPTIMIZER_SGD, OPTIMIZER_ADAM):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.optimizer == OPTIMIZER_ADAM and not self.batch_update:
            raise ConfigError("adam preconditioning needs batch_update")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")


@dataclass
class AdamState:
    """First/second moment accumulators for the batch-gradient preconditioner."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def like(cls, logits: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(logits), v=np.zeros_like(logits))

    def step(self, grad: np.ndarray, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.t += 1
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad * grad
        m_hat = self.m / (1 - b1**self.t)
        v_hat = self.v / (1 - b2**self.t)
        return m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class IterationDecision:
    iteration: int
    z_hat: float
    div_policy: float | None
    div_proposal: float | None
    swapped: bool


@dataclass
class TrainState:
    policy: TabularARModel
    proposal: TabularARModel
    zma: ZMovingAverage = field(default_factory=ZMovingAverage)
    history: list[MetricsRecord] = field(default_factory=list)
    decisions: list[IterationDecision] = field(default_factory=list)
    adam: AdamState | None = None
    proposal_updates: int = 0
    iteration: int = 0
    samples_drawn: int = 0


@dataclass
class TrainResult:
    policy: TabularARModel
    history: list[MetricsRecord]
    state: TrainState


def init_state(base: TabularARModel, config: DpgConfig) -> TrainState:
    """Policy starts as the base distribution re-expressed at trainable capacity."""
    order = config.policy_order
    if order is None:
        order = max(base.order, base.space.lmax)
    policy = base.to_order(order, trainable=True)
    adam = AdamState.like(policy.logits) if config.optimizer == OPTIMIZER_ADAM else None
    return TrainState(policy=policy, proposal=policy.frozen_copy(), adam=adam)


def dpg_iteration(
    state: TrainState, target: Ebm, config: DpgConfig, rng: np.random.Generator
) -> TrainState:
    k = config.samples_per_iteration
    samples = state.proposal.sample_batch(k, rng)
    state.samples_drawn += k
    log_q = state.proposal.log_prob_batch(samples)
    log_p_score = target.log_score_batch(samples)
    weights = importance_ratios(log_p_score, log_q)

    if config.batch_update:
        grad = state.policy.grad_weighted_sum(samples, weights)
        if state.adam is not None:
            state.policy.apply_update(state.adam.step(grad / k), config.learning_rate)
        else:
            state.policy.apply_update(grad, config.learning_rate / k)
    else:
        for i in range(k):
            one = SampleBatch(
                tokens=samples.tokens[i : i + 1], lengths=samples.lengths[i : i + 1]
            )
            grad = state.policy.grad_weighted_sum(one, weights[i : i + 1])
            state.policy.apply_update(grad, config.learning_rate)

    z_hat = float(weights.mean())
    state.zma = state.zma.fold(z_hat)

    div_policy = div_proposal = None
    swapped = False
    if config.adaptivity != ADAPTIVITY_NONE and state.zma.value > 0.0:
        log_pi = state.policy.log_prob_batch(samples)
        estimator = kl_p_from_logs if config.adaptivity == ADAPTIVITY_KL else tvd_p_from_logs
        div_policy = estimator(log_p_score, log_q, log_pi, state.zma.value).value
        div_proposal = estimator(log_p_score, log_q, log_q, state.zma.value).value
        if div_policy < div_proposal:
            state.proposal = state.policy.frozen_copy()
            state.proposal_updates += 1
            swapped = True
    state.decisions.append(
        IterationDecision(
            iteration=state.iteration,
            z_hat=z_hat,
            div_policy=div_policy,
            div_proposal=div_proposal,
            swapped=swapped,
        )
    )
    state.iteration += 1
    return state


def train(
    base: TabularARModel,
    target: Ebm,
    config: DpgConfig,
    eval_options: EvalOptions | None = None,
) -> TrainResult:
    """Run the full training loop with periodic metric snapshots.

    Training and evaluation consume independent RNG streams spawned from the
    seed, so snapshot cadence never perturbs the training trajectory.
    """
    if target.base.space != base.space:
        raise ConfigError("target EBM and trained base must share one sequence space")
    eval_options = eval_options or EvalOptions()
    rng_train, rng_eval = [
        np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(2)
    ]
    state = init_state(base, config)
    state.history.append(
        snapshot(0, "gdc", state.policy, base, target, rng_eval, eval_options, state.zma.value)
    )
    for i in range(config.iterations):
        dpg_iteration(state, target, config, rng_train)
        if (i + 1) % config.eval_every == 0:
            state.history.append(
                snapshot(
                    i + 1,
                    "gdc",
                    state.policy,
                    base,
                    target,
                    rng_eval,
                    eval_options,
                    state.zma.value,
                )
            )
    return TrainResult(policy=state.policy, history=state.history, state=state)
