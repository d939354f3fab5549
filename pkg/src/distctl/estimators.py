"""Importance-sampling estimators for Z, KL divergences, and TVD.

All estimators work in log space and take the partition-function estimate as
an explicit argument, so a trainer can share one moving-average Z across the
divergence estimates it compares. Exact oracles over enumerated universes
live at the bottom.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ebm import Ebm
from .errors import ConfigError, NonpositiveZ, SupportViolation
from .lm import TabularARModel
from .seqspace import SampleBatch


@dataclass
class Estimate:
    value: float
    standard_error: float
    sample_count: int


@dataclass(frozen=True)
class ZMovingAverage:
    """Running mean of per-batch unbiased Z estimates."""

    value: float = 0.0
    iterations: int = 0

    def fold(self, z_hat: float) -> "ZMovingAverage":
        i = self.iterations
        return ZMovingAverage(value=(i * self.value + z_hat) / (i + 1), iterations=i + 1)


def fold_z(zma: ZMovingAverage, z_hat: float) -> ZMovingAverage:
    return zma.fold(z_hat)


def _mean_se(terms: np.ndarray) -> tuple[float, float]:
    n = len(terms)
    se = float(np.std(terms, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(np.mean(terms)), se


def importance_ratios(log_p_score: np.ndarray, log_q: np.ndarray) -> np.ndarray:
    """exp(log P - log q) per sample; the proposal must cover the EBM support."""
    if np.isneginf(log_q).any():
        raise SupportViolation("proposal assigns zero probability to a drawn sample")
    return np.exp(log_p_score - log_q)


def z_estimate_from_logs(log_p_score: np.ndarray, log_q: np.ndarray) -> Estimate:
    r = importance_ratios(log_p_score, log_q)
    value, se = _mean_se(r)
    return Estimate(value=value, standard_error=se, sample_count=len(r))


def kl_p_from_logs(
    log_p_score: np.ndarray, log_q: np.ndarray, log_pi: np.ndarray, z: float
) -> Estimate:
    """KL(p || pi) via -log z + (1/z) E_q[(P/q) log(P/pi)], p = P/Z."""
    if z <= 0.0:
        raise NonpositiveZ(f"KL estimator needs z > 0, got {z}")
    r = importance_ratios(log_p_score, log_q)
    terms = np.zeros_like(r)
    mass = r > 0.0
    terms[mass] = r[mass] * (log_p_score[mass] - log_pi[mass])
    mean, se = _mean_se(terms)
    return Estimate(
        value=-np.log(z) + mean / z,
        standard_error=se / z,
        sample_count=len(terms),
    )


def tvd_p_from_logs(
    log_p_score: np.ndarray, log_q: np.ndarray, log_pi: np.ndarray, z: float
) -> Estimate:
    """TVD(p, pi) via (1/2) E_q |pi/q - P/(z q)|."""
    if z <= 0.0:
        raise NonpositiveZ(f"TVD estimator needs z > 0, got {z}")
    if np.isneginf(log_q).any():
        raise SupportViolation("proposal assigns zero probability to a drawn sample")
    terms = 0.5 * np.abs(np.exp(log_pi - log_q) - np.exp(log_p_score - log_q) / z)
    value, se = _mean_se(terms)
    return Estimate(value=value, standard_error=se, sample_count=len(terms))


def kl_models_from_logs(log_pi: np.ndarray, log_a: np.ndarray) -> Estimate:
    """KL(pi || a) from samples drawn from pi: mean of log(pi/a)."""
    if np.isneginf(log_a).any():
        raise SupportViolation("reference model assigns zero probability to a drawn sample")
    value, se = _mean_se(log_pi - log_a)
    return Estimate(value=value, standard_error=se, sample_count=len(log_pi))


# -- model-level wrappers ----------------------------------------------------


def estimate_z(target: Ebm, proposal: TabularARModel, samples: SampleBatch) -> Estimate:
    return z_estimate_from_logs(
        target.log_score_batch(samples), proposal.log_prob_batch(samples)
    )


def estimate_kl_p_from(
    target: Ebm,
    policy: TabularARModel,
    proposal: TabularARModel,
    samples: SampleBatch,
    z: float,
) -> Estimate:
    return kl_p_from_logs(
        target.log_score_batch(samples),
        proposal.log_prob_batch(samples),
        policy.log_prob_batch(samples),
        z,
    )


def estimate_tvd(
    target: Ebm,
    policy: TabularARModel,
    proposal: TabularARModel,
    samples: SampleBatch,
    z: float,
) -> Estimate:
    return tvd_p_from_logs(
        target.log_score_batch(samples),
        proposal.log_prob_batch(samples),
        policy.log_prob_batch(samples),
        z,
    )


def estimate_kl_between_models(
    policy: TabularARModel, reference: TabularARModel, samples: SampleBatch
) -> Estimate:
    """KL(policy || reference) from samples drawn from the policy."""
    return kl_models_from_logs(
        policy.log_prob_batch(samples), reference.log_prob_batch(samples)
    )


# -- exact oracles over enumerated universes ---------------------------------


def _check_pair(d1: np.ndarray, d2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    if d1.shape != d2.shape:
        raise ConfigError("distributions must share one universe")
    for d in (d1, d2):
        if abs(d.sum() - 1.0) > 1e-6 or (d < 0).any():
            raise ConfigError("exact divergences need normalized distributions")
    return d1, d2


def exact_kl(d1: np.ndarray, d2: np.ndarray) -> float:
    d1, d2 = _check_pair(d1, d2)
    mass = d1 > 0
    if (d2[mass] <= 0).any():
        raise SupportViolation("second distribution misses support of the first")
    return float(np.sum(d1[mass] * np.log(d1[mass] / d2[mass])))


def exact_tvd(d1: np.ndarray, d2: np.ndarray) -> float:
    d1, d2 = _check_pair(d1, d2)
    return float(0.5 * np.abs(d1 - d2).sum())


def exact_entropy(d: np.ndarray) -> float:
    d = np.asarray(d, dtype=float)
    mass = d > 0
    return float(-np.sum(d[mass] * np.log(d[mass])))
