"""Gaussian mastery states and the regularizers that shape them.

Each student holds an independent Gaussian per latent dimension:
mean mu and variance sigma^2 = exp(logvar).  Mastery used by the
predictors is theta = sigmoid(z) with z drawn by the usual location-
scale reparameterization, so gradients flow through both mean and
variance.  The variance doubles as a confidence readout: small means
the model has settled, large means it is still guessing.

All math helpers below accept tape Nodes or plain ndarrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape
from .numerics import ParameterStore
from .tape import value_of

STUDENT_MEAN = "student_mu"
STUDENT_LOGVAR = "student_logvar"


@dataclass
class StudentPosterior:
    """Per-dimension Gaussian belief about one student's mastery."""

    mean: np.ndarray
    log_var: np.ndarray

    @property
    def variance(self) -> np.ndarray:
        return np.exp(self.log_var)


@dataclass
class PriorConsensus:
    """Population prior the consensus KL pulls toward; unit variance."""

    mean: np.ndarray


@dataclass
class DropoutConfig:
    """Bernoulli variance dropout: keep an entry or pin it to ``alpha``."""

    alpha: float = 0.5
    keep_probability: float = 0.5
    enabled: bool = True

    def __post_init__(self):
        if not (self.alpha > 0):
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not (0 < self.keep_probability <= 1):
            raise ValueError(
                f"keep_probability must be in (0, 1], got {self.keep_probability}"
            )


def posterior_of(store: ParameterStore, student: int) -> StudentPosterior:
    """Read one student's posterior out of the store (no graph involvement)."""
    mu = store.params[STUDENT_MEAN]
    if not (0 <= student < mu.shape[0]):
        raise IndexError(f"student index {student} out of range [0, {mu.shape[0]})")
    return StudentPosterior(
        mean=mu[student].copy(), log_var=store.params[STUDENT_LOGVAR][student].copy()
    )


def dropout_mask(shape, cfg: DropoutConfig, rng: np.random.Generator) -> np.ndarray:
    """Boolean keep-mask; all ones when dropout is disabled."""
    if not cfg.enabled:
        return np.ones(shape, dtype=bool)
    return rng.random(shape) < cfg.keep_probability


def apply_dropout_mask(variance, mask: np.ndarray, alpha: float):
    """Kept entries pass through bit-exact; dropped ones become exactly alpha."""
    return tape.where_mask(variance, mask, alpha)


def apply_variance_dropout(variance, cfg: DropoutConfig, rng: np.random.Generator):
    if not cfg.enabled:
        return variance
    mask = dropout_mask(np.shape(value_of(variance)), cfg, rng)
    return apply_dropout_mask(variance, mask, cfg.alpha)


def draw_ability(mean, variance, eps: np.ndarray):
    """z = mu + sqrt(variance) * eps, theta = sigmoid(z); returns (z, theta)."""
    z = tape.add(mean, tape.mul(tape.sqrt(variance), eps))
    return z, tape.sigmoid(z)


def sample_ability(posterior: StudentPosterior, variance, rng: np.random.Generator):
    """One reparameterized mastery draw for a whole posterior."""
    eps = rng.standard_normal(np.shape(value_of(posterior.mean)))
    return draw_ability(posterior.mean, variance, eps)


def kl_standard(mean, variance):
    """KL(N(mean, variance) || N(0, I)), summed over the trailing axis.

    0.5 * sum(mean^2 + variance - log(variance) - 1) per occurrence.
    """
    inner = tape.sub(tape.add(tape.square(mean), variance), tape.log(variance))
    return tape.mul(tape.nsum(tape.sub(inner, 1.0), axis=-1), 0.5)


def kl_consensus(mean, variance, prior: PriorConsensus):
    """KL against N(prior.mean, I): recenters the mean term, keeps unit prior variance."""
    inner = tape.sub(
        tape.add(tape.square(tape.sub(mean, prior.mean)), variance), tape.log(variance)
    )
    return tape.mul(tape.nsum(tape.sub(inner, 1.0), axis=-1), 0.5)


def compute_consensus(means: np.ndarray) -> PriorConsensus:
    """Population consensus: the plain average of all student means."""
    means = np.asarray(means, dtype=np.float64)
    if means.ndim != 2 or means.shape[0] == 0:
        raise ValueError(f"need a nonempty (students, dims) matrix, got shape {means.shape}")
    return PriorConsensus(mean=means.mean(axis=0))
