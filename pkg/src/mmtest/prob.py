"""Finite-alphabet probability primitives.

Alphabet points are identified with the integers ``1..m``; distributions are
plain float vectors of length ``m``.  Everything here is a pure function of
its arguments; randomness comes in through an explicit :class:`RngSeed` or a
``numpy.random.Generator`` supplied by the caller.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import rel_entr

SUM_TOL = 1e-12


class DistributionError(ValueError):
    """Raised when a vector cannot be interpreted as a probability vector."""


def logsumexp(u, axis=None):
    """``log(sum(exp(u)))`` by max-subtraction; ``-inf`` entries are allowed."""
    u = np.asarray(u, dtype=float)
    top = np.max(u, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(u - top), axis=axis, keepdims=True)) + top
    return out.item() if axis is None else np.squeeze(out, axis=axis)


def as_distribution(probs, tol: float = SUM_TOL) -> np.ndarray:
    """Validate ``probs`` and return it as a read-only probability vector.

    Vectors whose sum is within ``tol`` of one are renormalized so that the
    result lies exactly on the simplex (up to rounding).
    """
    p = np.array(probs, dtype=float)
    if p.ndim != 1 or p.size < 2:
        raise DistributionError(f"expected a vector over at least 2 points, got shape {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise DistributionError("probabilities must be finite and nonnegative")
    s = p.sum()
    if abs(s - 1.0) > tol:
        raise DistributionError(f"probabilities sum to {s!r}, not 1")
    if s != 1.0:
        p /= s
    p.flags.writeable = False
    return p


def uniform(m: int) -> np.ndarray:
    if m < 2:
        raise DistributionError("alphabet size must be at least 2")
    return as_distribution(np.full(m, 1.0 / m))


@dataclass(frozen=True)
class RngSeed:
    """A reproducible random stream: ``(master_seed, stream_index)``.

    Streams are derived with ``SeedSequence(master_seed, spawn_key=...)`` so
    that stream ``s`` (and any sub-stream of it) is the same no matter which
    process draws it or in which order.
    """

    master_seed: int
    stream_index: int = 0

    def __post_init__(self):
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if self.stream_index < 0:
            raise ValueError("stream_index must be nonnegative")

    def generator(self, *subkey: int) -> np.random.Generator:
        return stream(self.master_seed, self.stream_index, *subkey)


def stream(master_seed: int, *key: int) -> np.random.Generator:
    """Counter-derived generator for ``key`` under ``master_seed``."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=tuple(key)))


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, RngSeed):
        return seed.generator()
    return RngSeed(int(seed)).generator()


def kl_divergence(mu, pi) -> float:
    """``D(mu || pi)`` in nats; ``inf`` when ``mu`` is not dominated by ``pi``."""
    mu = np.asarray(mu, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if mu.shape != pi.shape:
        raise DistributionError(f"shape mismatch: {mu.shape} vs {pi.shape}")
    return float(np.sum(rel_entr(mu, pi)))


def sample_iid(pi, n: int, seed) -> np.ndarray:
    """Draw ``n`` i.i.d. points (1-based) from ``pi``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    pi = as_distribution(pi)
    rng = as_generator(seed)
    return rng.choice(pi.size, size=n, p=pi) + 1


@dataclass(frozen=True)
class EmpiricalDistribution:
    counts: np.ndarray
    n: int

    @property
    def probs(self) -> np.ndarray:
        return self.counts / self.n

    @property
    def alphabet_size(self) -> int:
        return self.counts.size


def empirical_from_samples(samples, alphabet_size: int) -> EmpiricalDistribution:
    z = np.asarray(samples)
    if z.size == 0:
        raise ValueError("empirical distribution of an empty sample is undefined")
    if z.ndim != 1 or not np.issubdtype(z.dtype, np.integer):
        raise ValueError("samples must be a flat sequence of integers")
    if z.min() < 1 or z.max() > alphabet_size:
        raise ValueError(f"samples must lie in 1..{alphabet_size}")
    counts = np.bincount(z - 1, minlength=alphabet_size)
    counts.flags.writeable = False
    return EmpiricalDistribution(counts=counts, n=int(z.size))


def tilt(pi, f) -> np.ndarray:
    """Exponential tilt ``pi * exp(f) / <pi, exp(f)>``."""
    pi = np.asarray(pi, dtype=float)
    f = np.asarray(f, dtype=float)
    with np.errstate(divide="ignore"):
        logits = np.log(pi) + f
    if not np.any(np.isfinite(logits)):
        raise DistributionError("tilt needs a point where pi > 0 and f is finite")
    return np.exp(logits - logsumexp(logits))


def normalize_from_logits(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return np.exp(u - logsumexp(u))
