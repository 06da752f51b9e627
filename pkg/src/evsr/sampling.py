"""Nonhomogeneous Poisson event sampling with an exact target count.

Candidates come from a homogeneous process and are thinned against the
binned rate shape; batches are regenerated until enough survive, then a
uniformly random subset of the accepted pool is kept.  Given its count, a
Poisson process has i.i.d. points with density lambda/integral(lambda),
and the accepted pool conditioned on its size has exactly that law, so
the random subset preserves it.  An independent inverse-CDF oracle
implements the conditional law directly for verification.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .rates import RateFunction

logger = logging.getLogger(__name__)

_MAX_ROUNDS = 10_000


@dataclass(frozen=True)
class PointProcessSpec:
    """Target count, binned rate shape, and horizon for one pixel."""

    n_target: int
    rate: RateFunction
    horizon: int

    def __post_init__(self):
        if self.n_target < 0:
            raise ValueError(f"n_target must be >= 0, got {self.n_target}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1 us, got {self.horizon}")
        if self.rate.horizon < self.horizon:
            raise ValueError(
                f"rate covers only {self.rate.horizon} us of horizon {self.horizon}"
            )


@dataclass(frozen=True)
class RngStream:
    """Keyed substream: same (seed, key) replays, distinct keys decorrelate."""

    seed: int
    x: int = 0
    y: int = 0
    polarity: int = 1
    window_index: int = 0

    def generator(self) -> np.random.Generator:
        pol_code = 1 if self.polarity >= 0 else 0
        return np.random.default_rng(
            [self.seed & 0xFFFFFFFFFFFFFFFF, self.x, self.y,
             pol_code, self.window_index]
        )


def sample_homogeneous(rate: float, horizon: float,
                       rng: np.random.Generator) -> np.ndarray:
    """Arrival times in (0, T] of a constant-rate Poisson process.

    Generated by accumulating exponential gaps of mean 1/rate, so the
    count is Poisson(rate * horizon) distributed.
    """
    if rate <= 0:
        raise ValueError(f"rate must be > 0, got {rate}")
    if horizon <= 0:
        raise ValueError(f"horizon must be > 0, got {horizon}")
    expected = rate * horizon
    block = max(16, int(expected + 4 * np.sqrt(expected) + 1))
    times = np.cumsum(rng.exponential(1.0 / rate, block))
    while times[-1] <= horizon:
        extra = np.cumsum(rng.exponential(1.0 / rate, block)) + times[-1]
        times = np.concatenate([times, extra])
    return times[times <= horizon]


def _rate_at(times: np.ndarray, rate: RateFunction) -> np.ndarray:
    idx = np.ceil(np.asarray(times, dtype=np.float64) / rate.bin_width)
    idx = np.clip(idx.astype(np.int64) - 1, 0, rate.values.size - 1)
    return rate.values[idx]


def thin(candidate_times: np.ndarray, rate: RateFunction, lam_star: float,
         rng: np.random.Generator) -> np.ndarray:
    """Keep each candidate with probability rate(t)/lam_star, order kept."""
    candidates = np.asarray(candidate_times, dtype=np.float64)
    if candidates.size and np.any(np.diff(candidates) < 0):
        raise ValueError("candidate times must be sorted")
    if not candidates.size:
        return candidates
    values = _rate_at(candidates, rate)
    if values.max() > lam_star * (1 + 1e-12):
        raise ValueError("contract violation: rate exceeds dominating constant")
    accept = rng.random(candidates.size) <= values / lam_star
    return candidates[accept]


def _covered_bin_lengths(rate: RateFunction, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    n_bins = int(np.ceil(horizon / rate.bin_width))
    vals = rate.values[:n_bins]
    ends = np.minimum((np.arange(n_bins) + 1) * rate.bin_width, horizon)
    starts = np.arange(n_bins) * rate.bin_width
    return vals, (ends - starts).astype(np.float64)


def _spread_ties(times: np.ndarray, horizon: int) -> np.ndarray:
    """Make sorted integer times strictly increasing within [1, horizon].

    When there is no room (more events than microsecond ticks) the input
    is returned with ties left equal.
    """
    n = times.size
    if n <= 1:
        return times
    if n > horizon:
        logger.warning(
            "capacity: %d events cannot get distinct us ticks in (0, %d]; "
            "equal timestamps allowed", n, horizon)
        return times
    idx = np.arange(n, dtype=np.int64)
    pushed = np.maximum.accumulate(times - idx) + idx
    return np.minimum(pushed, horizon - (n - 1) + idx)


def _finalize(times: np.ndarray, horizon: int) -> np.ndarray:
    ints = np.clip(np.ceil(times).astype(np.int64), 1, horizon)
    ints.sort()
    return _spread_ties(ints, horizon)


def sample_event_sequence(spec: PointProcessSpec, rng: np.random.Generator,
                          headroom: float = 2.0) -> np.ndarray:
    """Exactly ``n_target`` sorted integer times in (0, T] following the rate.

    The homogeneous candidate rate is scaled so a batch yields about
    ``headroom * n_target`` accepted events, bounding regeneration
    rounds.  An all-zero rate with a positive target falls back to
    uniform times (logged), so count contracts hold for pixels whose
    neighborhood was silent.
    """
    n = spec.n_target
    if n == 0:
        return np.empty(0, dtype=np.int64)
    vals, lengths = _covered_bin_lengths(spec.rate, spec.horizon)
    mass = float(vals @ lengths)
    if mass <= 0.0:
        logger.warning("zero-measure rate with n_target=%d: uniform fallback", n)
        return _finalize(rng.uniform(0.0, spec.horizon, n), spec.horizon)
    lam_star = float(vals.max())
    candidate_rate = headroom * n * lam_star / mass
    pool = []
    total = 0
    for _ in range(_MAX_ROUNDS):
        batch = sample_homogeneous(candidate_rate, spec.horizon, rng)
        accepted = thin(batch, spec.rate, lam_star, rng)
        pool.append(accepted)
        total += accepted.size
        if total >= n:
            break
    else:
        raise RuntimeError("thinning failed to reach the target count")
    accepted = np.concatenate(pool)
    if total > n:
        keep = rng.choice(total, size=n, replace=False)
        accepted = accepted[keep]
    return _finalize(accepted, spec.horizon)


def sample_conditional_oracle(spec: PointProcessSpec, rng: np.random.Generator
                              ) -> np.ndarray:
    """Exact conditional sampler: n i.i.d. times with density rate/mass.

    Inverse-transform on the piecewise-constant cumulative rate; serves
    as the independent reference for the thinning path.
    """
    n = spec.n_target
    if n == 0:
        return np.empty(0, dtype=np.int64)
    vals, lengths = _covered_bin_lengths(spec.rate, spec.horizon)
    masses = vals * lengths
    total = float(masses.sum())
    if total <= 0.0:
        logger.warning("zero-measure rate with n_target=%d: uniform fallback", n)
        return _finalize(rng.uniform(0.0, spec.horizon, n), spec.horizon)
    cum = np.cumsum(masses)
    u = rng.uniform(0.0, total, n)
    idx = np.searchsorted(cum, u, side="right")
    idx = np.minimum(idx, masses.size - 1)
    prev = cum[idx] - masses[idx]
    offset = (u - prev) / vals[idx]
    times = idx * spec.rate.bin_width + offset
    return _finalize(times, spec.horizon)
