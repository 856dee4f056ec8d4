"""
Probability kernels for overdispersed transmission models.

Negative binomial distributions are parametrized throughout by mean and
dispersion: mean ``mu``, dispersion ``psi``, variance ``mu * (1 + mu/psi)``.
Small dispersion means heavy-tailed offspring counts (superspreading
potential); as ``psi -> inf`` the distribution approaches a Poisson.

Delay distributions (generation time, incubation period) are gamma shapes
discretized to integer day lags with positive support (lag >= 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln
from scipy.stats import gamma as _gamma

__all__ = [
    "DelayDistribution",
    "OffspringSummary",
    "MixtureDispersion",
    "SignedLagPmf",
    "discretize_gamma",
    "default_lag_cap",
    "nb_logpmf",
    "nb_sample",
    "offspring_summary",
    "mixture_equivalent_dispersion",
    "dispersion_from_variance_ratio",
    "variance_ratio_from_dispersion",
    "presymptomatic_fraction",
    "serial_interval",
]


class InvalidParameterError(ValueError):
    """Raised for parameter values outside a distribution's domain."""


class TruncationError(ValueError):
    """Raised when a lag cap is too small for the requested distribution."""


@dataclass(frozen=True)
class DelayDistribution:
    """Discretized delay distribution over integer day lags 1..l_max.

    ``pmf[i]`` is the probability of a lag of ``i + 1`` days. The pmf is
    renormalized to sum to one; ``mean`` and ``sd`` are the moments of the
    underlying continuous gamma.
    """

    mean: float
    sd: float
    pmf: np.ndarray
    l_max: int

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=float)
        if pmf.shape != (self.l_max,):
            raise InvalidParameterError(
                f"pmf must have length l_max={self.l_max}, got {pmf.shape}"
            )
        if np.any(pmf < 0) or np.any(pmf > 1):
            raise InvalidParameterError("pmf entries must lie in [0, 1]")
        if abs(pmf.sum() - 1.0) > 1e-12:
            raise InvalidParameterError("pmf must sum to 1 within 1e-12")
        object.__setattr__(self, "pmf", pmf)

    @property
    def lags(self) -> np.ndarray:
        return np.arange(1, self.l_max + 1)

    def prob(self, lag: int) -> float:
        """Probability of an integer lag; 0 outside 1..l_max."""
        if 1 <= lag <= self.l_max:
            return float(self.pmf[lag - 1])
        return 0.0

    def pmf_mean(self) -> float:
        """Mean of the discretized pmf (close to, not identical with, ``mean``)."""
        return float(np.dot(self.lags, self.pmf))


@dataclass(frozen=True)
class SignedLagPmf:
    """Pmf over signed integer lags, e.g. the serial interval."""

    first_lag: int
    probs: np.ndarray

    @property
    def lags(self) -> np.ndarray:
        return np.arange(self.first_lag, self.first_lag + len(self.probs))

    def mean(self) -> float:
        return float(np.dot(self.lags, self.probs))


def default_lag_cap(mean: float, sd: float) -> int:
    """Lag cap leaving well under 1e-6 truncated tail mass for delay-like shapes."""
    return int(math.ceil(mean + 10.0 * sd))


def discretize_gamma(mean: float, sd: float, l_max: int | None = None) -> DelayDistribution:
    """Discretize a gamma distribution onto integer day lags 1..l_max.

    The gamma's shape and scale are moment-matched to ``mean`` and ``sd``.
    Each lag l receives the gamma mass of the unit interval centred on it,
    [l - 1/2, l + 1/2), and the result is renormalized; this keeps the
    discrete mean within a few hundredths of a day of the continuous mean.

    Raises
    ------
    InvalidParameterError
        If mean or sd is not strictly positive.
    TruncationError
        If l_max < ceil(mean + 4 sd), where truncation would distort the pmf.
    """
    if mean <= 0 or sd <= 0:
        raise InvalidParameterError(f"mean and sd must be > 0, got mean={mean}, sd={sd}")
    if l_max is None:
        l_max = default_lag_cap(mean, sd)
    required = int(math.ceil(mean + 4.0 * sd))
    if l_max < required:
        raise TruncationError(
            f"l_max={l_max} too small for mean={mean}, sd={sd}; need >= {required}"
        )
    shape = (mean / sd) ** 2
    scale = sd * sd / mean
    edges = np.arange(0, l_max + 1) + 0.5
    cdf = _gamma.cdf(edges, a=shape, scale=scale)
    pmf = np.diff(cdf)
    total = pmf.sum()
    if total <= 0:
        raise TruncationError("no gamma mass on the lag grid; check parameters")
    return DelayDistribution(mean=mean, sd=sd, pmf=pmf / total, l_max=l_max)


def nb_logpmf(count, mean, dispersion):
    """Log pmf of the negative binomial in mean/dispersion form.

    Variance is ``mean * (1 + mean/dispersion)``. A mean of zero is the
    degenerate point mass at zero (log-probability 0 at count 0, -inf
    otherwise). Inputs broadcast like numpy arrays.
    """
    count = np.asarray(count)
    mean = np.asarray(mean, dtype=float)
    dispersion = np.asarray(dispersion, dtype=float)
    if np.any(dispersion <= 0):
        raise InvalidParameterError("dispersion must be > 0")
    if np.any(mean < 0):
        raise InvalidParameterError("mean must be >= 0")
    if np.any(count < 0) or np.any(count != np.floor(count)):
        raise InvalidParameterError("count must be a non-negative integer")

    count_b, mean_b, k_b = np.broadcast_arrays(count, mean, dispersion)
    out = np.full(count_b.shape, -np.inf, dtype=float)
    zero_mean = mean_b == 0
    out[zero_mean & (count_b == 0)] = 0.0
    pos = ~zero_mean
    if np.any(pos):
        x = count_b[pos].astype(float)
        mu = mean_b[pos]
        k = k_b[pos]
        out[pos] = (
            gammaln(x + k)
            - gammaln(k)
            - gammaln(x + 1.0)
            - k * np.log1p(mu / k)
            + x * (np.log(mu) - np.log(mu + k))
        )
    if out.ndim == 0:
        return float(out)
    return out


def nb_sample(mean, dispersion, rng: np.random.Generator, size=None):
    """Draw negative binomial counts via the gamma-Poisson mixture.

    Broadcasts over array-valued mean/dispersion; zero mean yields zero.
    """
    mean = np.asarray(mean, dtype=float)
    dispersion = np.asarray(dispersion, dtype=float)
    if np.any(dispersion <= 0):
        raise InvalidParameterError("dispersion must be > 0")
    if np.any(mean < 0):
        raise InvalidParameterError("mean must be >= 0")
    scalar_out = mean.ndim == 0 and dispersion.ndim == 0 and size is None
    if size is not None:
        mean = np.broadcast_to(mean, size)
        dispersion = np.broadcast_to(dispersion, size)
    else:
        mean, dispersion = np.broadcast_arrays(mean, dispersion)
    pos = mean > 0
    lam = np.where(pos, rng.gamma(shape=dispersion, scale=np.where(pos, mean, 1.0) / dispersion), 0.0)
    draws = rng.poisson(lam)
    if scalar_out:
        return int(draws)
    return draws


@dataclass(frozen=True)
class OffspringSummary:
    """Derived statistics of a negative binomial offspring law."""

    r_mean: float
    dispersion: float
    zero_fraction: float
    infecting_ratio: float
    top_share: float
    q: float
    variance_mean_ratio: float
    degenerate: bool = False


def offspring_summary(r_mean: float, dispersion: float, q: float = 0.2) -> OffspringSummary:
    """Summarize the offspring distribution NB(r_mean, dispersion).

    ``top_share`` is the fraction of all secondary infections produced by the
    top ``q`` fraction of primary cases when ranked by offspring count. The
    boundary count's probability mass is split fractionally so the head holds
    exactly ``q`` of the population.
    """
    if not 0 < q < 1:
        raise InvalidParameterError(f"q must lie in (0, 1), got {q}")
    if dispersion <= 0:
        raise InvalidParameterError("dispersion must be > 0")
    if r_mean < 0:
        raise InvalidParameterError("r_mean must be >= 0")
    if r_mean == 0:
        return OffspringSummary(
            r_mean=0.0, dispersion=dispersion, zero_fraction=1.0, infecting_ratio=0.0,
            top_share=0.0, q=q, variance_mean_ratio=1.0, degenerate=True,
        )
    cap = 256
    while True:
        counts = np.arange(cap)
        pmf = np.exp(nb_logpmf(counts, r_mean, dispersion))
        if pmf.sum() >= 1.0 - 1e-10:
            break
        cap *= 2

    zero_fraction = float(pmf[0])
    # Accumulate population mass from the largest count down until the top-q
    # head is filled; the boundary count contributes fractionally.
    desc_counts = counts[::-1]
    desc_pmf = pmf[::-1]
    cum = np.cumsum(desc_pmf)
    j = int(np.searchsorted(cum, q))  # first index where cum >= q
    head = float(np.dot(desc_counts[:j], desc_pmf[:j]))
    below = cum[j - 1] if j > 0 else 0.0
    share = head + (q - below) * float(desc_counts[min(j, cap - 1)])
    return OffspringSummary(
        r_mean=float(r_mean),
        dispersion=float(dispersion),
        zero_fraction=zero_fraction,
        infecting_ratio=1.0 - zero_fraction,
        top_share=float(share / r_mean),
        q=q,
        variance_mean_ratio=1.0 + r_mean / dispersion,
    )


@dataclass(frozen=True)
class MixtureDispersion:
    """Variance/mean ratio of an equal-mean NB mixture and its NB equivalent."""

    variance_mean_ratio: float
    psi_eq: float
    underdispersed: bool = False


def variance_ratio_from_dispersion(psi: float, r_mean: float) -> float:
    """Variance/mean ratio of NB(r_mean, psi): 1 + r_mean/psi."""
    if psi <= 0:
        raise InvalidParameterError("psi must be > 0")
    return 1.0 + r_mean / psi


def dispersion_from_variance_ratio(variance_mean_ratio: float, r_mean: float) -> float:
    """Dispersion of the NB whose variance/mean ratio matches; inverse of the above."""
    if variance_mean_ratio <= 1.0:
        raise InvalidParameterError("variance/mean ratio must exceed 1 for an NB equivalent")
    return r_mean / (variance_mean_ratio - 1.0)


def mixture_equivalent_dispersion(weights, dispersions, r_mean: float) -> MixtureDispersion:
    """Equivalent single-NB dispersion of a mixture of equal-mean NB laws.

    Component a has law NB(r_mean, psi_a) and weight w_a. Since all component
    means coincide, the mixture variance is the weighted mean of component
    variances, and the equivalent dispersion solves
    variance = r_mean * (1 + r_mean / psi_eq).
    """
    w = np.asarray(weights, dtype=float)
    psis = np.asarray(dispersions, dtype=float)
    if w.shape != psis.shape:
        raise InvalidParameterError("weights and dispersions must have equal length")
    if abs(w.sum() - 1.0) > 1e-9:
        raise InvalidParameterError("weights must sum to 1")
    if np.any(psis <= 0):
        raise InvalidParameterError("all dispersions must be > 0")
    variance = float(np.sum(w * r_mean * (1.0 + r_mean / psis)))
    ratio = variance / r_mean if r_mean > 0 else 1.0
    if variance <= r_mean:
        return MixtureDispersion(variance_mean_ratio=ratio, psi_eq=math.nan, underdispersed=True)
    return MixtureDispersion(
        variance_mean_ratio=ratio,
        psi_eq=r_mean ** 2 / (variance - r_mean),
    )


def presymptomatic_fraction(d_i: DelayDistribution, d_s: DelayDistribution) -> float:
    """Probability that a secondary infection precedes the primary's symptom onset.

    Generation time G ~ d_i and incubation period S ~ d_s are taken
    independent; ties G == S count half.
    """
    joint = np.outer(d_i.pmf, d_s.pmf)
    g = d_i.lags[:, None]
    s = d_s.lags[None, :]
    return float(joint[g < s].sum() + 0.5 * joint[g == s].sum())


def serial_interval(d_i: DelayDistribution, d_s: DelayDistribution) -> SignedLagPmf:
    """Pmf of the serial interval G + S2 - S1 with independent components.

    G ~ d_i is the generation time; S1, S2 ~ d_s are the primary and secondary
    incubation periods. The incubation terms cancel in expectation, so the
    serial interval mean equals the generation-time pmf mean.
    """
    fwd = np.convolve(d_i.pmf, d_s.pmf)  # lags 2 .. l_i + l_s
    probs = np.convolve(fwd, d_s.pmf[::-1])  # subtracting S1 reverses its pmf
    first = 2 - d_s.l_max
    return SignedLagPmf(first_lag=first, probs=probs)
