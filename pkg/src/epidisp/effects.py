"""
Covariate effects on the instantaneous reproductive number.

The reproductive number of a compartment is the product of its basic value
and one multiplicative factor per covariate,

    R = R0 * prod_j (1 + beta_j * x_j) * (1 + eps),

optionally including a per-(location, day) noise factor ``1 + eps``. Effects
stay on this additive-inside-each-factor form; factors are guarded to remain
strictly positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Iterable, Mapping, Sequence

import numpy as np

COVARIATE_KINDS = ("dummy", "real", "real-standardized")


class NonPositiveRateError(ValueError):
    """A multiplicative factor drove the reproductive number to <= 0."""


class DegenerateCovariateError(ValueError):
    """Covariate cannot be standardized (zero in-sample variance)."""


class CovariateGapError(KeyError):
    """A required (location, day, covariate) cell is missing."""


@dataclass(frozen=True)
class CovariatePanel:
    """Immutable per-(location, day) covariate values.

    values has shape (n_locations, n_days, n_covariates); days are contiguous
    starting at ``start``. Dummy covariates must be 0/1. Covariates of kind
    "real-standardized" carry the (mean, sd) of the sample they were
    standardized on, so the same affine map can be reused out of sample.
    """

    locations: tuple[str, ...]
    start: date
    names: tuple[str, ...]
    kinds: Mapping[str, str]
    values: np.ndarray
    standardization: Mapping[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        expected = (len(self.locations), vals.shape[1] if vals.ndim == 3 else -1, len(self.names))
        if vals.ndim != 3 or vals.shape[0] != expected[0] or vals.shape[2] != expected[2]:
            raise ValueError(
                f"values must have shape (n_locations, n_days, n_covariates), got {vals.shape}"
            )
        for name in self.names:
            kind = self.kinds.get(name)
            if kind not in COVARIATE_KINDS:
                raise ValueError(f"covariate {name!r} has unknown kind {kind!r}")
            col = vals[:, :, self.names.index(name)]
            if kind == "dummy" and not np.all(np.isin(col[~np.isnan(col)], (0.0, 1.0))):
                raise ValueError(f"dummy covariate {name!r} takes values outside {{0, 1}}")
            if kind == "real-standardized" and name not in self.standardization:
                raise ValueError(f"standardized covariate {name!r} lacks stored (mean, sd)")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "locations", tuple(self.locations))
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "kinds", dict(self.kinds))
        object.__setattr__(self, "standardization", dict(self.standardization))

    @property
    def n_days(self) -> int:
        return self.values.shape[1]

    @property
    def dates(self) -> list[date]:
        return [self.start + timedelta(days=i) for i in range(self.n_days)]

    def day_index(self, day: date) -> int:
        idx = (day - self.start).days
        if not 0 <= idx < self.n_days:
            raise CovariateGapError(f"day {day} outside covered window")
        return idx

    def location_index(self, location: str) -> int:
        try:
            return self.locations.index(location)
        except ValueError:
            raise CovariateGapError(f"location {location!r} not in panel") from None

    def covariate_index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise CovariateGapError(f"covariate {name!r} not in panel") from None

    def row(self, location: str, day: date) -> dict[str, float]:
        """Covariate name -> value for one (location, day)."""
        vals = self.values[self.location_index(location), self.day_index(day), :]
        return dict(zip(self.names, vals.tolist()))

    def series(self, name: str) -> np.ndarray:
        """Values of one covariate, shape (n_locations, n_days)."""
        return self.values[:, :, self.covariate_index(name)]

    def require_complete(self, horizon: int) -> None:
        """Fail loudly if any (location, day, covariate) cell is missing."""
        if horizon > self.n_days:
            raise CovariateGapError(
                f"covariates cover {self.n_days} days but horizon needs {horizon}"
            )
        bad = np.argwhere(np.isnan(self.values[:, :horizon, :]))
        if bad.size:
            li, di, ci = bad[0]
            raise CovariateGapError(
                f"missing covariate {self.names[ci]!r} for location "
                f"{self.locations[li]!r} on {self.start + timedelta(days=int(di))}"
            )


def standardize(panel: CovariatePanel, covariate: str) -> CovariatePanel:
    """Replace a real covariate by its in-sample z-score and store the stats."""
    j = panel.covariate_index(covariate)
    if panel.kinds[covariate] == "dummy":
        raise DegenerateCovariateError(f"cannot standardize dummy covariate {covariate!r}")
    col = panel.values[:, :, j]
    mean = float(np.nanmean(col))
    sd = float(np.nanstd(col))
    if sd <= 0 or not np.isfinite(sd):
        raise DegenerateCovariateError(f"covariate {covariate!r} has zero in-sample sd")
    return apply_standardization(panel, covariate, mean, sd)


def apply_standardization(
    panel: CovariatePanel, covariate: str, mean: float, sd: float
) -> CovariatePanel:
    """Apply a stored (mean, sd) affine map, e.g. to out-of-sample data."""
    if sd <= 0:
        raise DegenerateCovariateError("sd must be > 0")
    j = panel.covariate_index(covariate)
    values = panel.values.copy()
    values[:, :, j] = (values[:, :, j] - mean) / sd
    kinds = dict(panel.kinds)
    kinds[covariate] = "real-standardized"
    stats = dict(panel.standardization)
    stats[covariate] = (mean, sd)
    return CovariatePanel(
        locations=panel.locations, start=panel.start, names=panel.names,
        kinds=kinds, values=values, standardization=stats,
    )


@dataclass
class EffectSet:
    """Basic reproductive numbers, covariate effects, and optional noise terms.

    r0 maps (location, age_group) to the basic reproductive number; beta maps
    (age_group, covariate) to the effect size. Noise, when enabled, is one
    eps per (location, day) shared across age groups at that location.
    """

    r0: dict[tuple[str, str], float]
    beta: dict[tuple[str, str], float]
    noise: dict[tuple[str, date], float] | None = None
    noise_sd: float = 0.0

    def __post_init__(self):
        for key, value in self.r0.items():
            if value <= 0:
                raise NonPositiveRateError(f"R0 for {key} must be > 0, got {value}")
        if self.noise is not None:
            for key, eps in self.noise.items():
                if 1.0 + eps <= 0:
                    raise NonPositiveRateError(f"noise factor 1+eps <= 0 at {key}")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")

    def ages(self) -> tuple[str, ...]:
        return tuple(sorted({age for _, age in self.r0.keys()}))

    def covariates(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(cov for _, cov in self.beta.keys()))

    def beta_vector(self, age: str, names: Sequence[str]) -> np.ndarray:
        """Effects for one age group aligned to ``names`` (0 where absent)."""
        return np.array([self.beta.get((age, n), 0.0) for n in names])

    def validate_positive(self, panel: CovariatePanel, ages: Iterable[str] | None = None) -> None:
        """Reject effect sets whose factors can reach <= 0 on the panel's range."""
        ages = tuple(ages) if ages is not None else self.ages()
        for age in ages:
            for j, name in enumerate(panel.names):
                b = self.beta.get((age, name), 0.0)
                if b == 0.0:
                    continue
                col = panel.values[:, :, j]
                factors = 1.0 + b * col[~np.isnan(col)]
                if factors.size and factors.min() <= 0:
                    raise NonPositiveRateError(
                        f"effect of {name!r} on age {age!r} yields factor <= 0 "
                        f"within observed covariate range"
                    )


def reproductive_number(
    effects: EffectSet, x: Mapping[str, float], key, day: date
) -> float:
    """Instantaneous reproductive number for one compartment-day.

    ``key`` is any object with ``location`` and ``age_group`` attributes (or a
    (location, age_group) tuple); ``x`` maps covariate name to value.
    """
    location, age = (key.location, key.age_group) if hasattr(key, "location") else key
    try:
        r = effects.r0[(location, age)]
    except KeyError:
        raise KeyError(f"no R0 for compartment ({location!r}, {age!r})") from None
    for name, value in x.items():
        b = effects.beta.get((age, name), 0.0)
        factor = 1.0 + b * value
        if factor <= 0:
            raise NonPositiveRateError(
                f"covariate {name!r} (beta={b}, x={value}) drives R <= 0 "
                f"for ({location!r}, {age!r}) on {day}"
            )
        r *= factor
    if effects.noise is not None:
        eps = effects.noise.get((location, day), 0.0)
        factor = 1.0 + eps
        if factor <= 0:
            raise NonPositiveRateError(f"noise factor <= 0 at ({location!r}, {day})")
        r *= factor
    return r


def factor_matrix(
    effects: EffectSet, panel: CovariatePanel, age: str, location_indices=None
) -> np.ndarray:
    """prod_j (1 + beta_j x_j) for one age over (location, day), vectorized."""
    betas = effects.beta_vector(age, panel.names)
    vals = panel.values if location_indices is None else panel.values[location_indices]
    factors = 1.0 + vals * betas
    if factors.size and factors.min() <= 0:
        j = int(np.argwhere(factors <= 0)[0][2])
        raise NonPositiveRateError(
            f"effect of {panel.names[j]!r} on age {age!r} yields factor <= 0"
        )
    return factors.prod(axis=2)


@dataclass(frozen=True)
class TotalEffectSeries:
    """Per-day mean multiplier of a covariate group on transmission."""

    dates: tuple[date, ...]
    multiplier: np.ndarray

    @property
    def reduction(self) -> np.ndarray:
        return 1.0 - self.multiplier


def total_effect(
    effects: EffectSet,
    panel: CovariatePanel,
    covariate_group: Iterable[str],
    age_weighting: Mapping[str, float],
) -> TotalEffectSeries:
    """Average multiplicative impact of a covariate group per day.

    For each day, the product over the group's factors is averaged across
    locations, then across age groups with the given population weights.
    """
    group = tuple(covariate_group)
    if not group:
        raise ValueError("covariate group must not be empty")
    for name in group:
        panel.covariate_index(name)
    weights = np.array([age_weighting[a] for a in age_weighting], dtype=float)
    weights = weights / weights.sum()
    per_day = np.zeros(panel.n_days)
    cols = [panel.covariate_index(n) for n in group]
    sub = panel.values[:, :, cols]
    for w, age in zip(weights, age_weighting):
        betas = np.array([effects.beta.get((age, n), 0.0) for n in group])
        factors = (1.0 + sub * betas).prod(axis=2)  # (n_loc, n_days)
        per_day += w * factors.mean(axis=0)
    return TotalEffectSeries(dates=tuple(panel.dates), multiplier=per_day)


@dataclass(frozen=True)
class TracingEffect:
    """Per-infectious-individual reduction extrapolated from the traced-ratio effect."""

    reduction: float
    capped: bool
    no_effect: bool


def individual_tracing_effect(beta_trace: float, reporting_rate: float) -> TracingEffect:
    """Extrapolate the traced-ratio effect to all infections.

    The traced ratio is measured among reported cases only, so the effect on
    an infectious individual is the estimate divided by the reporting rate,
    truncated at a 100% reduction.
    """
    if not 0 < reporting_rate <= 1:
        raise ValueError(f"reporting rate must lie in (0, 1], got {reporting_rate}")
    if beta_trace >= 0:
        return TracingEffect(reduction=0.0, capped=False, no_effect=True)
    raw = -beta_trace / reporting_rate
    return TracingEffect(reduction=min(1.0, raw), capped=raw > 1.0, no_effect=False)


@dataclass(frozen=True)
class SeasonalEffect:
    """Smoothed per-day-of-year weather multiplier and its peak-to-trough ratio."""

    multiplier: np.ndarray
    peak_ratio: float


def seasonal_extrapolation(
    effects: EffectSet,
    climatology: Mapping[str, np.ndarray],
    standardization: Mapping[str, tuple[float, float]],
    smoothing: int = 14,
    age_weights: Mapping[str, float] | None = None,
) -> SeasonalEffect:
    """Extrapolate weather effects over a climatological year.

    ``climatology`` maps each weather covariate name to its raw per-day value
    over a full year (>= 365 entries); values are standardized with the
    stored fitting-sample stats before the effect factors are applied. The
    multiplier series is smoothed with a circular rolling mean of width
    ``smoothing`` days, and the peak ratio is max/min of the smoothed series.
    """
    names = tuple(climatology)
    if not names:
        raise ValueError("climatology must cover at least one weather covariate")
    n = {len(np.asarray(v)) for v in climatology.values()}
    if len(n) != 1 or next(iter(n)) < 365:
        raise ValueError("climatology series must all cover a full year (>= 365 days)")
    n_days = next(iter(n))
    ages = tuple(age_weights) if age_weights else effects.ages()
    weights = (
        np.array([age_weights[a] for a in ages], dtype=float)
        if age_weights
        else np.ones(len(ages))
    )
    weights = weights / weights.sum()

    multiplier = np.zeros(n_days)
    for w, age in zip(weights, ages):
        per_age = np.ones(n_days)
        for name in names:
            raw = np.asarray(climatology[name], dtype=float)
            if np.any(np.isnan(raw)):
                raise ValueError(f"climatology for {name!r} has missing days")
            mean, sd = standardization[name]
            z = (raw - mean) / sd
            per_age *= 1.0 + effects.beta.get((age, name), 0.0) * z
        multiplier += w * per_age

    if smoothing > 1:
        kernel = np.ones(smoothing) / smoothing
        padded = np.concatenate([multiplier[-(smoothing - 1):], multiplier])
        smooth = np.convolve(padded, kernel, mode="valid")
        # rotate so the window is centred on each day of the cyclic year
        smooth = np.roll(smooth, -(smoothing // 2))
    else:
        smooth = multiplier
    return SeasonalEffect(multiplier=smooth, peak_ratio=float(smooth.max() / smooth.min()))
