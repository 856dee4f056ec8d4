"""
Forward simulation of latent infections and symptom-onset cases.

Each (location, age-group) compartment evolves independently: new infections
at day t are a negative binomial draw with mean R_t * L_t, where the viral
load L_t is the generation-time-weighted sum of past infections. Under the
per-individual dispersion law the NB dispersion scales with the load
(dispersion Psi * L_t); the constant-dispersion variant keeps it at Psi,
which is the assumption implicit in negative binomial regression. Observed
cases are a Poisson thinning of past infections through the incubation
distribution and the reporting rate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date, timedelta

import numpy as np

from .distributions import DelayDistribution, InvalidParameterError, nb_sample
from .effects import CovariatePanel, EffectSet, factor_matrix

AGE_GROUPS = ("0-4", "5-14", "15-34", "35-59", "60-79", "80+")

VARIANTS = ("per-individual", "constant")

CASE_CSV_HEADER = ["onset_date", "report_date", "age_group", "location", "died"]


@dataclass(frozen=True, order=True)
class CompartmentKey:
    """One (location, age group) compartment."""

    location: str
    age_group: str

    def __post_init__(self):
        if self.age_group not in AGE_GROUPS:
            raise ValueError(
                f"unknown age group {self.age_group!r}; expected one of {AGE_GROUPS}"
            )


@dataclass
class LatentTrajectory:
    """Latent state of one compartment, including the seeded warm-up days.

    Arrays are aligned to days starting at ``start_day``; the first ``d_init``
    entries are the seeded initialization, where r_values is NaN because no
    transmission step generated them.
    """

    start_day: date
    infections: np.ndarray
    viral_load: np.ndarray
    r_values: np.ndarray

    def __post_init__(self):
        n = len(self.infections)
        if len(self.viral_load) != n or len(self.r_values) != n:
            raise ValueError("trajectory arrays must have equal length")
        if np.any(self.infections < 0):
            raise ValueError("infections must be non-negative")
        finite_r = self.r_values[~np.isnan(self.r_values)]
        if finite_r.size and finite_r.min() <= 0:
            raise ValueError("r_values must be > 0 where defined")


@dataclass
class ModelParams:
    """Full parameter state of the generative model.

    ``psi`` is the dispersion per age group; ``seeds`` optionally pins the
    initialization (otherwise drawn from the exponential prior with mean
    init_mean / d_init per seeded day); ``latent`` carries per-compartment
    infection counts over the observation window when evaluating likelihoods.
    """

    effects: EffectSet
    psi: dict[str, float]
    reporting_rate: float
    gen_time: DelayDistribution
    incubation: DelayDistribution
    init_mean: float = 4.0
    d_init: int = 6
    seeds: dict[CompartmentKey, np.ndarray] | None = None
    latent: dict[CompartmentKey, np.ndarray] | None = None

    def __post_init__(self):
        if not 0 < self.reporting_rate <= 1:
            raise InvalidParameterError(
                f"reporting rate must lie in (0, 1], got {self.reporting_rate}"
            )
        for age, psi in self.psi.items():
            if psi <= 0:
                raise InvalidParameterError(f"dispersion for age {age!r} must be > 0")
        if self.init_mean <= 0:
            raise InvalidParameterError("init_mean must be > 0")

    def compartments(self) -> list[CompartmentKey]:
        return sorted(CompartmentKey(loc, age) for loc, age in self.effects.r0)


def viral_load(history, d_i: DelayDistribution, t: int) -> float:
    """Generation-time-weighted sum of infections before day t.

    ``history`` is an array of daily infection counts; entry ``t - 1`` is the
    most recent day contributing. Lags beyond the distribution's cap
    contribute nothing, as does anything before the start of the history.
    """
    history = np.asarray(history)
    if history.size == 0:
        return 0.0
    lo = max(0, t - d_i.l_max)
    if lo >= t:
        return 0.0
    chunk = history[lo:t]
    weights = d_i.pmf[t - lo - 1 :: -1][: len(chunk)]
    return float(np.dot(weights, chunk[-len(weights):]))


def step(load: float, r_t: float, dispersion: float, rng: np.random.Generator) -> int:
    """One transmission step under per-individual dispersion: NB(R L, Psi L)."""
    if load < 0:
        raise InvalidParameterError("load must be >= 0")
    if r_t <= 0 or dispersion <= 0:
        raise InvalidParameterError("r_t and dispersion must be > 0")
    if load == 0:
        return 0
    return int(nb_sample(r_t * load, dispersion * load, rng))


def step_constant_dispersion(
    load: float, r_t: float, dispersion: float, rng: np.random.Generator
) -> int:
    """One transmission step with load-independent dispersion: NB(R L, Psi)."""
    if load < 0:
        raise InvalidParameterError("load must be >= 0")
    if r_t <= 0 or dispersion <= 0:
        raise InvalidParameterError("r_t and dispersion must be > 0")
    if load == 0:
        return 0
    return int(nb_sample(r_t * load, dispersion, rng))


def expected_cases(
    latent: LatentTrajectory, d_s: DelayDistribution, r: float, t: int
) -> float:
    """Poisson intensity of observed cases at day index t of the trajectory."""
    if not 0 < r <= 1:
        raise InvalidParameterError(f"reporting rate must lie in (0, 1], got {r}")
    return r * viral_load(latent.infections, d_s, t)


@dataclass
class SimulatedPanel:
    """Output of one forward simulation across compartments."""

    start_day: date
    horizon: int
    d_init: int
    keys: tuple[CompartmentKey, ...]
    latent: dict[CompartmentKey, LatentTrajectory]
    expected_cases: dict[CompartmentKey, np.ndarray]
    sampled_cases: dict[CompartmentKey, np.ndarray]
    extinction_day: dict[CompartmentKey, int | None]
    noise: dict[tuple[str, date], float] | None = None

    def dates(self) -> list[date]:
        return [self.start_day + timedelta(days=t) for t in range(self.horizon)]

    def case_count_matrix(self) -> np.ndarray:
        """Sampled cases as an int array of shape (n_compartments, horizon)."""
        return np.array([self.sampled_cases[k] for k in self.keys], dtype=np.int64)

    def write_case_csv(self, path, report_delay: int = 4) -> None:
        """Expand sampled counts into line-list rows (one row per case)."""
        days = self.dates()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CASE_CSV_HEADER)
            for key in self.keys:
                counts = self.sampled_cases[key]
                for t in range(self.horizon):
                    onset = days[t]
                    report = onset + timedelta(days=report_delay)
                    for _ in range(int(counts[t])):
                        writer.writerow(
                            [onset.isoformat(), report.isoformat(), key.age_group, key.location, 0]
                        )

    def write_latent_csv(self, path) -> None:
        """Per-(compartment, day) latent state, seeded days included."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["location", "age_group", "date", "infections", "viral_load", "r_value"]
            )
            for key in self.keys:
                traj = self.latent[key]
                for i in range(len(traj.infections)):
                    day = traj.start_day + timedelta(days=i)
                    r_val = traj.r_values[i]
                    writer.writerow(
                        [
                            key.location,
                            key.age_group,
                            day.isoformat(),
                            int(traj.infections[i]),
                            repr(float(traj.viral_load[i])),
                            "" if np.isnan(r_val) else repr(float(r_val)),
                        ]
                    )


def _draw_seeds(init_mean: float, d_init: int, rng: np.random.Generator) -> np.ndarray:
    raw = rng.exponential(scale=init_mean / d_init, size=d_init)
    return np.maximum(np.rint(raw), 0.0).astype(np.int64)


def simulate(
    params: ModelParams,
    covariates: CovariatePanel,
    horizon: int,
    variant: str = "per-individual",
    rng: np.random.Generator | None = None,
) -> SimulatedPanel:
    """Simulate the full panel forward over ``horizon`` days.

    Compartments are independent (no importation); each owns a child random
    stream spawned from ``rng`` so results do not depend on iteration order.
    Cases are sampled from the Poisson measurement law. A compartment whose
    viral load hits zero stays extinct; the first such day is reported.
    """
    if variant not in VARIANTS:
        raise InvalidParameterError(f"variant must be one of {VARIANTS}, got {variant!r}")
    if horizon < 0:
        raise InvalidParameterError("horizon must be >= 0")
    if rng is None:
        rng = np.random.default_rng()
    covariates.require_complete(horizon)
    keys = params.compartments()
    params.effects.validate_positive(covariates, {k.age_group for k in keys})

    streams = rng.spawn(len(keys) + 1)
    noise_stream = streams[-1]

    noise = params.effects.noise
    if noise is None and params.effects.noise_sd > 0:
        noise = _draw_noise(
            params.effects.noise_sd, covariates, horizon, noise_stream
        )

    d_init = params.d_init
    w_i = params.gen_time
    w_s = params.incubation
    stepper = step if variant == "per-individual" else step_constant_dispersion
    seed_start = covariates.start - timedelta(days=d_init)
    days = [covariates.start + timedelta(days=t) for t in range(horizon)]

    latent: dict[CompartmentKey, LatentTrajectory] = {}
    expected: dict[CompartmentKey, np.ndarray] = {}
    sampled: dict[CompartmentKey, np.ndarray] = {}
    extinct: dict[CompartmentKey, int | None] = {}

    for key, stream in zip(keys, streams):
        loc_i = covariates.location_index(key.location)
        factors = factor_matrix(params.effects, covariates, key.age_group, [loc_i])[0, :horizon]
        r0 = params.effects.r0[(key.location, key.age_group)]
        psi = params.psi[key.age_group]

        if params.seeds is not None and key in params.seeds:
            seeds = np.asarray(params.seeds[key], dtype=np.int64)
            if seeds.shape != (d_init,):
                raise InvalidParameterError(
                    f"seeds for {key} must have length d_init={d_init}"
                )
        else:
            seeds = _draw_seeds(params.init_mean, d_init, stream)

        inf = np.zeros(d_init + horizon, dtype=np.int64)
        inf[:d_init] = seeds
        loads = np.zeros(d_init + horizon)
        rvals = np.full(d_init + horizon, np.nan)
        exp_cases = np.zeros(horizon)
        obs_cases = np.zeros(horizon, dtype=np.int64)
        extinction = None

        for t in range(horizon):
            u = d_init + t
            load = viral_load(inf, w_i, u)
            loads[u] = load
            r_t = r0 * factors[t]
            if noise is not None:
                r_t *= 1.0 + noise.get((key.location, days[t]), 0.0)
            rvals[u] = r_t
            inf[u] = stepper(load, r_t, psi, stream)
            # extinct once the whole lookback window is empty: no source of
            # load remains, so zero load is permanent from here on
            if extinction is None and not inf[max(0, u - w_i.l_max):u].any():
                extinction = t
            exp_cases[t] = params.reporting_rate * viral_load(inf, w_s, u)
            obs_cases[t] = stream.poisson(exp_cases[t])

        for u in range(d_init):
            loads[u] = viral_load(inf, w_i, u)

        latent[key] = LatentTrajectory(
            start_day=seed_start, infections=inf, viral_load=loads, r_values=rvals
        )
        expected[key] = exp_cases
        sampled[key] = obs_cases
        extinct[key] = extinction

    return SimulatedPanel(
        start_day=covariates.start,
        horizon=horizon,
        d_init=d_init,
        keys=tuple(keys),
        latent=latent,
        expected_cases=expected,
        sampled_cases=sampled,
        extinction_day=extinct,
        noise=noise,
    )


def _draw_noise(
    noise_sd: float,
    covariates: CovariatePanel,
    horizon: int,
    rng: np.random.Generator,
) -> dict[tuple[str, date], float]:
    """One noise factor per (location, day), shared across age groups.

    Draws are rejected until 1 + eps > 0 so the rate stays positive.
    """
    noise = {}
    for loc in covariates.locations:
        for t in range(horizon):
            eps = rng.normal(0.0, noise_sd)
            while 1.0 + eps <= 0:
                eps = rng.normal(0.0, noise_sd)
            noise[(loc, covariates.start + timedelta(days=t))] = eps
    return noise
