"""
Line-list ingestion and covariate construction for surveillance panels.

Input files are plain CSV (schemas below); cases are aggregated by symptom
onset into (location, age group, day) counts. Records without an onset date
are kept flagged as asymptomatic for diagnostics but never enter the model's
case counts.

CSV schemas (ISO-8601 dates, UTF-8):
  cases:         onset_date,report_date,age_group,location,died
  population:    location,age_group,population
  weather:       location,date,temp_avg_c,rel_humidity_pct
  interventions: location,covariate,start_date,end_date   (end empty = open)
  calendar:      location,date,holiday
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date, timedelta
from typing import Iterable, Sequence

import numpy as np

from .effects import CovariatePanel, standardize
from .renewal import AGE_GROUPS, CompartmentKey

CASE_HEADER = ["onset_date", "report_date", "age_group", "location", "died"]

# days relative to symptom onset during which a case counts as infectious
INFECTIOUS_FROM = -1
INFECTIOUS_TO = 6

WEEKDAY_DUMMIES = ("weekday_tue", "weekday_wed", "weekday_thu",
                   "weekday_fri", "weekday_sat", "weekday_sun")


class CaseValidationError(ValueError):
    """A case CSV row violates the schema; carries the offending line number."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


@dataclass(frozen=True)
class CaseRecord:
    """One line-list entry; onset_date None marks an asymptomatic-flagged record."""

    onset_date: date | None
    report_date: date
    age_group: str
    location: str
    died: bool

    @property
    def asymptomatic(self) -> bool:
        return self.onset_date is None


def _parse_date(raw: str, line: int, column: str) -> date:
    try:
        return date.fromisoformat(raw)
    except ValueError:
        raise CaseValidationError(line, f"bad {column} {raw!r}") from None


def load_cases(path) -> list[CaseRecord]:
    """Parse a case CSV, validating every row.

    Rows with an empty onset_date are retained flagged asymptomatic. Raises
    CaseValidationError (with line number) on malformed rows, unknown age
    brackets, or onset after report.
    """
    records: list[CaseRecord] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CaseValidationError(1, "empty file, expected header") from None
        if [h.strip() for h in header] != CASE_HEADER:
            raise CaseValidationError(1, f"expected header {CASE_HEADER}, got {header}")
        for line, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(CASE_HEADER):
                raise CaseValidationError(line, f"expected {len(CASE_HEADER)} fields, got {len(row)}")
            onset_raw, report_raw, age, location, died_raw = (cell.strip() for cell in row)
            onset = _parse_date(onset_raw, line, "onset_date") if onset_raw else None
            report = _parse_date(report_raw, line, "report_date")
            if age not in AGE_GROUPS:
                raise CaseValidationError(line, f"unknown age bracket {age!r}")
            if not location:
                raise CaseValidationError(line, "empty location")
            if died_raw not in ("0", "1"):
                raise CaseValidationError(line, f"died must be 0 or 1, got {died_raw!r}")
            if onset is not None and report < onset:
                raise CaseValidationError(line, f"report date {report} before onset {onset}")
            records.append(
                CaseRecord(onset_date=onset, report_date=report, age_group=age,
                           location=location, died=died_raw == "1")
            )
    return records


def load_populations(path) -> dict[tuple[str, str], float]:
    """Read the population CSV into a (location, age_group) -> size map."""
    pops: dict[tuple[str, str], float] = {}
    with open(path, newline="") as fh:
        for line, row in enumerate(csv.DictReader(fh), start=2):
            age = row["age_group"].strip()
            if age not in AGE_GROUPS:
                raise CaseValidationError(line, f"unknown age bracket {age!r}")
            value = float(row["population"])
            if value <= 0:
                raise CaseValidationError(line, f"population must be > 0, got {value}")
            pops[(row["location"].strip(), age)] = value
    return pops


def load_weather(path) -> dict[tuple[str, date], tuple[float, float]]:
    """Read weather CSV into (location, date) -> (temperature, humidity)."""
    out: dict[tuple[str, date], tuple[float, float]] = {}
    with open(path, newline="") as fh:
        for line, row in enumerate(csv.DictReader(fh), start=2):
            day = _parse_date(row["date"].strip(), line, "date")
            out[(row["location"].strip(), day)] = (
                float(row["temp_avg_c"]), float(row["rel_humidity_pct"])
            )
    return out


def load_interventions(path) -> list[tuple[str, str, date, date | None]]:
    """Read intervention CSV rows (location, covariate, start, end-or-None)."""
    out = []
    with open(path, newline="") as fh:
        for line, row in enumerate(csv.DictReader(fh), start=2):
            start = _parse_date(row["start_date"].strip(), line, "start_date")
            end_raw = (row.get("end_date") or "").strip()
            end = _parse_date(end_raw, line, "end_date") if end_raw else None
            if end is not None and end < start:
                raise CaseValidationError(line, f"end {end} before start {start}")
            out.append((row["location"].strip(), row["covariate"].strip(), start, end))
    return out


def load_calendar(path) -> dict[tuple[str, date], int]:
    """Read holiday calendar CSV into (location, date) -> 0/1."""
    out: dict[tuple[str, date], int] = {}
    with open(path, newline="") as fh:
        for line, row in enumerate(csv.DictReader(fh), start=2):
            day = _parse_date(row["date"].strip(), line, "date")
            flag = row["holiday"].strip()
            if flag not in ("0", "1"):
                raise CaseValidationError(line, f"holiday must be 0 or 1, got {flag!r}")
            out[(row["location"].strip(), day)] = int(flag)
    return out


def aggregate_case_counts(
    records: Iterable[CaseRecord],
    locations: Sequence[str],
    age_groups: Sequence[str],
    start: date,
    n_days: int,
    by: str = "onset",
) -> np.ndarray:
    """Count cases into an int array of shape (n_locations, n_ages, n_days).

    ``by`` selects the dating convention: "onset" (asymptomatic records are
    skipped) or "report". Records outside the window or outside the given
    location/age sets are ignored.
    """
    if by not in ("onset", "report"):
        raise ValueError("by must be 'onset' or 'report'")
    loc_idx = {loc: i for i, loc in enumerate(locations)}
    age_idx = {age: i for i, age in enumerate(age_groups)}
    counts = np.zeros((len(locations), len(age_groups), n_days), dtype=np.int64)
    for rec in records:
        day = rec.onset_date if by == "onset" else rec.report_date
        if day is None:
            continue
        li = loc_idx.get(rec.location)
        ai = age_idx.get(rec.age_group)
        t = (day - start).days
        if li is None or ai is None or not 0 <= t < n_days:
            continue
        counts[li, ai, t] += 1
    return counts


@dataclass
class Panel:
    """Estimation-ready panel: onset case counts, populations, covariates."""

    locations: tuple[str, ...]
    age_groups: tuple[str, ...]
    start: date
    case_counts: np.ndarray          # (n_loc, n_age, n_days)
    populations: np.ndarray          # (n_loc, n_age)
    covariates: CovariatePanel

    def __post_init__(self):
        n_loc, n_age, n_days = self.case_counts.shape
        if (n_loc, n_age) != (len(self.locations), len(self.age_groups)):
            raise ValueError("case_counts shape does not match locations/age groups")
        if self.populations.shape != (n_loc, n_age):
            raise ValueError("populations shape does not match locations/age groups")
        if np.any(self.case_counts < 0):
            raise ValueError("case counts must be >= 0")
        if np.any(self.populations <= 0):
            raise ValueError("populations must be > 0")
        if self.covariates.locations != self.locations or self.covariates.start != self.start:
            raise ValueError("covariate panel must align with the case panel")
        self.covariates.require_complete(n_days)

    @property
    def n_days(self) -> int:
        return self.case_counts.shape[2]

    def compartments(self) -> list[CompartmentKey]:
        return [CompartmentKey(loc, age) for loc in self.locations for age in self.age_groups]

    def compartment_counts(self) -> np.ndarray:
        """Counts flattened to (n_loc * n_age, n_days), matching compartments()."""
        n_loc, n_age, n_days = self.case_counts.shape
        return self.case_counts.reshape(n_loc * n_age, n_days)


def incidence_information(
    report_counts: np.ndarray, populations: np.ndarray, day: int
) -> np.ndarray:
    """Publicly known 7-day incidence signal effective on ``day``.

    ``report_counts`` is (n_locations, n_days) by report date; the value uses
    the week ending the previous day (reports influence behaviour the
    following day): log10(1 + weekly cases / population * 1e5). Days before
    the series start contribute nothing, and a week with no reported cases
    yields exactly 0.
    """
    report_counts = np.asarray(report_counts)
    populations = np.asarray(populations, dtype=float)
    if np.any(populations <= 0):
        raise ValueError("populations must be > 0")
    lo = max(0, day - 7)
    weekly = report_counts[:, lo:day].sum(axis=1) if day > 0 else np.zeros(len(populations))
    return np.log10(1.0 + weekly / populations * 1e5)


def cumulative_incidence(
    case_counts: np.ndarray, populations: np.ndarray, day: int, lag: int = 14
) -> np.ndarray:
    """Cumulative cases per population in percent, lagged by ``lag`` days.

    Location-level (counts passed in should already ignore age). Days before
    anything was reported yield 0.
    """
    case_counts = np.asarray(case_counts)
    populations = np.asarray(populations, dtype=float)
    upto = day - lag + 1  # cases through day-lag inclusive
    if upto <= 0:
        return np.zeros(case_counts.shape[0])
    return 100.0 * case_counts[:, :upto].sum(axis=1) / populations


@dataclass(frozen=True)
class TracedRatio:
    value: float
    sparse: bool


def traced_ratio(records: Iterable[CaseRecord], location: str, day: date) -> TracedRatio:
    """Fraction of the infectious cases on ``day`` already reported by then.

    A case with onset o is infectious from o-1 through o+6. Only onset-dated
    records enter; an empty denominator yields 0 with the sparse flag set.
    """
    infectious = 0
    traced = 0
    for rec in records:
        if rec.onset_date is None or rec.location != location:
            continue
        offset = (day - rec.onset_date).days
        if INFECTIOUS_FROM <= offset <= INFECTIOUS_TO:
            infectious += 1
            if rec.report_date <= day:
                traced += 1
    if infectious == 0:
        return TracedRatio(value=0.0, sparse=True)
    return TracedRatio(value=traced / infectious, sparse=False)


def weekly_growth_rates(case_counts: np.ndarray, window: int = 7):
    """Week-over-week growth of case counts per location.

    Weeks are consecutive non-overlapping blocks of ``window`` days from the
    series start (trailing partial week dropped). Returns (rates, prev_counts)
    of shape (n_locations, n_weeks - 1); rates are NaN where the prior week
    had no cases.
    """
    case_counts = np.asarray(case_counts)
    n_loc, n_days = case_counts.shape
    n_weeks = n_days // window
    if n_weeks < 2:
        raise ValueError(f"need at least two full {window}-day windows, have {n_weeks}")
    weekly = case_counts[:, : n_weeks * window].reshape(n_loc, n_weeks, window).sum(axis=2)
    prev = weekly[:, :-1].astype(float)
    cur = weekly[:, 1:].astype(float)
    rates = np.divide(cur, prev, out=np.full_like(cur, np.nan), where=prev > 0)
    return rates, prev


@dataclass
class Diagnostics:
    """Descriptive surveillance diagnostics keyed by (age_group, 'YYYY-MM')."""

    cfr: dict[tuple[str, str], float]
    cfr_counts: dict[tuple[str, str], tuple[int, int]]          # (deaths, cases)
    asymptomatic_ratio: dict[tuple[str, str], float]
    asymptomatic_counts: dict[tuple[str, str], tuple[int, int]]  # (flagged, total)


def diagnostics(records: Iterable[CaseRecord]) -> Diagnostics:
    """Symptomatic case fatality rate and asymptomatic ratio per age and month.

    CFR cells use symptom-onset months and onset-dated cases only; cells with
    zero denominator are omitted from the rate maps but their counts are kept.
    The asymptomatic ratio uses report-date months, since flagged records have
    no onset.
    """
    deaths: dict[tuple[str, str], int] = {}
    cases: dict[tuple[str, str], int] = {}
    flagged: dict[tuple[str, str], int] = {}
    total: dict[tuple[str, str], int] = {}
    for rec in records:
        rep_key = (rec.age_group, f"{rec.report_date.year:04d}-{rec.report_date.month:02d}")
        total[rep_key] = total.get(rep_key, 0) + 1
        if rec.asymptomatic:
            flagged[rep_key] = flagged.get(rep_key, 0) + 1
            continue
        key = (rec.age_group, f"{rec.onset_date.year:04d}-{rec.onset_date.month:02d}")
        cases[key] = cases.get(key, 0) + 1
        if rec.died:
            deaths[key] = deaths.get(key, 0) + 1
    cfr = {k: deaths.get(k, 0) / n for k, n in cases.items() if n > 0}
    cfr_counts = {k: (deaths.get(k, 0), n) for k, n in cases.items()}
    asym = {k: flagged.get(k, 0) / n for k, n in total.items() if n > 0}
    asym_counts = {k: (flagged.get(k, 0), n) for k, n in total.items()}
    return Diagnostics(cfr=cfr, cfr_counts=cfr_counts,
                       asymptomatic_ratio=asym, asymptomatic_counts=asym_counts)


def build_covariates(
    locations: Sequence[str],
    start: date,
    n_days: int,
    records: Iterable[CaseRecord] | None = None,
    populations: dict[tuple[str, str], float] | None = None,
    weather: dict[tuple[str, date], tuple[float, float]] | None = None,
    interventions: list[tuple[str, str, date, date | None]] | None = None,
    calendar: dict[tuple[str, date], int] | None = None,
    weekday: bool = True,
    information: bool = True,
    cumulative: bool = True,
    traced: bool = True,
    standardized: Sequence[str] = ("incidence_info", "temperature", "humidity"),
) -> CovariatePanel:
    """Assemble the covariate panel from raw inputs.

    Constructed covariates: intervention dummies (active on [start, end]),
    one holiday dummy, six weekday dummies (Monday is the reference),
    temperature and humidity from weather, and the three case-derived series
    (incidence_info, cumulative_incidence, traced_ratio). Real-valued
    covariates listed in ``standardized`` are z-scored in sample.
    """
    records = list(records) if records is not None else []
    locations = tuple(locations)
    days = [start + timedelta(days=t) for t in range(n_days)]
    names: list[str] = []
    kinds: dict[str, str] = {}
    columns: list[np.ndarray] = []

    def add(name: str, kind: str, col: np.ndarray):
        names.append(name)
        kinds[name] = kind
        columns.append(col)

    if interventions:
        for cov in sorted({cov for _, cov, _, _ in interventions}):
            col = np.zeros((len(locations), n_days))
            for loc, name, istart, iend in interventions:
                if name != cov or loc not in locations:
                    continue
                li = locations.index(loc)
                t0 = max(0, (istart - start).days)
                t1 = n_days if iend is None else min(n_days, (iend - start).days + 1)
                if t0 < t1:
                    col[li, t0:t1] = 1.0
            add(cov, "dummy", col)

    if calendar is not None:
        col = np.zeros((len(locations), n_days))
        for li, loc in enumerate(locations):
            for t, day in enumerate(days):
                col[li, t] = calendar.get((loc, day), 0)
        add("holiday", "dummy", col)

    if weekday:
        iso = np.array([d.isoweekday() for d in days])  # 1=Mon .. 7=Sun
        for k, name in enumerate(WEEKDAY_DUMMIES, start=2):
            col = np.tile((iso == k).astype(float), (len(locations), 1))
            add(name, "dummy", col)

    if weather is not None:
        temp = np.full((len(locations), n_days), np.nan)
        hum = np.full((len(locations), n_days), np.nan)
        for li, loc in enumerate(locations):
            for t, day in enumerate(days):
                if (loc, day) in weather:
                    temp[li, t], hum[li, t] = weather[(loc, day)]
        add("temperature", "real", temp)
        add("humidity", "real", hum)

    if records and populations is not None:
        ages = sorted({age for _, age in populations})
        pop_loc = np.array(
            [sum(populations.get((loc, age), 0.0) for age in ages) for loc in locations]
        )
        if information:
            by_report = aggregate_case_counts(records, locations, ages, start, n_days,
                                              by="report").sum(axis=1)
            col = np.stack(
                [incidence_information(by_report, pop_loc, t) for t in range(n_days)], axis=1
            )
            add("incidence_info", "real", col)
        if cumulative:
            by_onset = aggregate_case_counts(records, locations, ages, start, n_days,
                                             by="onset").sum(axis=1)
            col = np.stack(
                [cumulative_incidence(by_onset, pop_loc, t) for t in range(n_days)], axis=1
            )
            add("cumulative_incidence", "real", col)
        if traced:
            col = np.zeros((len(locations), n_days))
            for li, loc in enumerate(locations):
                loc_records = [r for r in records if r.location == loc]
                for t, day in enumerate(days):
                    col[li, t] = traced_ratio(loc_records, loc, day).value
            add("traced_ratio", "real", col)

    values = (
        np.stack(columns, axis=2)
        if columns
        else np.zeros((len(locations), n_days, 0))
    )
    panel = CovariatePanel(locations=locations, start=start, names=tuple(names),
                           kinds=kinds, values=values)
    for name in standardized:
        if name in panel.names:
            panel = standardize(panel, name)
    return panel


def build_panel(
    records: Iterable[CaseRecord],
    populations: dict[tuple[str, str], float],
    start: date,
    n_days: int,
    covariates: CovariatePanel,
    age_groups: Sequence[str] | None = None,
) -> Panel:
    """Bind aggregated onset counts, populations, and covariates into a Panel."""
    locations = covariates.locations
    if age_groups is None:
        age_groups = tuple(sorted({age for _, age in populations}))
    counts = aggregate_case_counts(records, locations, age_groups, start, n_days)
    pop = np.zeros((len(locations), len(age_groups)))
    for li, loc in enumerate(locations):
        for ai, age in enumerate(age_groups):
            if (loc, age) not in populations:
                raise ValueError(f"missing population for ({loc!r}, {age!r})")
            pop[li, ai] = populations[(loc, age)]
    return Panel(
        locations=locations, age_groups=tuple(age_groups), start=start,
        case_counts=counts, populations=pop, covariates=covariates,
    )
