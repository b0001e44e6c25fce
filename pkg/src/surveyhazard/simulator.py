"""Synthetic surveys with group-specific piecewise-constant hazards.

Group 0 responds with baseline hazard ``lambda0(t)``; group 1 with
``rho(t) * lambda0(t)``. Response times are drawn by inverting the
piecewise-linear cumulative hazard, the survey closes at ``censor_time``,
and labels of early responders go missing independently with probability
``1 - item_response_rate``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
from scipy import optimize

from .domain import MISSING_LABEL, NONWORKING, SurveyDataset, make_calendar

# Positivity: every rate must lie in [POSITIVITY_EPS, 1 / POSITIVITY_EPS].
POSITIVITY_EPS = 1e-9


def _pieces(starts, values, what):
    starts = np.asarray(starts, float)
    values = np.asarray(values, float)
    if starts.ndim != 1 or len(starts) == 0 or len(starts) != len(values):
        raise ValueError(f"{what}: need matching non-empty starts and values")
    if starts[0] != 0.0 or np.any(np.diff(starts) <= 0):
        raise ValueError(f"{what}: starts must begin at 0 and increase")
    if np.any(values < POSITIVITY_EPS) or np.any(values > 1.0 / POSITIVITY_EPS):
        raise ValueError(f"{what}: rates must lie in [{POSITIVITY_EPS}, {1 / POSITIVITY_EPS}]")
    return starts, values


@dataclass(frozen=True, eq=False)
class HazardSpec:
    """Baseline hazard and hazard ratio, both piecewise constant.

    Each is given by piece start times (first must be 0) and values; the last
    value extends to infinity.
    """

    baseline_starts: np.ndarray
    baseline_rates: np.ndarray
    ratio_starts: np.ndarray = field(default_factory=lambda: np.array([0.0]))
    ratio_values: np.ndarray = field(default_factory=lambda: np.array([1.0]))

    def __post_init__(self):
        bs, br = _pieces(self.baseline_starts, self.baseline_rates, "baseline")
        rs, rv = _pieces(self.ratio_starts, self.ratio_values, "ratio")
        for name, v in [("baseline_starts", bs), ("baseline_rates", br),
                        ("ratio_starts", rs), ("ratio_values", rv)]:
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @classmethod
    def constant(cls, rate, ratio=1.0):
        return cls([0.0], [rate], [0.0], [ratio])

    def group_hazard(self, group):
        """Merged piece starts and rates for group 0 or 1."""
        starts = np.union1d(self.baseline_starts, self.ratio_starts)
        base = self.baseline_rates[np.searchsorted(self.baseline_starts, starts, side="right") - 1]
        if group == 0:
            return starts, base
        ratio = self.ratio_values[np.searchsorted(self.ratio_starts, starts, side="right") - 1]
        return starts, base * ratio

    def cumulative_hazard(self, group, t):
        starts, rates = self.group_hazard(group)
        t = np.asarray(t, float)
        cum = np.concatenate([[0.0], np.cumsum(rates[:-1] * np.diff(starts))])
        j = np.searchsorted(starts, t, side="right") - 1
        return cum[j] + rates[j] * (t - starts[j])

    def survival(self, group, t):
        return np.exp(-self.cumulative_hazard(group, t))

    def to_dict(self):
        return {
            "baseline": [[float(s), float(r)] for s, r in zip(self.baseline_starts, self.baseline_rates)],
            "ratio": [[float(s), float(r)] for s, r in zip(self.ratio_starts, self.ratio_values)],
        }

    @classmethod
    def from_dict(cls, data):
        base = np.asarray(data["baseline"], float).reshape(-1, 2)
        ratio = np.asarray(data.get("ratio", [[0.0, 1.0]]), float).reshape(-1, 2)
        return cls(base[:, 0], base[:, 1], ratio[:, 0], ratio[:, 1])


def sample_response_time(h: HazardSpec, group: int, rng, size=None):
    """Draw response times by inverse transform on the cumulative hazard.

    Returns a float (``size=None``) or an array. Times are never censored
    here; compare against the close time downstream.
    """
    starts, rates = h.group_hazard(group)
    cum = np.concatenate([[0.0], np.cumsum(rates[:-1] * np.diff(starts))])
    e = rng.standard_exponential(size)
    j = np.searchsorted(cum, e, side="right") - 1
    t = starts[j] + (e - cum[j]) / rates[j]
    return float(t) if size is None else t


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    population_size: int
    true_pi: float
    hazard: HazardSpec
    censor_time: float
    item_response_rate: float = 1.0
    rng_seed: int = 0
    calendar: Optional[Mapping[int, str]] = None

    def __post_init__(self):
        if not 0 < self.true_pi < 1:
            raise ValueError("true_pi must lie in (0, 1)")
        if not 0 < self.item_response_rate <= 1:
            raise ValueError("item_response_rate must lie in (0, 1]")
        if int(self.population_size) <= 0:
            raise ValueError("population_size must be positive")
        if not self.censor_time > 0:
            raise ValueError("censor_time must be positive")

    def to_dict(self):
        return {
            "population_size": int(self.population_size),
            "true_pi": self.true_pi,
            "hazard": self.hazard.to_dict(),
            "censor_time": self.censor_time,
            "item_response_rate": self.item_response_rate,
            "rng_seed": int(self.rng_seed),
            "calendar": None if self.calendar is None
            else {str(k): v for k, v in sorted(self.calendar.items())},
        }

    @classmethod
    def from_dict(cls, data):
        cal = data.get("calendar")
        return cls(
            population_size=int(data["population_size"]),
            true_pi=float(data["true_pi"]),
            hazard=HazardSpec.from_dict(data["hazard"]),
            censor_time=float(data["censor_time"]),
            item_response_rate=float(data.get("item_response_rate", 1.0)),
            rng_seed=int(data.get("rng_seed", 0)),
            calendar=None if cal is None else {int(k): v for k, v in cal.items()},
        )


@dataclass(frozen=True, eq=False)
class SimulatedSurvey:
    dataset: SurveyDataset
    true_labels: np.ndarray
    true_times: np.ndarray

    @property
    def true_pi(self):
        return float(self.true_labels.mean())

    def truth_dict(self):
        return {
            "population_size": int(len(self.true_labels)),
            "group1_count": int(self.true_labels.sum()),
            "true_pi": self.true_pi,
            "respondents": int(self.dataset.n),
            "labeled_respondents": int(self.dataset.n_labeled),
        }


def simulate_survey(cfg: ScenarioConfig) -> SimulatedSurvey:
    """Draw one synthetic survey and keep the hidden truth alongside.

    Group 1 gets ``floor(N * pi)`` members plus one more with probability
    equal to the fractional remainder. Group sizes, response times and item
    nonresponse come from independent child streams of ``rng_seed``, so
    changing the item response rate never moves the times. An infinite
    ``censor_time`` keeps everyone; the dataset's close time is then set one
    day past the last arrival.
    """
    N = int(cfg.population_size)
    s_groups, s_times, s_items = np.random.SeedSequence(cfg.rng_seed).spawn(3)
    whole = math.floor(N * cfg.true_pi)
    frac = N * cfg.true_pi - whole
    n1 = whole + int(np.random.default_rng(s_groups).random() < frac)
    labels = np.zeros(N, dtype=np.int64)
    labels[:n1] = 1

    rng_t = np.random.default_rng(s_times)
    times = np.empty(N)
    times[:n1] = sample_response_time(cfg.hazard, 1, rng_t, size=n1)
    times[n1:] = sample_response_time(cfg.hazard, 0, rng_t, size=N - n1)

    tau = cfg.censor_time
    if not math.isfinite(tau):
        tau = math.floor(times.max()) + 1.0
    responded = np.flatnonzero(times < tau)
    order = responded[np.argsort(times[responded], kind="stable")]

    keep = np.random.default_rng(s_items).random(len(order)) < cfg.item_response_rate
    obs_labels = np.where(keep, labels[order], MISSING_LABEL)
    ds = SurveyDataset(times[order], obs_labels, keep, N, tau, cfg.calendar)
    labels.setflags(write=False)
    times.setflags(write=False)
    return SimulatedSurvey(ds, labels, times)


# Calibration of the six-week scenario: opens on a Tuesday, 42 days, holidays
# on days 20 and 34 (two Mondays), nonworking days at 3% of the weekday rate.
SIX_WEEK_DAYS = 42
SIX_WEEK_START = "tuesday"
SIX_WEEK_HOLIDAYS = (20, 34)
NONWORKING_RATE_FACTOR = 0.03


def expected_response_rate(true_pi, ratio, cumulative_baseline):
    return ((1 - true_pi) * (1 - math.exp(-cumulative_baseline))
            + true_pi * (1 - math.exp(-ratio * cumulative_baseline)))


def calibrate_cumulative_baseline(true_pi, ratio, response_rate):
    """Cumulative baseline hazard at close giving the target unit response rate."""
    return optimize.brentq(
        lambda L: expected_response_rate(true_pi, ratio, L) - response_rate, 1e-12, 100.0,
        xtol=1e-14,
    )


def day_class_baseline(calendar, total, nonworking_factor=NONWORKING_RATE_FACTOR):
    """Per-day baseline rates with day-of-week multipliers summing to ``total``."""
    days = sorted(calendar)
    weights = np.array([nonworking_factor if calendar[d] in NONWORKING else 1.0 for d in days])
    rates = weights * total / weights.sum()
    return np.asarray(days, float), rates


def six_week_scenario(population_size=100_000, true_pi=0.2, ratio=2.0,
                      response_rate=0.33, item_response_rate=0.95, seed=0):
    """Six-week survey with weekday/weekend/holiday baseline and constant ratio.

    The baseline scale is solved so that the expected unit response rate at
    close equals ``response_rate``.
    """
    calendar = make_calendar(SIX_WEEK_DAYS, SIX_WEEK_START, SIX_WEEK_HOLIDAYS)
    total = calibrate_cumulative_baseline(true_pi, ratio, response_rate)
    starts, rates = day_class_baseline(calendar, total)
    hazard = HazardSpec(starts, rates, [0.0], [ratio])
    return ScenarioConfig(population_size, true_pi, hazard, float(SIX_WEEK_DAYS),
                          item_response_rate, seed, calendar)


# Collider example: (stratum, label) -> (population %, respondent %).
COLLIDER_EXAMPLE = {
    ("supervisor", 0): (40.0, 45.0),
    ("supervisor", 1): (10.0, 45.0),
    ("non-supervisor", 0): (10.0, 8.0),
    ("non-supervisor", 1): (40.0, 2.0),
}


@dataclass(frozen=True, eq=False)
class CollidedPopulation:
    strata: np.ndarray
    labels: np.ndarray
    responded: np.ndarray

    @property
    def true_pi(self):
        return float(self.labels.mean())

    def stratum_names(self):
        return list(dict.fromkeys(self.strata.tolist()))

    def respondent_labels(self):
        return self.labels[self.responded]


def simulate_collider_population(spec: Mapping = COLLIDER_EXAMPLE, population_size=10_000,
                                 response_rate=0.2) -> CollidedPopulation:
    """Materialize a finite population whose respondents follow ``spec``.

    ``spec`` maps ``(stratum, label)`` to ``(population percent, respondent
    percent)``. Each column must sum to 100. The number of respondents is
    ``response_rate * population_size``; a cell whose respondent count
    exceeds its population count makes the table inconsistent.
    """
    pop = np.array([v[0] for v in spec.values()], float)
    resp = np.array([v[1] for v in spec.values()], float)
    if np.any(pop < 0) or np.any(resp < 0):
        raise ValueError("inconsistent table: negative share")
    if not (math.isclose(pop.sum(), 100.0) and math.isclose(resp.sum(), 100.0)):
        raise ValueError("inconsistent table: shares must sum to 100 in both columns")
    n_resp = round(response_rate * population_size)
    pop_counts = np.rint(pop * population_size / 100).astype(int)
    resp_counts = np.rint(resp * n_resp / 100).astype(int)
    if pop_counts.sum() != population_size:
        raise ValueError("inconsistent table: population shares do not give whole counts")
    if np.any(resp_counts > pop_counts):
        raise ValueError("inconsistent table: more respondents than members in a cell")

    strata, labels, responded = [], [], []
    for (stratum, label), n_pop, n_r in zip(spec.keys(), pop_counts, resp_counts):
        strata += [stratum] * n_pop
        labels += [label] * n_pop
        responded += [True] * n_r + [False] * (n_pop - n_r)
    return CollidedPopulation(np.array(strata), np.array(labels, dtype=np.int64),
                              np.array(responded, dtype=bool))
