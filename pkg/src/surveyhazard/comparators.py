"""Reference estimators and daily diagnostic series.

The naive sample proportion, cell poststratification, a linear trend
extrapolation of daily proportions, and the daily hazard ratio implied by an
assumed population proportion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .domain import HOLIDAY, SurveyDataset, is_working_day, make_calendar
from .errors import ValidationError

TREND_LEVEL = 0.05


def sample_proportion(d: SurveyDataset):
    """Labeled mean of the group indicator and its binomial standard error."""
    x = d.labels[d.observed]
    if len(x) == 0:
        raise ValidationError("no labeled records")
    p = float(x.mean())
    return p, math.sqrt(p * (1.0 - p) / len(x))


@dataclass(frozen=True, eq=False)
class StratumTable:
    """Population shares and labeled respondent counts per stratum."""

    names: tuple
    shares: np.ndarray
    n1: np.ndarray
    n0: np.ndarray

    def __post_init__(self):
        shares = np.asarray(self.shares, float)
        n1 = np.asarray(self.n1, float)
        n0 = np.asarray(self.n0, float)
        if not (len(self.names) == len(shares) == len(n1) == len(n0)):
            raise ValueError("names, shares and counts must have equal length")
        if np.any(shares <= 0) or not math.isclose(shares.sum(), 1.0, rel_tol=1e-9):
            raise ValueError("shares must be positive and sum to 1")
        if np.any(n1 < 0) or np.any(n0 < 0):
            raise ValueError("counts must be nonnegative")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "shares", shares)
        object.__setattr__(self, "n1", n1)
        object.__setattr__(self, "n0", n0)

    def empty_strata(self):
        return [n for n, a, b in zip(self.names, self.n1, self.n0) if a + b == 0]

    @classmethod
    def from_population(cls, population):
        """Shares from the full population, counts from its respondents."""
        names = population.stratum_names()
        strata, labels, resp = population.strata, population.labels, population.responded
        shares = [np.mean(strata == s) for s in names]
        n1 = [np.sum(resp & (strata == s) & (labels == 1)) for s in names]
        n0 = [np.sum(resp & (strata == s) & (labels == 0)) for s in names]
        return cls(tuple(names), shares, n1, n0)

    def to_dict(self):
        return {"names": list(self.names), "shares": self.shares.tolist(),
                "n1": self.n1.tolist(), "n0": self.n0.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(tuple(data["names"]), data["shares"], data["n1"], data["n0"])


def poststratify(t: StratumTable):
    """Share-weighted average of within-stratum proportions and its SE."""
    empty = t.empty_strata()
    if empty:
        raise ValidationError(f"stratum {empty[0]!r} has no labeled respondents")
    n = t.n1 + t.n0
    p = t.n1 / n
    est = float(np.sum(t.shares * p))
    se = float(np.sqrt(np.sum(t.shares ** 2 * p * (1.0 - p) / n)))
    return est, se


@dataclass(frozen=True, eq=False)
class DiagnosticsSeries:
    """Per-day diagnostics.

    The proportion part is always present. The hazard-ratio part
    (``assumed_pi`` onward) is filled by :func:`hazard_ratio_series`; days
    without a ratio hold NaN.
    """

    day: np.ndarray
    tag: tuple
    n1: np.ndarray
    n0: np.ndarray
    proportion: np.ndarray
    proportion_se: np.ndarray
    population_size: int
    censor_time: float
    assumed_pi: Optional[float] = None
    ratio: Optional[np.ndarray] = None
    log_ratio_se: Optional[np.ndarray] = None
    n1_at_risk: Optional[np.ndarray] = None
    n0_at_risk: Optional[np.ndarray] = None
    ratio_included: Optional[np.ndarray] = None

    @property
    def total(self):
        return self.n1 + self.n0

    @property
    def working(self):
        return np.array([is_working_day(t) for t in self.tag])

    def rows(self):
        """One dict per day, missing values as None."""
        out = []
        for i, d in enumerate(self.day):
            row = {
                "day": int(d), "tag": self.tag[i], "n1": _count(self.n1[i]), "n0": _count(self.n0[i]),
                "proportion": _opt(self.proportion[i]), "proportion_se": _opt(self.proportion_se[i]),
            }
            if self.assumed_pi is not None:
                row.update(
                    assumed_pi=self.assumed_pi, ratio=_opt(self.ratio[i]),
                    log_ratio_se=_opt(self.log_ratio_se[i]),
                    n1_at_risk=float(self.n1_at_risk[i]), n0_at_risk=float(self.n0_at_risk[i]),
                )
            out.append(row)
        return out

    def tidy_rows(self):
        """Long format: one row per day per metric."""
        out = []
        for row in self.rows():
            for metric, value in row.items():
                if metric not in ("day", "tag"):
                    out.append({"day": row["day"], "tag": row["tag"], "metric": metric, "value": value})
        return out

    def to_dict(self):
        return {"population_size": int(self.population_size), "censor_time": self.censor_time,
                "assumed_pi": self.assumed_pi, "rows": self.rows()}


def _count(v):
    v = float(v)
    return int(v) if v.is_integer() else v


def _opt(v):
    v = float(v)
    return None if math.isnan(v) else v


def _calendar_for(d: SurveyDataset):
    if d.calendar is not None:
        return d.calendar
    return make_calendar(d.n_days(), "monday")


def daily_proportion_series(d: SurveyDataset) -> DiagnosticsSeries:
    """Per-day labeled counts, proportion of group 1 and binomial SE.

    Every day in ``[0, tau)`` gets a row; days without labeled responses
    have NaN proportion. Without a calendar, day 0 is taken as a Monday.
    """
    cal = _calendar_for(d)
    n_days = d.n_days()
    day = d.day_index()[d.observed]
    x = d.labels[d.observed]
    n1 = np.bincount(day, weights=(x == 1), minlength=n_days)[:n_days].astype(np.int64)
    n0 = np.bincount(day, weights=(x == 0), minlength=n_days)[:n_days].astype(np.int64)
    tot = n1 + n0
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(tot > 0, n1 / tot, np.nan)
        se = np.where(tot > 0, np.sqrt(p * (1 - p) / tot), np.nan)
    days = np.arange(n_days)
    tags = tuple(cal.get(int(i), HOLIDAY) for i in days)
    return DiagnosticsSeries(days, tags, n1, n0, p, se, d.population_size, d.censor_time)


def hazard_ratio_series(d: SurveyDataset, assumed_pi: float,
                        include_nonworking=False) -> DiagnosticsSeries:
    """Daily hazard ratio of group 1 to group 0 given an assumed proportion.

    For each day the ratio is ``(d1 / N1) / (d0 / N0)`` with ``d_j`` the
    labeled responses of group ``j`` that day and ``N_j`` the estimated
    number still at risk at the start of the day. The standard error of the
    log ratio is ``sqrt(1/d1 + 1/d0 - 1/N1 - 1/N0)``. Weekends and holidays
    are skipped unless ``include_nonworking``; days with a zero count have
    no ratio.
    """
    base = daily_proportion_series(d)
    n_days = len(base.day)
    day_all = d.day_index()
    obs = d.observed
    x = np.where(obs, d.labels, 0)
    # Cumulative counts strictly before each day start.
    unl = np.bincount(day_all, weights=~obs, minlength=n_days)[:n_days]
    c1 = np.bincount(day_all, weights=obs & (x == 1), minlength=n_days)[:n_days]
    c0 = np.bincount(day_all, weights=obs & (x == 0), minlength=n_days)[:n_days]
    before = lambda a: np.concatenate([[0.0], np.cumsum(a)[:-1]])
    M = d.population_size - before(unl)
    N1 = M * assumed_pi - before(c1)
    N0 = M * (1.0 - assumed_pi) - before(c0)

    d1 = base.n1.astype(float)
    d0 = base.n0.astype(float)
    include = np.ones(n_days, bool) if include_nonworking else base.working
    ok = include & (d1 > 0) & (d0 > 0) & (N1 > 0) & (N0 > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(ok, (d1 / N1) / (d0 / N0), np.nan)
        var = 1 / d1 + 1 / d0 - 1 / N1 - 1 / N0
        se = np.where(ok & (var > 0), np.sqrt(np.abs(var)), np.nan)
    return DiagnosticsSeries(
        base.day, base.tag, base.n1, base.n0, base.proportion, base.proportion_se,
        d.population_size, d.censor_time, float(assumed_pi), ratio, se, N1, N0, include,
    )


@dataclass(frozen=True)
class TrendTest:
    intercept: float
    slope: float
    slope_se: float
    p_value: float
    n_days: int

    @property
    def significant(self):
        return self.p_value < TREND_LEVEL

    def to_dict(self):
        return dict(self.__dict__, significant=self.significant)


def weighted_trend(x, y, w):
    """Weighted least squares of ``y`` on ``x`` with a t-test for the slope.

    The residual variance is estimated from the data, so weights only need
    to be proportional to inverse variances.
    """
    x, y, w = (np.asarray(a, float) for a in (x, y, w))
    n = len(x)
    if n < 3:
        raise ValidationError("need at least three points for a trend test")
    X = np.column_stack([np.ones(n), x])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    resid = (y - X @ coef) * sw
    sigma2 = resid @ resid / (n - 2)
    cov = sigma2 * np.linalg.inv((X * w[:, None]).T @ X)
    se = math.sqrt(cov[1, 1])
    tstat = coef[1] / se if se > 0 else math.inf * np.sign(coef[1])
    p = float(2 * stats.t.sf(abs(tstat), n - 2))
    return TrendTest(float(coef[0]), float(coef[1]), se, p, n)


def log_ratio_trend(series: DiagnosticsSeries) -> TrendTest:
    """Test the daily log hazard ratio for a linear trend in day (day midpoints)."""
    if series.ratio is None:
        raise ValueError("series has no hazard-ratio part")
    ok = np.isfinite(series.ratio) & np.isfinite(series.log_ratio_se)
    return weighted_trend(series.day[ok] + 0.5, np.log(series.ratio[ok]),
                          1.0 / series.log_ratio_se[ok] ** 2)


def proportion_trend(series: DiagnosticsSeries) -> TrendTest:
    """Count-weighted linear trend of daily proportions over working days."""
    ok = series.working & (series.total > 0)
    if ok.sum() < 2:
        raise ValidationError("need at least two working days with labeled data")
    return weighted_trend(series.day[ok] + 0.5, series.proportion[ok], series.total[ok])


def natural_horizon(series: DiagnosticsSeries):
    """Days until everyone would have responded at the observed arrival rate."""
    labeled = series.total.sum()
    return series.censor_time * series.population_size / labeled


def extrapolate_trend(series: DiagnosticsSeries, horizon: Optional[float] = None) -> float:
    """Continue the working-day proportion trend and average it over responses.

    A count-weighted straight line is fitted to daily proportions on working
    days and extended to ``horizon`` days (by default the time at which the
    whole population would have responded at the observed daily volume).
    The estimate is the mean of the line over ``[0, horizon]``, weighting
    observed days by their labeled volume and later days by the average
    daily volume, with the line clipped to ``[0, 1]``.

    Raises
    ------
    ValidationError
        With fewer than two working days of data, or when all daily
        proportions are degenerate (0 or 1 on every day).
    """
    ok = series.working & (series.total > 0)
    if ok.sum() < 2:
        raise ValidationError("need at least two working days with labeled data")
    p = series.proportion[ok]
    if np.all((p == 0) | (p == 1)):
        raise ValidationError("degenerate series: zero-variance days only")
    x = series.day[ok] + 0.5
    w = series.total[ok].astype(float)
    X = np.column_stack([np.ones_like(x), x])
    sw = np.sqrt(w)
    (a, b), *_ = np.linalg.lstsq(X * sw[:, None], p * sw, rcond=None)

    if horizon is None:
        horizon = natural_horizon(series)
    horizon = float(horizon)
    n_obs = len(series.day)
    n_days = int(math.ceil(horizon))
    volume = np.full(n_days, series.total.sum() / series.censor_time, float)
    k = min(n_obs, n_days)
    volume[:k] = series.total[:k]
    mids = np.arange(n_days) + 0.5
    # Partial last day.
    frac = horizon - (n_days - 1)
    volume[-1] *= frac
    mids[-1] = n_days - 1 + frac / 2
    line = np.clip(a + b * mids, 0.0, 1.0)
    return float(np.sum(volume * line) / np.sum(volume))


def idealized_linear_series(start=0.35, end=0.27, n_days=42, daily_volume=1000,
                            population_size=None, start_weekday="tuesday"):
    """Noise-free series declining linearly from ``start`` to ``end``.

    Every day has the same volume and the proportion at day midpoint ``t``
    is ``start + (end - start) * t / n_days``.
    """
    days = np.arange(n_days)
    p = start + (end - start) * (days + 0.5) / n_days
    total = np.full(n_days, daily_volume)
    n1 = p * total
    cal = make_calendar(n_days, start_weekday)
    tags = tuple(cal[i] for i in days)
    if population_size is None:
        population_size = 3 * n_days * daily_volume
    return DiagnosticsSeries(days, tags, n1, total - n1, p, np.sqrt(p * (1 - p) / total),
                             population_size, float(n_days))
