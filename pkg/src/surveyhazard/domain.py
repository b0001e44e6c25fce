"""Core data model: response records, survey datasets, calendars, partitions.

Time is measured in (fractional) days since the survey opened. Day ``d``
covers ``[d, d + 1)``. A calendar maps integer day indices to a day-class
tag; the kernel never touches real dates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import PartitionError

WEEKDAYS = ("monday", "tuesday", "wednesday", "thursday", "friday")
WEEKEND = ("saturday", "sunday")
HOLIDAY = "holiday"
DAY_TAGS = WEEKDAYS + WEEKEND + (HOLIDAY,)
NONWORKING = frozenset(WEEKEND + (HOLIDAY,))

MISSING_LABEL = -1


def is_working_day(tag):
    return tag in WEEKDAYS


def make_calendar(n_days, start_weekday="monday", holidays=()):
    """Build a day-index -> tag map for ``n_days`` consecutive days.

    Parameters
    ----------
    n_days : int
        Number of days, starting at day 0.
    start_weekday : str
        Weekday name of day 0.
    holidays : iterable of int
        Day indices that are tagged ``"holiday"`` regardless of weekday.
    """
    week = WEEKDAYS + WEEKEND
    if start_weekday not in week:
        raise ValueError(f"unknown weekday {start_weekday!r}")
    offset = week.index(start_weekday)
    holidays = set(int(h) for h in holidays)
    return {
        d: HOLIDAY if d in holidays else week[(offset + d) % 7]
        for d in range(int(n_days))
    }


@dataclass(frozen=True)
class ResponseRecord:
    """One individual's arrival.

    ``time`` is None for unit nonrespondents, ``label`` is None when the item
    was not answered, and ``observed`` is the labeled-response flag.
    """

    time: Optional[float]
    label: Optional[int]
    observed: bool

    @classmethod
    def labeled(cls, time, label):
        return cls(float(time), int(label), True)

    @classmethod
    def item_nonresponse(cls, time):
        return cls(float(time), None, False)


def _readonly(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SurveyDataset:
    """All responding individuals plus the population size and close time.

    Records are stored column-wise. ``labels`` uses -1 for an absent label.
    Nonrespondents are implied by ``population_size - n`` and never listed.
    """

    times: np.ndarray
    labels: np.ndarray
    observed: np.ndarray
    population_size: int
    censor_time: float
    calendar: Optional[Mapping[int, str]] = None

    def __post_init__(self):
        times = _readonly(self.times, float)
        labels = _readonly(self.labels, np.int64)
        observed = _readonly(self.observed, bool)
        if not (times.shape == labels.shape == observed.shape) or times.ndim != 1:
            raise ValueError("times, labels and observed must be 1-d and equally long")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "observed", observed)
        object.__setattr__(self, "censor_time", float(self.censor_time))
        if self.calendar is not None:
            object.__setattr__(
                self, "calendar", {int(k): str(v) for k, v in self.calendar.items()}
            )

    @classmethod
    def from_records(cls, records, population_size, censor_time, calendar=None):
        records = list(records)
        times = [np.nan if r.time is None else r.time for r in records]
        labels = [MISSING_LABEL if r.label is None else r.label for r in records]
        observed = [bool(r.observed) for r in records]
        return cls(np.asarray(times, float), np.asarray(labels), np.asarray(observed, bool),
                   population_size, censor_time, calendar)

    @property
    def n(self):
        return len(self.times)

    @property
    def n_labeled(self):
        return int(self.observed.sum())

    @property
    def records(self):
        return [
            ResponseRecord(
                None if math.isnan(t) else float(t),
                None if lab == MISSING_LABEL else int(lab),
                bool(obs),
            )
            for t, lab, obs in zip(self.times, self.labels, self.observed)
        ]

    @property
    def is_ordered(self):
        """True when times are strictly increasing (no ties, sorted)."""
        return bool(np.all(np.diff(self.times) > 0))

    def n_days(self):
        return int(math.ceil(self.censor_time))

    def day_index(self):
        return np.floor(self.times).astype(np.int64)

    def replace(self, **changes):
        kwargs = dict(
            times=self.times, labels=self.labels, observed=self.observed,
            population_size=self.population_size, censor_time=self.censor_time,
            calendar=self.calendar,
        )
        kwargs.update(changes)
        return SurveyDataset(**kwargs)

    def sorted(self):
        order = np.argsort(self.times, kind="stable")
        if np.all(order == np.arange(self.n)):
            return self
        return self.replace(times=self.times[order], labels=self.labels[order],
                            observed=self.observed[order])


@dataclass(frozen=True)
class Finding:
    index: Optional[int]
    invariant: str
    message: str = ""

    def __str__(self):
        where = "dataset" if self.index is None else f"record {self.index}"
        return f"{where}: {self.invariant}" + (f" ({self.message})" if self.message else "")


def validate_dataset(d: SurveyDataset) -> list[Finding]:
    """Check the dataset and record invariants; return a list of findings.

    An empty list means the dataset is well formed. Ties are not reported
    here since :func:`break_ties` resolves them.
    """
    findings = []
    N = d.population_size
    tau = d.censor_time
    if not isinstance(N, (int, np.integer)) or N <= 0:
        findings.append(Finding(None, "population_size must be a positive integer", repr(N)))
    if not (math.isfinite(tau) and tau > 0):
        findings.append(Finding(None, "censor_time must be positive and finite", repr(tau)))
    if isinstance(N, (int, np.integer)) and d.n > N:
        findings.append(Finding(None, "more records than population_size", f"{d.n} > {N}"))

    for i, (t, lab, obs) in enumerate(zip(d.times, d.labels, d.observed)):
        if math.isnan(t):
            findings.append(Finding(i, "record without time"))
            continue
        if not math.isfinite(t):
            findings.append(Finding(i, "time not finite", repr(t)))
        elif t <= 0:
            findings.append(Finding(i, "time must be positive", repr(t)))
        elif t >= tau:
            findings.append(Finding(i, "time ≥ censor_time", f"{t} >= {tau}"))
        if lab not in (0, 1, MISSING_LABEL):
            findings.append(Finding(i, "label must be 0, 1 or absent", repr(lab)))
        if obs and lab == MISSING_LABEL:
            findings.append(Finding(i, "labeled flag without label"))
        if not obs and lab != MISSING_LABEL:
            findings.append(Finding(i, "label present on item nonresponse"))

    if d.calendar is not None:
        bad = {k: v for k, v in d.calendar.items() if v not in DAY_TAGS}
        for k, v in sorted(bad.items()):
            findings.append(Finding(None, "unknown calendar tag", f"day {k}: {v!r}"))
    return findings


def break_ties(d: SurveyDataset, seed: int, boundaries=None) -> SurveyDataset:
    """Separate tied times by a seeded random within-tie ordering.

    Members of a tie group at time ``t`` are randomly permuted and shifted to
    ``t + j * gap / (2 m)`` for ``j = 0 .. m-1``, where ``gap`` is the distance
    from ``t`` to the next distinct recorded time, the end of the day, the
    censor time, or the next entry of ``boundaries``, whichever comes first.
    Day and interval membership are therefore unchanged. A dataset without
    ties comes back sorted and otherwise untouched.
    """
    d = d.sorted()
    t = d.times
    if d.n < 2 or np.all(np.diff(t) > 0):
        return d

    uniq, start, counts = np.unique(t, return_index=True, return_counts=True)
    limit = np.minimum(np.floor(uniq) + 1.0, d.censor_time)
    limit = np.minimum(limit, np.append(uniq[1:], np.inf))
    if boundaries is not None:
        b = np.sort(np.asarray(boundaries, float))
        pos = np.searchsorted(b, uniq, side="right")
        nxt = np.where(pos < len(b), b[np.minimum(pos, len(b) - 1)], np.inf)
        limit = np.minimum(limit, nxt)
    gap = limit - uniq

    group = np.repeat(np.arange(len(uniq)), counts)
    rng = np.random.default_rng(seed)
    order = np.lexsort((rng.random(d.n), group))
    rank = np.arange(d.n) - start[group]
    new_times = uniq[group] + rank * gap[group] / (2.0 * counts[group])
    if not np.all(np.diff(new_times) > 0):
        raise ValueError("tie gaps too small to separate in floating point")
    return d.replace(times=new_times, labels=d.labels[order], observed=d.observed[order])


@dataclass(frozen=True, eq=False)
class HazardPartition:
    """Piecewise-constant hazard-ratio layout over ``[0, tau)``.

    The time axis is cut at ``edges`` into elementary pieces; ``piece_index``
    maps each piece to one of ``K`` hazard-ratio indices (0-based). Several
    pieces may share an index, e.g. all weekend days pooled into one stratum.
    """

    edges: np.ndarray
    piece_index: np.ndarray
    names: tuple = field(default=())

    def __post_init__(self):
        edges = _readonly(self.edges, float)
        idx = _readonly(self.piece_index, np.int64)
        if edges.ndim != 1 or len(edges) < 2 or not np.all(np.diff(edges) > 0):
            raise PartitionError("edges must be strictly increasing with at least two entries")
        if edges[0] != 0.0:
            raise PartitionError("partition must start at time 0")
        if len(idx) != len(edges) - 1:
            raise PartitionError("need one index per piece")
        K = int(idx.max()) + 1 if len(idx) else 0
        if idx.min() < 0 or len(np.unique(idx)) != K:
            missing = sorted(set(range(K)) - set(idx.tolist()))
            raise PartitionError(f"interval(s) {missing} cover no time", interval=missing[0] if missing else None)
        names = tuple(self.names) if self.names else tuple(f"interval {k}" for k in range(K))
        if len(names) != K:
            raise PartitionError("one name per interval required")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "piece_index", idx)
        object.__setattr__(self, "names", names)

    @property
    def K(self):
        return len(self.names)

    @property
    def censor_time(self):
        return float(self.edges[-1])

    @classmethod
    def constant(cls, tau):
        return cls(np.array([0.0, tau]), np.array([0]), ("constant",))

    @classmethod
    def from_breakpoints(cls, breakpoints: Sequence[float], tau):
        bps = sorted(float(b) for b in breakpoints if 0 < b < tau)
        edges = np.array([0.0] + bps + [float(tau)])
        names = tuple(f"[{a:g}, {b:g})" for a, b in zip(edges[:-1], edges[1:]))
        return cls(edges, np.arange(len(edges) - 1), names)

    def assign(self, times):
        """Map times to interval indices; times outside ``[0, tau)`` raise."""
        times = np.asarray(times, float)
        if np.any(times < 0) or np.any(times >= self.edges[-1]):
            raise PartitionError("time outside [0, tau)")
        piece = np.searchsorted(self.edges, times, side="right") - 1
        return self.piece_index[piece]

    def intervals(self, k):
        """Half-open pieces ``(start, end)`` that make up interval ``k``."""
        sel = np.flatnonzero(self.piece_index == k)
        return [(float(self.edges[j]), float(self.edges[j + 1])) for j in sel]

    def labeled_counts(self, d: SurveyDataset):
        """Number of labeled events per interval."""
        k = self.assign(d.times[d.observed])
        return np.bincount(k, minlength=self.K)

    def check_identifiable(self, d: SurveyDataset):
        counts = self.labeled_counts(d)
        empty = np.flatnonzero(counts == 0)
        if len(empty):
            k = int(empty[0])
            raise PartitionError(
                f"interval {self.names[k]!r} contains no labeled event; its hazard ratio is unidentified",
                interval=k,
            )
