"""Run configuration, partition resolution and input readers.

Configuration files are JSON objects carrying ``config_version: 1``. Keys::

    command           fit | simulate | diagnose | compare | mc-study
    input             path of the response CSV
    output            path of the JSON report
    population_size   N (never inferred from data)
    censor_time       tau, days
    calendar          path to a day,tag CSV; {"start_weekday", "days",
                      "holidays"}; or an explicit {"day": "tag"} map
    partition         shorthand string or {"kind": ..., ...}
    fit               FitConfig fields
    seed              integer seed
    scenario          ScenarioConfig fields, or {"preset": "six-week", ...}
    diagnostics       {"assumed_pi": [...], "include_nonworking": false}
    strata            StratumTable fields (compare)
    study             {"replicates": 200, "workers": 1}
    time_origin       ISO timestamp of day 0 when the CSV holds timestamps
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np

from .domain import (DAY_TAGS, WEEKDAYS, HazardPartition,
                     ResponseRecord, SurveyDataset, is_working_day,
                     make_calendar)
from .errors import PartitionError, ValidationError
from .fit import FitConfig

CONFIG_VERSION = 1
COMMANDS = ("fit", "simulate", "diagnose", "compare", "mc-study")
WEEKEND_STRATUM = "weekend/holiday"


@dataclass(frozen=True)
class RunConfig:
    command: str = "fit"
    input: Optional[str] = None
    output: Optional[str] = None
    population_size: Optional[int] = None
    censor_time: Optional[float] = None
    calendar: Any = None
    partition: Any = "constant"
    fit: Mapping = field(default_factory=dict)
    seed: int = 0
    scenario: Optional[Mapping] = None
    diagnostics: Mapping = field(default_factory=dict)
    strata: Optional[Mapping] = None
    study: Mapping = field(default_factory=dict)
    time_origin: Optional[str] = None
    config_version: int = CONFIG_VERSION

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValidationError(f"unknown command {self.command!r}; expected one of {COMMANDS}")
        if self.config_version != CONFIG_VERSION:
            raise ValidationError(f"unsupported config_version {self.config_version}")

    def to_dict(self):
        return {
            "config_version": self.config_version,
            "command": self.command,
            "input": self.input,
            "output": self.output,
            "population_size": self.population_size,
            "censor_time": self.censor_time,
            "calendar": self.calendar,
            "partition": self.partition,
            "fit": dict(self.fit),
            "seed": self.seed,
            "scenario": None if self.scenario is None else dict(self.scenario),
            "diagnostics": dict(self.diagnostics),
            "strata": None if self.strata is None else dict(self.strata),
            "study": dict(self.study),
            "time_origin": self.time_origin,
        }

    @classmethod
    def from_dict(cls, data):
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def with_overrides(self, **kwargs):
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})

    def fit_config(self):
        data = dict(self.fit)
        data.setdefault("tie_seed", self.seed)
        try:
            return FitConfig(**data)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"invalid fit config: {exc}") from exc


def load_config(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path}: {exc}", row=exc.lineno) from exc
    if not isinstance(data, dict):
        raise ValidationError("config must be a JSON object")
    base = Path(path).parent
    # Relative paths inside the config resolve against the config's directory.
    for key in ("input", "output"):
        if isinstance(data.get(key), str):
            data[key] = str(base / data[key])
    if isinstance(data.get("calendar"), str):
        data["calendar"] = str(base / data["calendar"])
    return RunConfig.from_dict(data)


def load_calendar(spec, n_days=None):
    """Resolve a calendar spec into a ``{day: tag}`` map (or None)."""
    if spec is None:
        return None
    if isinstance(spec, str):
        return read_calendar_csv(spec)
    if isinstance(spec, Mapping) and "start_weekday" in spec:
        days = spec.get("days", n_days)
        if days is None:
            raise ValidationError("calendar needs 'days' when censor_time is unknown")
        return make_calendar(int(days), spec["start_weekday"], spec.get("holidays", ()))
    if isinstance(spec, Mapping):
        cal = {int(k): str(v) for k, v in spec.items()}
        bad = [v for v in cal.values() if v not in DAY_TAGS]
        if bad:
            raise ValidationError(f"unknown calendar tag {bad[0]!r}")
        return cal
    raise ValidationError(f"cannot interpret calendar spec {spec!r}")


def read_calendar_csv(path):
    cal = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"day", "tag"} <= set(reader.fieldnames):
            raise ValidationError(f"{path}: calendar CSV needs 'day' and 'tag' columns", row=1)
        for row in reader:
            try:
                day = int(row["day"])
            except ValueError:
                raise ValidationError(f"{path}: bad day {row['day']!r}", row=reader.line_num) from None
            tag = row["tag"].strip().lower()
            if tag not in DAY_TAGS:
                raise ValidationError(f"{path}: unknown tag {tag!r}", row=reader.line_num)
            cal[day] = tag
    return cal


def write_calendar_csv(calendar, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["day", "tag"])
        for day in sorted(calendar):
            w.writerow([day, calendar[day]])


def _parse_time(text, origin):
    try:
        return float(text)
    except ValueError:
        if origin is None:
            raise
    ts = datetime.fromisoformat(text)
    return (ts - origin).total_seconds() / 86400.0


def read_responses_csv(path, population_size, censor_time, calendar=None, time_origin=None):
    """Read the response CSV (``time``, ``label``) into a dataset.

    ``label`` is 0, 1 or empty (item nonresponse). ``time`` is decimal days,
    or an ISO timestamp when ``time_origin`` is given. Malformed rows raise
    :class:`ValidationError` with the file line number.
    """
    origin = datetime.fromisoformat(time_origin) if time_origin else None
    records, lines = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"time", "label"} <= set(reader.fieldnames):
            raise ValidationError(f"{path}: header must contain 'time' and 'label'", row=1)
        for row in reader:
            line = reader.line_num
            raw_t = (row.get("time") or "").strip()
            raw_x = (row.get("label") or "").strip()
            try:
                t = _parse_time(raw_t, origin)
            except ValueError:
                raise ValidationError(f"{path}: line {line}: bad time {raw_t!r}", row=line) from None
            if not math.isfinite(t) or t < 0:
                raise ValidationError(f"{path}: line {line}: time must be nonnegative", row=line)
            if raw_x == "":
                records.append(ResponseRecord.item_nonresponse(t))
            elif raw_x in ("0", "1"):
                records.append(ResponseRecord.labeled(t, int(raw_x)))
            else:
                raise ValidationError(f"{path}: line {line}: bad label {raw_x!r}", row=line)
            lines.append(line)
    ds = SurveyDataset.from_records(records, population_size, censor_time, calendar)
    return ds, lines


def write_responses_csv(d: SurveyDataset, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "label"])
        for t, x, obs in zip(d.times, d.labels, d.observed):
            w.writerow([repr(float(t)), int(x) if obs else ""])


def parse_partition_shorthand(text):
    """``constant``, ``weekday-classes``, ``every-10-weekdays``, ``per-day``,
    ``breakpoints:7,14,21``."""
    text = text.strip()
    if text in ("constant", "weekday-classes", "per-day"):
        return {"kind": text}
    if text.startswith("every-") and text.endswith("-weekdays"):
        k = text[len("every-"):-len("-weekdays")]
        if k.isdigit() and int(k) > 0:
            return {"kind": "every-k-weekdays", "k": int(k)}
    if text.startswith("breakpoints:"):
        try:
            bps = [float(v) for v in text.split(":", 1)[1].split(",") if v.strip()]
        except ValueError:
            raise ValidationError(f"bad breakpoints in {text!r}") from None
        return {"kind": "breakpoints", "breakpoints": bps}
    raise ValidationError(f"unknown partition shorthand {text!r}")


def _day_pieces(tau):
    n_days = int(math.ceil(tau))
    edges = np.minimum(np.arange(n_days + 1, dtype=float), tau)
    return n_days, edges


def _require_calendar(calendar, n_days):
    if calendar is None:
        raise PartitionError("this partition needs a calendar")
    missing = [d for d in range(n_days) if d not in calendar]
    if missing:
        raise PartitionError(f"calendar has no entry for day {missing[0]}")


def resolve_partition(spec, tau, calendar=None) -> HazardPartition:
    """Materialize a partition spec over ``[0, tau)``.

    Calendar-based kinds pool every weekend and holiday day into one final
    stratum. ``per-day`` is ``every-k-weekdays`` with ``k = 1``.
    """
    if isinstance(spec, str):
        spec = parse_partition_shorthand(spec)
    kind = spec.get("kind")
    tau = float(tau)
    if kind == "constant":
        return HazardPartition.constant(tau)
    if kind == "breakpoints":
        return HazardPartition.from_breakpoints(spec["breakpoints"], tau)
    if kind == "per-day":
        spec = {"kind": "every-k-weekdays", "k": 1}
        kind = spec["kind"]

    n_days, edges = _day_pieces(tau)
    _require_calendar(calendar, n_days)
    tags = [calendar[d] for d in range(n_days)]
    if kind == "weekday-classes":
        names = WEEKDAYS + (WEEKEND_STRATUM,)
        index = [WEEKDAYS.index(t) if is_working_day(t) else len(WEEKDAYS) for t in tags]
    elif kind == "every-k-weekdays":
        k = int(spec["k"])
        if k < 1:
            raise PartitionError("k must be at least 1")
        working = [d for d, t in enumerate(tags) if is_working_day(t)]
        n_blocks = -(-len(working) // k)
        block = {d: i // k for i, d in enumerate(working)}
        index = [block[d] if d in block else n_blocks for d in range(n_days)]
        spans = [(i * k + 1, min((i + 1) * k, len(working))) for i in range(n_blocks)]
        names = tuple(f"working day {a}" if a == b else f"working days {a}-{b}"
                      for a, b in spans) + (WEEKEND_STRATUM,)
    else:
        raise ValidationError(f"unknown partition kind {kind!r}")

    used = set(index)
    empty = [i for i in range(len(names)) if i not in used]
    if empty:
        raise PartitionError(f"interval {names[empty[0]]!r} is empty after resolution",
                             interval=empty[0])
    return HazardPartition(edges, np.array(index), names)


def scenario_from_config(data, seed=None, population_size=None, censor_time=None):
    """Build a ScenarioConfig from a config block (explicit or preset)."""
    from .simulator import ScenarioConfig, six_week_scenario

    data = dict(data)
    if data.get("preset") == "six-week":
        kwargs = {k: data[k] for k in ("true_pi", "ratio", "response_rate", "item_response_rate")
                  if k in data}
        n = data.get("population_size", population_size or 100_000)
        sc = six_week_scenario(population_size=int(n), seed=int(data.get("rng_seed", seed or 0)), **kwargs)
        return sc if seed is None else replace(sc, rng_seed=int(seed))
    if "preset" in data:
        raise ValidationError(f"unknown scenario preset {data['preset']!r}")
    data.setdefault("population_size", population_size)
    data.setdefault("censor_time", censor_time)
    if seed is not None:
        data["rng_seed"] = seed
    try:
        return ScenarioConfig.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"invalid scenario: {exc}") from exc
