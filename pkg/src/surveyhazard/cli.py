"""Command-line front end.

    surveyhazard --command fit --config run.json --input responses.csv --out report.json

Exit codes: 0 success, 2 validation, 3 infeasible, 4 not_converged, 5 io.
Errors are also printed to stderr as a JSON object with the category.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import __version__
from .comparators import (StratumTable, daily_proportion_series,
                          extrapolate_trend, hazard_ratio_series,
                          log_ratio_trend, poststratify, proportion_trend,
                          sample_proportion)
from .config import (RunConfig, load_calendar, load_config,
                     parse_partition_shorthand, read_responses_csv,
                     resolve_partition, scenario_from_config,
                     write_calendar_csv, write_responses_csv)
from .domain import break_ties, validate_dataset
from .errors import SurveyHazardError, ValidationError
from .fit import fit
from .likelihood import ModelParams, evaluate, log_partial_likelihood
from .simulator import simulate_survey
from .study import mc_study

log = logging.getLogger("surveyhazard")

SCHEMA_VERSION = "1"
EXIT_CODES = {"validation": 2, "infeasible": 3, "not_converged": 4, "io": 5}
DEFAULT_ASSUMED_PI = (0.14, 0.2, 0.34)


@dataclass
class Report:
    config: dict
    fit: Optional[dict] = None
    comparators: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    simulation: Optional[dict] = None
    study: Optional[dict] = None
    debug: Optional[dict] = None
    warnings: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)
    schema_version: str = SCHEMA_VERSION

    def body(self):
        """Everything except timing; identical for identical config and seed."""
        return {
            "schema_version": self.schema_version,
            "config": self.config,
            "fit": self.fit,
            "comparators": self.comparators,
            "diagnostics": self.diagnostics,
            "simulation": self.simulation,
            "study": self.study,
            "debug": self.debug,
            "warnings": self.warnings,
        }

    def to_dict(self):
        return dict(self.body(), timing=self.timing)

    def to_json(self):
        return json.dumps(_clean(self.to_dict()), indent=2, sort_keys=True, allow_nan=False)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _clean(obj):
    """JSON-safe copy: non-finite floats become None."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _require(value, name):
    if value is None:
        raise ValidationError(f"{name} is required")
    return value


def _load_dataset(cfg: RunConfig):
    N = int(_require(cfg.population_size, "population_size"))
    tau = float(_require(cfg.censor_time, "censor_time"))
    path = _require(cfg.input, "input")
    calendar = load_calendar(cfg.calendar, n_days=math.ceil(tau))
    d, lines = read_responses_csv(path, N, tau, calendar, cfg.time_origin)
    findings = validate_dataset(d)
    if findings:
        f = findings[0]
        row = None if f.index is None else lines[f.index]
        raise ValidationError(f"{path}: {f}" + (f" at line {row}" if row else ""), row=row)
    return d


def _comparators(d, cfg: RunConfig):
    out = {}
    p, se = sample_proportion(d)
    out["sample_proportion"] = {"estimate": p, "se": se}
    if cfg.strata is not None:
        est, se = poststratify(StratumTable.from_dict(cfg.strata))
        out["poststratified"] = {"estimate": est, "se": se}
    series = daily_proportion_series(d)
    try:
        out["extrapolation"] = {"estimate": extrapolate_trend(series)}
    except ValidationError as exc:
        out["extrapolation"] = {"estimate": None, "error": str(exc)}
    return out


def _diagnostics(d, cfg: RunConfig):
    """Report block plus the raw series (for CSV export)."""
    series = daily_proportion_series(d)
    raw = [("proportion", None, series)]
    out = {"daily_proportions": series.to_dict()}
    try:
        out["proportion_trend"] = proportion_trend(series).to_dict()
    except ValidationError:
        out["proportion_trend"] = None
    include = bool(cfg.diagnostics.get("include_nonworking", False))
    ratios = []
    for pi in cfg.diagnostics.get("assumed_pi", DEFAULT_ASSUMED_PI):
        hr = hazard_ratio_series(d, float(pi), include_nonworking=include)
        try:
            trend = log_ratio_trend(hr).to_dict()
        except ValidationError:
            trend = None
        ratios.append({"assumed_pi": float(pi), "series": hr.to_dict(), "trend": trend})
        raw.append(("hazard_ratio", float(pi), hr))
    out["hazard_ratios"] = ratios
    return out, raw


def _series_csv(raw, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["series", "assumed_pi", "day", "tag", "metric", "value"])
        for name, pi, series in raw:
            for r in series.tidy_rows():
                v = r["value"]
                w.writerow([name, "" if pi is None else pi, r["day"], r["tag"], r["metric"],
                            "" if v is None else v])


def run(cfg: RunConfig, series_csv=None, debug_likelihood=False, data_out=None) -> Report:
    """Execute one command and return its report (errors propagate)."""
    started = time.perf_counter()
    report = Report(config=cfg.to_dict())

    if cfg.command in ("fit", "diagnose", "compare"):
        d = _load_dataset(cfg)
        partition = resolve_partition(cfg.partition, d.censor_time, d.calendar)
        if cfg.command in ("fit", "compare"):
            res = fit(d, partition, cfg.fit_config())
            report.fit = res.to_dict()
            report.warnings += list(res.warnings)
            if res.weak_identification_warning:
                report.warnings.append(res.weak_identification_warning)
            if debug_likelihood:
                dd = break_ties(d, res.tie_seed, boundaries=partition.edges)
                params = ModelParams(res.pi_hat, res.rho_hat)
                ev = evaluate(dd, partition, params)
                terms = log_partial_likelihood(dd, partition, params).per_event_terms
                report.debug = dict(ev.to_dict(), per_event_terms=terms.tolist())
        if cfg.command in ("fit", "compare"):
            report.comparators = _comparators(d, cfg)
        if cfg.command in ("diagnose", "compare"):
            report.diagnostics, raw = _diagnostics(d, cfg)
            if series_csv:
                _series_csv(raw, series_csv)

    elif cfg.command == "simulate":
        sc = scenario_from_config(_require(cfg.scenario, "scenario"), seed=cfg.seed,
                                  population_size=cfg.population_size, censor_time=cfg.censor_time)
        sim = simulate_survey(sc)
        report.simulation = {"scenario": sc.to_dict(), "truth": sim.truth_dict()}
        if data_out:
            data_out = Path(data_out)
            write_responses_csv(sim.dataset, data_out)
            truth_path = data_out.with_suffix(".truth.json")
            truth_path.write_text(json.dumps(dict(sim.truth_dict(), rng_seed=sc.rng_seed,
                                                  censor_time=sim.dataset.censor_time), indent=2))
            files = {"data": str(data_out), "truth": str(truth_path)}
            if sc.calendar is not None:
                cal_path = data_out.with_suffix(".calendar.csv")
                write_calendar_csv(sc.calendar, cal_path)
                files["calendar"] = str(cal_path)
            report.simulation["files"] = files

    elif cfg.command == "mc-study":
        sc = scenario_from_config(_require(cfg.scenario, "scenario"),
                                  population_size=cfg.population_size, censor_time=cfg.censor_time)
        partition = None
        if cfg.partition not in (None, "constant", {"kind": "constant"}):
            partition = resolve_partition(cfg.partition, sc.censor_time, sc.calendar)
        summary = mc_study(sc, replicates=int(cfg.study.get("replicates", 200)), seed=cfg.seed,
                           partition=partition, cfg=cfg.fit_config(),
                           workers=int(cfg.study.get("workers", 1)))
        report.study = summary.to_dict()
        report.study["coverage_table"] = [
            {"nominal": 0.95, "coverage": summary.coverage, "mean_se": summary.mean_se,
             "sd_estimate": summary.sd_estimate, "sd_to_se": summary.sd_to_se,
             "failures": summary.failures}
        ]

    report.timing = {"elapsed_seconds": time.perf_counter() - started}
    return report


def build_parser():
    p = argparse.ArgumentParser(
        prog="surveyhazard",
        description="Estimate a population proportion from survey response times.",
    )
    p.add_argument("--command", choices=["fit", "simulate", "diagnose", "compare", "mc-study"])
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--input", help="response CSV with columns time,label")
    p.add_argument("--out", help="report path (JSON); stdout when omitted")
    p.add_argument("--seed", type=int, help="seed (ties, simulation, replicates)")
    p.add_argument("--partition", help="constant | weekday-classes | every-K-weekdays | per-day | breakpoints:a,b")
    p.add_argument("--population-size", type=int)
    p.add_argument("--censor-time", type=float)
    p.add_argument("--calendar", help="calendar CSV with columns day,tag")
    p.add_argument("--series-csv", help="also write diagnostic series as tidy CSV")
    p.add_argument("--data-out", help="simulate: write the generated CSV here (plus sidecars)")
    p.add_argument("--debug-likelihood", action="store_true",
                   help="include the likelihood evaluation at the estimate in the report")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _fail(category, message, row=None):
    payload = {"error": category, "message": message}
    if row is not None:
        payload["row"] = row
    print(json.dumps(payload), file=sys.stderr)
    return EXIT_CODES.get(category, 1)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.partition:
            parse_partition_shorthand(args.partition)
        cfg = cfg.with_overrides(
            command=args.command, input=args.input, output=args.out, seed=args.seed,
            partition=args.partition, population_size=args.population_size,
            censor_time=args.censor_time, calendar=args.calendar,
        )
        report = run(cfg, series_csv=args.series_csv, debug_likelihood=args.debug_likelihood,
                     data_out=args.data_out)
        text = report.to_json()
        if cfg.output:
            Path(cfg.output).write_text(text + "\n")
        else:
            print(text)
    except SurveyHazardError as exc:
        return _fail(exc.category, str(exc), getattr(exc, "row", None))
    except OSError as exc:
        return _fail("io", str(exc))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
