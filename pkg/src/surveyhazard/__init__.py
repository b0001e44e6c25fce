"""Estimate a finite-population proportion from survey response times.

Respondents arrive over time; the group of interest responds at a rate that
is a piecewise-constant multiple of the reference group's rate. Maximizing
the partial likelihood of the observed labels, with risk sets estimated
from the population size, gives the proportion and its standard error.
"""

__version__ = "0.1.0"

from .errors import (InfeasibleError, NotConvergedError, PartitionError,
                     SingularInformationError, SurveyHazardError,
                     ValidationError)
from .domain import (HazardPartition, ResponseRecord, SurveyDataset,
                     break_ties, make_calendar, validate_dataset)
from .likelihood import (ModelParams, conditional_arrival_prob, evaluate,
                         hessian, log_partial_likelihood, profile_information,
                         risk_counts, score)
from .fit import (FitConfig, FitResult, fit, profile_curve,
                  weak_identification_check)
from .simulator import (HazardSpec, ScenarioConfig, sample_response_time,
                        simulate_collider_population, simulate_survey,
                        six_week_scenario)
from .comparators import (DiagnosticsSeries, StratumTable,
                          daily_proportion_series, extrapolate_trend,
                          hazard_ratio_series, poststratify, sample_proportion)
from .study import mc_study
from .config import RunConfig, resolve_partition

__all__ = [
    "InfeasibleError", "NotConvergedError", "PartitionError",
    "SingularInformationError", "SurveyHazardError", "ValidationError",
    "HazardPartition", "ResponseRecord", "SurveyDataset", "break_ties",
    "make_calendar", "validate_dataset",
    "ModelParams", "conditional_arrival_prob", "evaluate", "hessian",
    "log_partial_likelihood", "profile_information", "risk_counts", "score",
    "FitConfig", "FitResult", "fit", "profile_curve", "weak_identification_check",
    "HazardSpec", "ScenarioConfig", "sample_response_time",
    "simulate_collider_population", "simulate_survey", "six_week_scenario",
    "DiagnosticsSeries", "StratumTable", "daily_proportion_series",
    "extrapolate_trend", "hazard_ratio_series", "poststratify",
    "sample_proportion", "mc_study", "RunConfig", "resolve_partition",
]
