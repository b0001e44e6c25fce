"""Monte-Carlo replication of a scenario to check interval coverage."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .domain import HazardPartition
from .fit import FitConfig, fit_or_none
from .simulator import ScenarioConfig, simulate_survey

Z95 = 1.959963984540054


def replicate_seeds(seed, replicates):
    """Independent integer seeds for each replicate, fixed by ``seed``."""
    children = np.random.SeedSequence(seed).spawn(replicates)
    return [int(c.generate_state(1, np.uint64)[0]) for c in children]


def _one(args):
    scenario, rep_seed, partition_spec, cfg = args
    sim = simulate_survey(replace(scenario, rng_seed=rep_seed))
    partition = partition_spec(sim.dataset) if callable(partition_spec) else partition_spec
    res = fit_or_none(sim.dataset, partition, cfg)
    if res is None or not res.converged:
        return (sim.true_pi, math.nan, math.nan)
    return (sim.true_pi, res.pi_hat, res.pi_se)


@dataclass(frozen=True)
class StudySummary:
    replicates: int
    failures: int
    coverage: float
    mean_se: float
    sd_estimate: float
    sd_to_se: float
    bias: float
    estimates: tuple
    standard_errors: tuple
    truths: tuple

    def to_dict(self):
        return {
            "replicates": self.replicates,
            "failures": self.failures,
            "coverage": self.coverage,
            "mean_se": self.mean_se,
            "sd_estimate": self.sd_estimate,
            "sd_to_se": self.sd_to_se,
            "bias": self.bias,
            "estimates": list(self.estimates),
            "standard_errors": list(self.standard_errors),
            "truths": list(self.truths),
        }


def mc_study(scenario: ScenarioConfig, replicates=200, seed=0, partition=None,
             cfg: FitConfig = FitConfig(), workers=1) -> StudySummary:
    """Simulate and fit ``replicates`` surveys; summarize 95% interval behavior.

    ``partition`` is a :class:`HazardPartition`, None for a constant ratio, or
    a picklable callable building one from the simulated dataset. Results
    do not depend on ``workers``: every replicate has its own seed derived
    from ``seed``. Failed fits count against coverage.
    """
    if partition is None:
        partition = HazardPartition.constant(scenario.censor_time)
    jobs = [(scenario, s, partition, cfg) for s in replicate_seeds(seed, replicates)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_one, jobs, chunksize=max(1, replicates // (4 * workers))))
    else:
        rows = [_one(j) for j in jobs]

    truth, est, se = (np.array(c, float) for c in zip(*rows))
    ok = np.isfinite(est) & np.isfinite(se)
    covered = ok & (np.abs(est - truth) <= Z95 * se)
    sd = float(np.std(est[ok], ddof=1)) if ok.sum() > 1 else math.nan
    mean_se = float(np.mean(se[ok])) if ok.any() else math.nan
    return StudySummary(
        replicates=replicates,
        failures=int((~ok).sum()),
        coverage=float(covered.mean()),
        mean_se=mean_se,
        sd_estimate=sd,
        sd_to_se=sd / mean_se if ok.any() else math.nan,
        bias=float(np.mean(est[ok] - truth[ok])) if ok.any() else math.nan,
        estimates=tuple(est.tolist()),
        standard_errors=tuple(se.tolist()),
        truths=tuple(truth.tolist()),
    )
