import numpy as np
import pytest

from surveyhazard.domain import HazardPartition, ResponseRecord, SurveyDataset
from surveyhazard.simulator import HazardSpec, ScenarioConfig, simulate_survey, six_week_scenario

CRITERION_SEED = 20220531


def small_survey(seed, N=40, pi=0.3, ratio=2.0, rate=0.05, tau=20.0, item_rate=0.8):
    """A small simulated survey (continuous times, so no ties)."""
    cfg = ScenarioConfig(N, pi, HazardSpec.constant(rate, ratio), tau, item_rate, seed)
    return simulate_survey(cfg)


def small_partition(d, K):
    """K intervals cut at quantiles of the labeled times (so none is empty)."""
    if K == 1:
        return HazardPartition.constant(d.censor_time)
    t = np.sort(d.times[d.observed])
    cuts = [0.5 * (t[i - 1] + t[i]) for i in (len(t) * np.arange(1, K) // K)]
    return HazardPartition.from_breakpoints(cuts, d.censor_time)


def dataset(rows, N, tau, calendar=None):
    """Build a dataset from ``(time, label)`` rows; label None means unlabeled."""
    recs = [ResponseRecord.item_nonresponse(t) if x is None else ResponseRecord.labeled(t, x)
            for t, x in rows]
    return SurveyDataset.from_records(recs, N, tau, calendar)


@pytest.fixture(scope="session")
def six_week():
    """The calibrated six-week scenario at N = 100,000 and its simulated survey."""
    sc = six_week_scenario(seed=CRITERION_SEED)
    return sc, simulate_survey(sc)


_ACCEPTANCE = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, passed, detail)``; returns ``passed``."""
    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
