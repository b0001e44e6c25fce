import math

import numpy as np
import pytest
from scipy import stats

from surveyhazard.comparators import (StratumTable, daily_proportion_series,
                                      extrapolate_trend, hazard_ratio_series,
                                      idealized_linear_series, log_ratio_trend,
                                      poststratify, proportion_trend, sample_proportion,
                                      weighted_trend)
from surveyhazard.domain import make_calendar
from surveyhazard.errors import ValidationError
from surveyhazard.fit import fit
from surveyhazard.simulator import simulate_collider_population

from conftest import dataset


def test_sample_proportion_basic():
    d = dataset([(0.1, 1), (0.2, 0), (0.3, 0), (0.4, 1), (0.5, None)], N=10, tau=1.0)
    p, se = sample_proportion(d)
    assert p == 0.5 and se == pytest.approx(math.sqrt(0.25 / 4))


def test_sample_proportion_degenerate():
    d = dataset([(0.1, 1), (0.2, 1)], N=10, tau=1.0)
    assert sample_proportion(d) == (1.0, 0.0)
    with pytest.raises(ValidationError):
        sample_proportion(dataset([(0.1, None)], N=10, tau=1.0))


def test_supervisor_hypothetical():
    t = StratumTable(("supervisor", "other"), [0.5, 0.5], [80, 20], [20, 80])
    est, se = poststratify(t)
    assert est == 0.5
    assert se == pytest.approx(math.sqrt(0.25 * 0.16 / 100 * 2))


def test_single_stratum_is_sample_proportion():
    t = StratumTable(("all",), [1.0], [31], [69])
    assert poststratify(t)[0] == pytest.approx(0.31)


def test_proportional_allocation_matches_sample_proportion():
    shares = np.array([0.2, 0.3, 0.5])
    n = (shares * 1000).astype(int)
    n1 = np.array([50, 120, 100])
    t = StratumTable(("a", "b", "c"), shares, n1, n - n1)
    assert poststratify(t)[0] == pytest.approx(n1.sum() / n.sum(), abs=1e-15)


def test_empty_stratum_rejected():
    with pytest.raises(ValidationError):
        poststratify(StratumTable(("a", "b"), [0.5, 0.5], [3, 0], [2, 0]))


def test_stratum_table_validation():
    with pytest.raises(ValueError):
        StratumTable(("a", "b"), [0.7, 0.7], [1, 1], [1, 1])


def test_collider_table():
    pop = simulate_collider_population()
    est, _ = poststratify(StratumTable.from_population(pop))
    assert round(est, 2) == 0.35
    assert round(pop.respondent_labels().mean(), 2) == 0.47


def test_daily_series_rows():
    rows = [(0.1, 1), (0.2, 1), (0.3, 0), (0.4, 0), (2.5, 1), (2.6, None)]
    d = dataset(rows, N=20, tau=3.0, calendar=make_calendar(3, "monday"))
    s = daily_proportion_series(d)
    assert s.proportion[0] == 0.5 and s.proportion_se[0] == 0.25
    r = s.rows()
    assert r[1]["n1"] == 0 and r[1]["n0"] == 0 and r[1]["proportion"] is None
    assert [x["tag"] for x in r] == ["monday", "tuesday", "wednesday"]


def test_daily_series_sums_back(six_week):
    _, sim = six_week
    s = daily_proportion_series(sim.dataset)
    assert s.n1.sum() / s.total.sum() == pytest.approx(sample_proportion(sim.dataset)[0], abs=1e-15)
    assert s.total.sum() == sim.dataset.n_labeled


def test_symmetric_day_ratio_is_one():
    rows = [(0.01 * (i + 1), i % 2) for i in range(20)]
    d = dataset(rows, N=100, tau=1.0, calendar={0: "monday"})
    s = hazard_ratio_series(d, 0.5)
    assert s.ratio[0] == pytest.approx(1.0)
    assert s.log_ratio_se[0] == pytest.approx(math.sqrt(2 / 10 - 2 / 50))


def test_ratio_excludes_nonworking_days():
    rows = [(d + 0.1 * (i + 1), i % 2) for d in range(7) for i in range(6)]
    d = dataset(rows, N=500, tau=7.0, calendar=make_calendar(7, "monday"))
    s = hazard_ratio_series(d, 0.5)
    assert np.isnan(s.ratio[5]) and np.isnan(s.ratio[6]) and np.isfinite(s.ratio[4])
    s_all = hazard_ratio_series(d, 0.5, include_nonworking=True)
    assert np.all(np.isfinite(s_all.ratio))


def test_weighted_trend_matches_ols_oracle():
    rng = np.random.default_rng(0)
    x = np.arange(20.0)
    y = 1.0 - 0.03 * x + rng.normal(0, 0.1, 20)
    tt = weighted_trend(x, y, np.ones(20))
    ref = stats.linregress(x, y)
    assert tt.slope == pytest.approx(ref.slope, rel=1e-10)
    assert tt.slope_se == pytest.approx(ref.stderr, rel=1e-10)
    assert tt.p_value == pytest.approx(ref.pvalue, rel=1e-8)


def test_hazard_ratio_trends(six_week):
    _, sim = six_week
    flat = log_ratio_trend(hazard_ratio_series(sim.dataset, 0.2))
    falling = log_ratio_trend(hazard_ratio_series(sim.dataset, 0.34))
    assert not flat.significant
    assert falling.significant and falling.slope < 0


def test_ratio_series_consistent_with_fit(six_week):
    _, sim = six_week
    res = fit(sim.dataset)
    s = hazard_ratio_series(sim.dataset, res.pi_hat)
    ok = np.isfinite(s.ratio)
    w = 1 / s.log_ratio_se[ok] ** 2
    mean = np.sum(w * np.log(s.ratio[ok])) / w.sum()
    assert abs(mean - math.log(res.rho_hat[0])) < 3 / math.sqrt(w.sum())


def test_idealized_extrapolation():
    assert extrapolate_trend(idealized_linear_series(), horizon=18 * 7) == pytest.approx(0.23, abs=0.005)


def test_flat_extrapolation():
    s = idealized_linear_series(start=0.4, end=0.4)
    for h in (42, 100, 300):
        assert extrapolate_trend(s, horizon=h) == pytest.approx(0.4)


def test_extrapolation_errors():
    with pytest.raises(ValidationError):
        extrapolate_trend(idealized_linear_series(start=1.0, end=1.0))
    one_day = dataset([(0.1, 1), (0.2, 0)], N=10, tau=1.0)
    with pytest.raises(ValidationError):
        extrapolate_trend(daily_proportion_series(one_day))


def test_simulated_extrapolation_near_truth(six_week):
    _, sim = six_week
    est = extrapolate_trend(daily_proportion_series(sim.dataset))
    assert abs(est - 0.2) < 0.05


def test_proportion_trend_negative(six_week):
    _, sim = six_week
    assert proportion_trend(daily_proportion_series(sim.dataset)).slope < 0


def test_tidy_rows():
    s = idealized_linear_series(n_days=3)
    rows = s.tidy_rows()
    assert {r["metric"] for r in rows} == {"n1", "n0", "proportion", "proportion_se"}
    assert len(rows) == 12
