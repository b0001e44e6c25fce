import math

import numpy as np

from surveyhazard.simulator import HazardSpec, ScenarioConfig
from surveyhazard.study import Z95, mc_study, replicate_seeds
from scipy import stats


def _scenario():
    return ScenarioConfig(3000, 0.3, HazardSpec.constant(0.05, 2.0), 10.0, 1.0, 0)


def test_z95_matches_normal_quantile():
    assert Z95 == stats.norm.ppf(0.975)


def test_replicate_seeds_are_fixed_and_distinct():
    a = replicate_seeds(7, 50)
    assert a == replicate_seeds(7, 50)
    assert len(set(a)) == 50
    assert a[:10] == replicate_seeds(7, 10)


def test_results_do_not_depend_on_workers():
    one = mc_study(_scenario(), replicates=8, seed=3, workers=1)
    two = mc_study(_scenario(), replicates=8, seed=3, workers=2)
    assert one.to_dict() == two.to_dict()


def test_summary_recomputed_from_rows():
    s = mc_study(_scenario(), replicates=20, seed=4)
    est, se, truth = (np.array(v) for v in (s.estimates, s.standard_errors, s.truths))
    assert s.failures == 0
    assert s.coverage == np.mean(np.abs(est - truth) <= Z95 * se)
    assert math.isclose(s.sd_to_se, np.std(est, ddof=1) / np.mean(se))
    assert math.isclose(s.bias, np.mean(est - truth))
