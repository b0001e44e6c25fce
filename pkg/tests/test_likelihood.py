import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from surveyhazard.domain import HazardPartition
from surveyhazard.errors import InfeasibleError, SingularInformationError
from surveyhazard.fit import fit
from surveyhazard.likelihood import (EventTable, ModelParams, conditional_arrival_prob,
                                     evaluate, hessian, information_from_blocks,
                                     log_partial_likelihood, profile_information,
                                     risk_counts, score)

from conftest import dataset, small_partition, small_survey


def sequential_loglik(d, pi, rho, partition=None):
    """Independent oracle: walk the arrivals one by one with integer bookkeeping."""
    N = d.population_size
    unlabeled = seen1 = seen0 = 0
    total = 0.0
    for t, x, obs in zip(d.times, d.labels, d.observed):
        if not obs:
            unlabeled += 1
            continue
        n1 = (N - unlabeled) * pi - seen1
        n0 = (N - unlabeled) * (1 - pi) - seen0
        r = rho[0] if partition is None else rho[int(partition.assign([t])[0])]
        p1 = r * n1 / (n0 + r * n1)
        total += math.log(p1 if x == 1 else 1 - p1)
        if x == 1:
            seen1 += 1
        else:
            seen0 += 1
    return total


def test_first_event_counts():
    d = dataset([(0.5, 1), (1.0, 0)], N=10, tau=5.0)
    rc = risk_counts(d, 0.3, 0)
    assert rc.n1_hat == pytest.approx(3.0) and rc.n0_hat == pytest.approx(7.0)


def test_hand_counts_with_unlabeled_prior():
    d = dataset([(0.5, 1), (1.0, None), (1.5, 0)], N=10, tau=5.0)
    rc = risk_counts(d, 0.5, 2)
    assert rc.n1_hat == pytest.approx(3.5)
    assert rc.n0_hat == pytest.approx(4.5)


def test_conditional_probability_hand_value():
    rows = [(0.01 * (i + 1), 0) for i in range(70)]
    rows += [(0.8 + 0.01 * i, 1) for i in range(20)]
    rows += [(1.2 + 0.01 * i, None) for i in range(10)]
    rows += [(2.0, 1)]
    d = dataset(rows, N=1000, tau=5.0)
    p = conditional_arrival_prob(d, ModelParams(0.2, [2.0]), 100)
    assert p == pytest.approx(356 / 1078, rel=1e-12)


def test_conditional_probability_identities():
    d = dataset([(0.5, 1), (1.0, 0)], N=10, tau=5.0)
    assert conditional_arrival_prob(d, ModelParams(0.3, [1.0]), 0) == pytest.approx(0.3)
    assert conditional_arrival_prob(d, ModelParams(0.5, [2.0]), 0) == pytest.approx(2 / 3)


def test_counts_are_exact_when_fully_observed():
    sim = small_survey(3, N=50, pi=0.4, tau=1e9, item_rate=1.0)
    d = sim.dataset
    pi = sim.true_pi
    remaining1 = int(sim.true_labels.sum())
    for i, x in enumerate(d.labels):
        rc = risk_counts(d, pi, i) if remaining1 > 0 and remaining1 < 50 - i else None
        if rc is not None:
            assert rc.n1_hat == pytest.approx(remaining1, abs=1e-9)
            assert rc.n0_hat == pytest.approx(50 - i - remaining1, abs=1e-9)
        remaining1 -= x


def test_risk_counts_infeasible():
    d = dataset([(0.5, 1), (1.0, 1), (1.5, 0)], N=4, tau=5.0)
    with pytest.raises(InfeasibleError) as exc:
        risk_counts(d, 0.5, 2)
    assert exc.value.event_index == 2


def test_loglik_infeasible_reports_event():
    d = dataset([(0.5, 1), (1.0, 1), (1.5, 1), (2.0, 0)], N=6, tau=5.0)
    with pytest.raises(InfeasibleError) as exc:
        log_partial_likelihood(d, None, ModelParams(0.3, [1.0]))
    # N1 = 1.8 - 2 < 0 at the third arrival.
    assert exc.value.event_index == 2


def test_single_event_loglik():
    d = dataset([(1.0, 1)], N=2, tau=5.0)
    ev = log_partial_likelihood(d, None, ModelParams(0.5, [1.0]))
    assert ev.loglik == pytest.approx(math.log(0.5), abs=1e-15)


def test_tiny_dataset_matches_sequential_product():
    d = dataset([(0.3, 1), (0.9, 0), (1.4, 0), (2.2, 1)], N=6, tau=5.0)
    params = ModelParams(0.45, [1.6])
    ll = log_partial_likelihood(d, None, params).loglik
    assert ll == pytest.approx(sequential_loglik(d, 0.45, [1.6]), abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_factorization(seed):
    sim = small_survey(seed, N=60)
    d = sim.dataset
    part = small_partition(d, 2)
    rng = np.random.default_rng(seed)
    lo, hi = EventTable(d, part).pi_bounds(0.5)
    pi = rng.uniform(lo, hi)
    rho = rng.uniform(0.3, 3.0, size=2)
    ll = log_partial_likelihood(d, part, ModelParams(pi, rho)).loglik
    prod = 1.0
    for i in np.flatnonzero(d.observed):
        p1 = conditional_arrival_prob(d, ModelParams(pi, rho), i, part)
        prod *= p1 if d.labels[i] == 1 else 1 - p1
    assert math.exp(ll) == pytest.approx(prod, rel=1e-12)
    assert ll == pytest.approx(sequential_loglik(d, pi, rho, part), abs=1e-12)


def test_rho_one_is_ignorable():
    d = small_survey(2, N=50).dataset
    table = EventTable(d)
    n0, n1 = table.counts(0.35)
    terms = table.terms(0.35, [1.0])
    expected = np.where(table.x == 1, n1, n0) / (n0 + n1)
    np.testing.assert_allclose(np.exp(terms), expected, rtol=1e-14)


def _fd_checks(d, part, pi, rho, h=1e-6):
    params = ModelParams(pi, rho)
    ev = evaluate(d, part, params)
    f = lambda p, r: log_partial_likelihood(d, part, ModelParams(p, r)).loglik
    g = lambda p, r: score(d, part, ModelParams(p, r))
    fd_score = [(f(pi + h, rho) - f(pi - h, rho)) / (2 * h)]
    fd_hess = [(g(pi + h, rho) - g(pi - h, rho)) / (2 * h)]
    for k in range(len(rho)):
        hk = h * max(1.0, rho[k])
        e = np.zeros(len(rho))
        e[k] = hk
        fd_score.append((f(pi, rho + e) - f(pi, rho - e)) / (2 * hk))
        fd_hess.append((g(pi, rho + e) - g(pi, rho - e)) / (2 * hk))
    return ev, np.array(fd_score), np.array(fd_hess)


def _rel(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.abs(b), 1.0))


@pytest.mark.parametrize("K", [1, 3])
def test_finite_difference_derivatives(K):
    d = small_survey(5, N=200, tau=10.0, item_rate=0.7).dataset
    part = small_partition(d, K)
    rho = np.full(K, 1.8)
    ev, fs, fh = _fd_checks(d, part, 0.25, rho)
    assert _rel(fs, ev.score) < 1e-5
    assert _rel(fh, ev.hessian) < 1e-4


def test_hessian_structure():
    d = small_survey(6, N=60).dataset
    part = small_partition(d, 4)
    H = hessian(d, part, ModelParams(0.3, [0.8, 1.2, 2.0, 3.0]))
    np.testing.assert_array_equal(H, H.T)
    rr = H[1:, 1:]
    assert np.all(rr[~np.eye(4, dtype=bool)] == 0.0)


def test_profile_information_schur_oracle():
    d = small_survey(7, N=60).dataset
    params = ModelParams(0.3, [1.5])
    H = hessian(d, None, params)
    a, b, c = -H[0, 0], -H[0, 1], -H[1, 1]
    expected = a - b * b / c
    assert profile_information(d, None, params) == pytest.approx(expected, rel=1e-10)
    assert 1.0 / np.linalg.inv(-H)[0, 0] == pytest.approx(expected, rel=1e-10)


def test_singular_information_names_interval():
    blocks = (-5.0, np.array([1.0, 2.0]), np.array([-3.0, 0.0]))
    with pytest.raises(SingularInformationError) as exc:
        information_from_blocks(blocks)
    assert exc.value.interval == 1


def _relabel(d):
    labels = np.where(d.observed, 1 - d.labels, d.labels)
    return d.replace(labels=labels)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), u=st.floats(0.05, 0.95), r=st.floats(0.2, 5.0))
def test_label_complement_symmetry(seed, u, r):
    d = small_survey(seed, N=40, item_rate=0.8).dataset
    if d.n_labeled == 0:
        return
    lo, hi = EventTable(d).pi_bounds(0.5)
    if lo >= hi:
        return
    pi = lo + u * (hi - lo)
    ll = EventTable(d).loglik(pi, [r])
    ll_rel = EventTable(_relabel(d)).loglik(1 - pi, [1 / r])
    assert ll_rel == pytest.approx(ll, abs=1e-10)


def test_relabeled_fit_mirrors():
    d = small_survey(8, N=300, pi=0.3, tau=20.0).dataset
    a = fit(d)
    b = fit(_relabel(d))
    assert b.pi_hat == pytest.approx(1 - a.pi_hat, abs=1e-7)
    assert b.rho_hat[0] == pytest.approx(1 / a.rho_hat[0], rel=1e-6)


def test_trailing_unlabeled_event_is_neutral():
    rows = [(0.3, 1), (0.9, 0), (1.1, None), (1.4, 0), (2.2, 1), (3.0, None)]
    d = dataset(rows, N=12, tau=5.0)
    dropped = dataset(rows[:-1], N=12, tau=5.0)
    for pi, r in [(0.3, 1.0), (0.45, 2.5)]:
        assert EventTable(d).loglik(pi, [r]) == EventTable(dropped).loglik(pi, [r])
    # An earlier unlabeled arrival does matter.
    middle = dataset(rows[:2] + rows[3:], N=12, tau=5.0)
    assert EventTable(d).loglik(0.3, [1.0]) != EventTable(middle).loglik(0.3, [1.0])


def test_per_event_terms_sum():
    d = small_survey(9, N=80).dataset
    ev = log_partial_likelihood(d, None, ModelParams(0.3, [2.0]))
    assert ev.loglik == pytest.approx(math.fsum(ev.per_event_terms), abs=0)
    assert len(ev.per_event_terms) == d.n_labeled


def test_evaluation_serializes():
    d = small_survey(9, N=80).dataset
    out = evaluate(d, None, ModelParams(0.3, [2.0])).to_dict()
    assert set(out) >= {"loglik", "score", "hessian"}


def test_prorated_risk_count_error_is_misallocated_unlabeled():
    # Unlabeled arrivals are removed from the group-1 risk set at rate pi.
    # When the ratio exceeds 1, group 1 is over-represented among arrivals,
    # so the estimate overstates the group-1 risk set by exactly u1 - pi*u.
    from surveyhazard.simulator import simulate_survey, six_week_scenario
    sim = simulate_survey(six_week_scenario(population_size=20_000, item_response_rate=0.8, seed=5))
    d = sim.dataset
    table = EventTable(d, HazardPartition.constant(d.censor_time))
    pi = sim.true_pi
    _, n1 = table.counts(pi)

    order = np.argsort(sim.true_times)
    arrival_group = sim.true_labels[order][: len(d.times)]
    assert np.array_equal(np.sort(sim.true_times)[: len(d.times)], d.times)
    t_last = d.times[d.observed][-1]
    before = d.times < t_last
    u = np.sum(before & ~d.observed)
    u1 = np.sum(before & ~d.observed & (arrival_group == 1))
    remaining1 = np.sum((sim.true_labels == 1) & (sim.true_times >= t_last))
    assert n1[-1] - remaining1 == pytest.approx(u1 - pi * u, abs=1e-6)
    assert u1 / u > pi + 0.05
