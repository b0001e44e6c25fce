"""Partial likelihood for a population proportion under a piecewise-constant
hazard ratio, with exact first and second derivatives.

At each labeled arrival the label is 1 with probability
``rho_k * N1 / (N0 + rho_k * N1)``, where ``N0`` and ``N1`` are the estimated
numbers of not-yet-responded members of each group just before the arrival:

    N1(t) = (N - u(t)) * pi - s1(t)
    N0(t) = (N - u(t)) * (1 - pi) - s0(t)

with ``u`` the unlabeled arrivals and ``s1``/``s0`` the labeled arrivals of
each group strictly before ``t``. Unlabeled arrivals contribute nothing to
the likelihood except through ``u``.

Derivatives are taken with respect to ``pi`` through the effective
population ``M = N - u(t)``; when there is no item nonresponse ``M == N``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .domain import HazardPartition, SurveyDataset
from .errors import InfeasibleError, SingularInformationError, ValidationError

# Counts entering a logarithm must be at least this large during optimization.
FEASIBILITY_MARGIN = 0.5


@dataclass(frozen=True)
class ModelParams:
    pi: float
    rho: np.ndarray

    def __post_init__(self):
        rho = np.atleast_1d(np.asarray(self.rho, float)).copy()
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "pi", float(self.pi))
        if not 0.0 < self.pi < 1.0:
            raise ValueError(f"pi must lie in (0, 1), got {self.pi}")
        if not np.all(rho > 0) or not np.all(np.isfinite(rho)):
            raise ValueError("rho entries must be positive and finite")

    @property
    def K(self):
        return len(self.rho)

    def as_vector(self):
        return np.concatenate([[self.pi], self.rho])

    @classmethod
    def from_vector(cls, v):
        return cls(v[0], v[1:])


@dataclass(frozen=True)
class RiskCounts:
    n0_hat: float
    n1_hat: float
    event_index: int


@dataclass(frozen=True)
class LikelihoodEvaluation:
    loglik: float
    score: Optional[np.ndarray] = None
    hessian: Optional[np.ndarray] = None
    per_event_terms: Optional[np.ndarray] = None

    def to_dict(self):
        out = {"loglik": self.loglik}
        if self.score is not None:
            out["score"] = self.score.tolist()
        if self.hessian is not None:
            out["hessian"] = self.hessian.tolist()
        if self.per_event_terms is not None:
            out["per_event_terms"] = self.per_event_terms.tolist()
        return out


def _require_ordered(d: SurveyDataset):
    if not d.is_ordered:
        raise ValidationError("event times must be strictly increasing; run break_ties first")


class EventTable:
    """Prefix sums over the sorted arrivals, restricted to labeled events.

    Building the table is O(n); every evaluation afterwards is a handful of
    vectorized passes over the labeled events.
    """

    def __init__(self, d: SurveyDataset, partition: Optional[HazardPartition] = None):
        _require_ordered(d)
        N = d.population_size
        obs = d.observed
        x_all = np.where(obs, d.labels, 0)
        unlabeled_before = np.concatenate([[0], np.cumsum(~obs)[:-1]])
        s1_before = np.concatenate([[0], np.cumsum(obs & (x_all == 1))[:-1]])
        s0_before = np.concatenate([[0], np.cumsum(obs & (x_all == 0))[:-1]])

        self.population_size = N
        self.event_index = np.flatnonzero(obs)
        self.x = x_all[obs].astype(float)
        self.remaining = (N - unlabeled_before[obs]).astype(float)
        self.s1 = s1_before[obs].astype(float)
        self.s0 = s0_before[obs].astype(float)
        self.times = d.times[obs]
        if partition is None:
            self.K = 1
            self.k = np.zeros(len(self.x), dtype=np.int64)
        else:
            self.K = partition.K
            self.k = partition.assign(self.times)

    def __len__(self):
        return len(self.x)

    def counts(self, pi):
        n1 = self.remaining * pi - self.s1
        n0 = self.remaining * (1.0 - pi) - self.s0
        return n0, n1

    def pi_bounds(self, margin=FEASIBILITY_MARGIN):
        """Closed interval of ``pi`` for which every labeled event is feasible.

        The count belonging to the event's own label must be at least
        ``margin``; the other count must be nonnegative.
        """
        need1 = np.where(self.x == 1, margin, 0.0)
        need0 = np.where(self.x == 0, margin, 0.0)
        lo = np.max((self.s1 + need1) / self.remaining)
        hi = np.min(1.0 - (self.s0 + need0) / self.remaining)
        return float(lo), float(hi)

    def first_infeasible(self, pi, margin=0.0):
        """Event index (into the dataset) of the first infeasible labeled event, or None."""
        n0, n1 = self.counts(pi)
        own = np.where(self.x == 1, n1, n0)
        other = np.where(self.x == 1, n0, n1)
        bad = (own <= 0) | (own < margin) | (other < 0)
        if not bad.any():
            return None
        return int(self.event_index[np.argmax(bad)])

    def check(self, pi, margin=0.0):
        j = self.first_infeasible(pi, margin)
        if j is not None:
            raise InfeasibleError(f"risk count not positive at event {j} for pi={pi!r}", event_index=j)

    def _rho(self, rho):
        rho = np.atleast_1d(np.asarray(rho, float))
        if len(rho) != self.K:
            raise ValueError(f"expected {self.K} hazard ratios, got {len(rho)}")
        return rho

    def terms(self, pi, rho):
        """Per-event log conditional probabilities of the observed labels."""
        n0, n1 = self.counts(pi)
        r = self._rho(rho)[self.k]
        own = np.where(self.x == 1, r * n1, n0)
        return np.log(own) - np.log(n0 + r * n1)

    def loglik(self, pi, rho):
        return math.fsum(self.terms(pi, rho))

    def loglik_by_interval(self, pi, rho):
        return np.bincount(self.k, weights=self.terms(pi, rho), minlength=self.K)

    def derivatives(self, pi, rho):
        """Return ``(loglik, score, hessian_blocks)``.

        ``hessian_blocks`` is ``(h_pipi, h_pirho, h_rhorho)``: a scalar, the
        pi/rho cross column and the diagonal of the rho block (the rho-rho
        off-diagonal entries vanish identically).
        """
        rho = self._rho(rho)
        x, M, k, K = self.x, self.remaining, self.k, self.K
        n0, n1 = self.counts(pi)
        r = rho[k]
        D = n0 + r * n1
        is1 = x == 1
        inv1 = np.divide(1.0, n1, out=np.zeros_like(n1), where=is1)
        inv0 = np.divide(1.0, n0, out=np.zeros_like(n0), where=~is1)

        own = np.where(is1, r * n1, n0)
        ll = math.fsum(np.log(own) - np.log(D))

        u_pi = math.fsum(M * inv1 - M * inv0 - (r - 1.0) * M / D)
        u_rho = np.bincount(k, weights=x / r - n1 / D, minlength=K)

        M2 = M * M
        D2 = D * D
        h_pipi = math.fsum(-M2 * inv1 ** 2 - M2 * inv0 ** 2 + M2 * (1.0 - r) ** 2 / D2)
        h_pirho = np.bincount(k, weights=-M * (n0 + n1) / D2, minlength=K)
        h_rhorho = np.bincount(k, weights=-x / (r * r) + n1 * n1 / D2, minlength=K)
        return ll, np.concatenate([[u_pi], u_rho]), (h_pipi, h_pirho, h_rhorho)


def assemble_hessian(blocks):
    h_pipi, h_pirho, h_rhorho = blocks
    K = len(h_rhorho)
    H = np.zeros((K + 1, K + 1))
    H[0, 0] = h_pipi
    H[0, 1:] = h_pirho
    H[1:, 0] = h_pirho
    H[np.arange(1, K + 1), np.arange(1, K + 1)] = h_rhorho
    return H


def _table(d, partition):
    return EventTable(d, partition)


def _checked(d, partition, params: ModelParams):
    table = _table(d, partition)
    table.check(params.pi)
    return table


def risk_counts(d: SurveyDataset, pi: float, upto_event_index: int) -> RiskCounts:
    """Estimated at-risk counts just before the arrival at position ``upto_event_index``.

    Positions index the time-sorted records (0-based); the arrival itself is
    still at risk. Raises :class:`InfeasibleError` if either count is not
    positive.
    """
    _require_ordered(d)
    i = int(upto_event_index)
    if not 0 <= i < d.n:
        raise IndexError(f"event index {i} out of range")
    obs = d.observed[:i]
    lab = d.labels[:i]
    remaining = d.population_size - np.count_nonzero(~obs)
    s1 = np.count_nonzero(obs & (lab == 1))
    s0 = np.count_nonzero(obs & (lab == 0))
    n1 = remaining * pi - s1
    n0 = remaining * (1.0 - pi) - s0
    if n0 <= 0 or n1 <= 0:
        raise InfeasibleError(f"risk counts ({n0}, {n1}) not positive at event {i}", event_index=i)
    return RiskCounts(float(n0), float(n1), i)


def conditional_arrival_prob(d: SurveyDataset, params: ModelParams, event_index: int,
                             partition: Optional[HazardPartition] = None) -> float:
    """Probability that the labeled arrival at ``event_index`` belongs to group 1."""
    if not d.observed[event_index]:
        raise ValueError(f"event {event_index} is unlabeled")
    rc = risk_counts(d, params.pi, event_index)
    k = 0 if partition is None else int(partition.assign([d.times[event_index]])[0])
    r = params.rho[k]
    return float(r * rc.n1_hat / (rc.n0_hat + r * rc.n1_hat))


def log_partial_likelihood(d: SurveyDataset, partition: Optional[HazardPartition],
                           params: ModelParams) -> LikelihoodEvaluation:
    table = _checked(d, partition, params)
    terms = table.terms(params.pi, params.rho)
    return LikelihoodEvaluation(loglik=math.fsum(terms), per_event_terms=terms)


def evaluate(d: SurveyDataset, partition: Optional[HazardPartition],
             params: ModelParams) -> LikelihoodEvaluation:
    """Log-likelihood, score and Hessian in one pass."""
    table = _checked(d, partition, params)
    ll, g, blocks = table.derivatives(params.pi, params.rho)
    return LikelihoodEvaluation(loglik=ll, score=g, hessian=assemble_hessian(blocks))


def score(d, partition, params) -> np.ndarray:
    """Gradient ``(U_pi, U_rho_1, ..., U_rho_K)``."""
    return evaluate(d, partition, params).score


def hessian(d, partition, params) -> np.ndarray:
    return evaluate(d, partition, params).hessian


def information_from_blocks(blocks, rel_tol=1e-12):
    """Observed profile information for pi from raw Hessian blocks.

    Uses the negated Hessian so a proper maximum gives a positive value.
    """
    h_pipi, h_pirho, h_rhorho = blocks
    scale = max(np.max(np.abs(h_rhorho)), 1.0)
    tiny = np.abs(h_rhorho) <= rel_tol * scale
    if tiny.any():
        k = int(np.argmax(tiny))
        raise SingularInformationError(f"hazard ratio {k} has zero curvature", interval=k)
    return float(-(h_pipi - np.sum(h_pirho ** 2 / h_rhorho)))


def profile_information(d: SurveyDataset, partition: Optional[HazardPartition],
                        params: ModelParams) -> float:
    table = _checked(d, partition, params)
    _, _, blocks = table.derivatives(params.pi, params.rho)
    return information_from_blocks(blocks)
