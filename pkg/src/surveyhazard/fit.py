"""Maximum partial-likelihood estimation of the population proportion.

Newton's method on ``(logit pi, log rho_1, ..., log rho_K)`` by default. The
Hessian is an arrowhead matrix (dense first row/column, diagonal rho block),
so each Newton step is solved in O(K).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .domain import HazardPartition, SurveyDataset, break_ties
from .errors import (InfeasibleError, NotConvergedError,
                     SingularInformationError, ValidationError)
from .likelihood import (FEASIBILITY_MARGIN, EventTable, assemble_hessian,
                         information_from_blocks)

log = logging.getLogger(__name__)

BOUNDARY_TOL = 1e-6
MAX_BACKTRACKS = 60
ARMIJO = 1e-4
# Log-likelihood differences below ROUNDOFF * (|loglik| + n_events) are noise.
ROUNDOFF = 64 * np.finfo(float).eps
LOG_RHO_LIMIT = 30.0
MAX_RESTARTS = 3

# Weak-identification thresholds.
MIN_DAYS_PER_INTERVAL = 5.0
MAX_PI_SE = 0.1
MAX_CONDITION_NUMBER = 1e8


@dataclass(frozen=True)
class FitConfig:
    pi_init: Union[float, str] = "auto"
    rho_init: Union[float, str] = "auto"
    max_iterations: int = 200
    gradient_tolerance: float = 1e-6
    step_control: float = 0.5
    tie_seed: int = 0
    parametrization: str = "transformed"
    feasibility_margin: float = FEASIBILITY_MARGIN
    profile_scan: int = 41

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not self.gradient_tolerance > 0:
            raise ValueError("gradient_tolerance must be positive")
        if not 0 < self.step_control < 1:
            raise ValueError("step_control must lie in (0, 1)")
        if self.parametrization not in ("transformed", "raw"):
            raise ValueError("parametrization must be 'transformed' or 'raw'")
        if self.pi_init != "auto" and not 0 < float(self.pi_init) < 1:
            raise ValueError("pi_init must be 'auto' or lie in (0, 1)")
        if self.profile_scan < 0:
            raise ValueError("profile_scan must be nonnegative (0 disables the scan)")
        if self.rho_init != "auto" and not float(self.rho_init) > 0:
            raise ValueError("rho_init must be 'auto' or positive")

    def to_dict(self):
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass(frozen=True, eq=False)
class FitResult:
    pi_hat: float
    pi_se: float
    rho_hat: np.ndarray
    rho_se: np.ndarray
    loglik_at_max: float
    iterations: int
    converged: bool
    gradient_norm_at_exit: float
    tie_seed: int
    status: str = "converged"
    score: np.ndarray = field(default_factory=lambda: np.zeros(0))
    hessian: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    information: float = float("nan")
    pi_bounds: tuple = (0.0, 1.0)
    weak_identification_warning: Optional[str] = None
    warnings: tuple = ()
    loglik_trace: tuple = ()
    interval_names: tuple = ()

    @property
    def K(self):
        return len(self.rho_hat)

    def to_dict(self):
        return {
            "pi_hat": self.pi_hat,
            "pi_se": self.pi_se,
            "rho_hat": self.rho_hat.tolist(),
            "rho_se": self.rho_se.tolist(),
            "loglik_at_max": self.loglik_at_max,
            "iterations": self.iterations,
            "converged": self.converged,
            "gradient_norm_at_exit": self.gradient_norm_at_exit,
            "tie_seed": self.tie_seed,
            "status": self.status,
            "score": self.score.tolist(),
            "hessian": self.hessian.tolist(),
            "information": self.information,
            "pi_bounds": list(self.pi_bounds),
            "weak_identification_warning": self.weak_identification_warning,
            "warnings": list(self.warnings),
            "loglik_trace": list(self.loglik_trace),
            "interval_names": list(self.interval_names),
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        for key in ("rho_hat", "rho_se", "score"):
            data[key] = np.asarray(data[key], float)
        data["hessian"] = np.asarray(data["hessian"], float).reshape(len(data["score"]), -1)
        for key in ("pi_bounds", "warnings", "loglik_trace", "interval_names"):
            data[key] = tuple(data[key])
        return cls(**data)


def _logit(p):
    return math.log(p / (1.0 - p))


def _expit(z):
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


class _Problem:
    """Objective in working coordinates with feasibility handling."""

    def __init__(self, table: EventTable, lo, hi, transformed):
        self.table = table
        self.lo, self.hi = lo, hi
        self.transformed = transformed

    def to_params(self, w):
        if self.transformed:
            return _expit(w[0]), np.exp(w[1:])
        return float(w[0]), np.asarray(w[1:], float)

    def to_working(self, pi, rho):
        if self.transformed:
            return np.concatenate([[_logit(pi)], np.log(rho)])
        return np.concatenate([[pi], rho])

    def feasible(self, w):
        if not np.all(np.isfinite(w)):
            return False
        pi, rho = self.to_params(w)
        if not (self.lo <= pi <= self.hi) or not (0.0 < pi < 1.0):
            return False
        if self.transformed:
            return bool(np.all(np.abs(w[1:]) <= LOG_RHO_LIMIT))
        return bool(np.all(rho > 0)) and bool(np.all(np.isfinite(np.log(rho))))

    def loglik(self, w):
        pi, rho = self.to_params(w)
        return self.table.loglik(pi, rho)

    def newton_system(self, w):
        """Gradient and negated-Hessian arrowhead blocks in working coordinates."""
        pi, rho = self.to_params(w)
        ll, g, (hpp, hpr, hrr) = self.table.derivatives(pi, rho)
        if self.transformed:
            q = pi * (1.0 - pi)
            gw = np.concatenate([[g[0] * q], g[1:] * rho])
            a = -(hpp * q * q + g[0] * q * (1.0 - 2.0 * pi))
            b = -(hpr * q * rho)
            c = -(hrr * rho * rho + g[1:] * rho)
        else:
            gw = g.copy()
            a, b, c = -hpp, -hpr, -hrr
        return ll, g, gw, a, b, c


def solve_arrowhead(a, b, c, g):
    """Solve ``[[a, b'], [b, diag(c)]] s = g``; None unless the matrix is positive definite."""
    if not np.all(c > 0):
        return None
    schur = a - np.sum(b * b / c)
    if not schur > 0:
        return None
    s0 = (g[0] - np.sum(b * g[1:] / c)) / schur
    return np.concatenate([[s0], (g[1:] - b * s0) / c])


def _shifted_step(a, b, c, g):
    """Newton step on the negated Hessian plus ``mu * I``, smallest working ``mu``."""
    scale = max(abs(a), float(np.max(np.abs(c))), 1.0)
    mu = 1e-6 * scale
    while True:
        step = solve_arrowhead(a + mu, b, c + mu, g)
        if step is not None:
            return step
        mu *= 4.0


def _line_search(prob, w, ll, step, gw, shrink, noise):
    """Armijo backtracking; returns ``(w_new, loglik)`` or None.

    With ``noise`` given, a full step whose predicted gain is below it is
    accepted as long as the loss stays within ``noise`` (roundoff regime).
    """
    slope = float(np.dot(step, gw))
    t = 1.0
    for _ in range(MAX_BACKTRACKS):
        trial = w + t * step
        if prob.feasible(trial):
            ll_new = prob.loglik(trial)
            if ll_new >= ll + ARMIJO * t * slope:
                return trial, ll_new
            if noise is not None and t == 1.0 and slope < noise and ll_new >= ll - noise:
                return trial, ll_new
        t *= shrink
    return None


def _start(table: EventTable, cfg: FitConfig, lo, hi):
    if cfg.pi_init == "auto":
        pi0 = float(np.mean(table.x))
    else:
        pi0 = float(cfg.pi_init)
    if not lo <= pi0 <= hi:
        pi0 = min(max(pi0, lo), hi)
    if pi0 in (lo, hi) and hi > lo:
        # Start strictly inside so both directions are available.
        pi0 = lo + 0.5 * (hi - lo) if hi - lo < 1e-9 else min(max(pi0, lo + 1e-9), hi - 1e-9)
    rho0 = 1.0 if cfg.rho_init == "auto" else float(cfg.rho_init)
    return pi0, np.full(table.K, rho0)


def profile_rho(table: EventTable, pi, rho0=None, tol=1e-10, max_iter=200):
    """Maximize over each hazard ratio with ``pi`` held fixed.

    The rho blocks are independent, and each block is strictly concave in
    ``log rho``, so a damped one-dimensional Newton iteration per block
    converges. Returns ``(rho, loglik)``.
    """
    K = table.K
    z = np.zeros(K) if rho0 is None else np.log(np.asarray(rho0, float))
    n0, n1 = table.counts(pi)
    x, k = table.x, table.k

    def block_ll(z):
        r = np.exp(z)[k]
        return np.bincount(k, weights=x * np.log(r) - np.log(n0 + r * n1), minlength=K)

    cur = block_ll(z)
    sizes = np.bincount(k, minlength=K)
    for _ in range(max_iter):
        r = np.exp(z)[k]
        p = r * n1 / (n0 + r * n1)
        grad = np.bincount(k, weights=x - p, minlength=K)
        curv = np.bincount(k, weights=p * (1.0 - p), minlength=K)
        if np.all(np.abs(grad) < tol * np.maximum(1.0, curv)):
            break
        step = np.divide(grad, curv, out=np.sign(grad), where=curv > 0)
        # Gains below summation roundoff cannot be resolved by the test below.
        noise = ROUNDOFF * (np.abs(cur) + sizes)
        active = (np.abs(grad) >= tol * np.maximum(1.0, curv)) & (grad * step > noise)
        if not active.any():
            break
        t = np.ones(K)
        for _ in range(MAX_BACKTRACKS):
            znew = np.clip(z + np.where(active, t * step, 0.0), -LOG_RHO_LIMIT, LOG_RHO_LIMIT)
            new = block_ll(znew)
            bad = active & (new < cur - noise)
            if not bad.any():
                break
            t = np.where(bad, t * 0.5, t)
        z, cur = znew, np.maximum(new, cur)
    rho = np.exp(z)
    return rho, table.loglik(pi, rho)


def _boundary_side(pi, lo, hi):
    if pi - lo <= BOUNDARY_TOL:
        return "lower"
    if hi - pi <= BOUNDARY_TOL:
        return "upper"
    return None


def _pinned(table, pi, lo, hi):
    """True if ``pi`` is at a bound and the profile likelihood rises through it.

    The raw score in pi may point inward while the rho values lag behind,
    so the test uses the score after maximizing over rho at the bound.
    """
    side = _boundary_side(pi, lo, hi)
    if side is None:
        return False
    bound = lo if side == "lower" else hi
    rho, _ = profile_rho(table, bound)
    u_pi = table.derivatives(bound, rho)[1][0]
    return u_pi < 0 if side == "lower" else u_pi > 0


def _ascend(prob, w, cfg, max_iterations, trace):
    """Damped Newton ascent from ``w``; appends accepted logliks to ``trace``.

    Returns ``(w, status, iterations)`` with status ``converged``,
    ``boundary``, ``stalled`` or ``max_iterations``.
    """
    table, lo, hi = prob.table, prob.lo, prob.hi
    status = "max_iterations"
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        ll, g, gw, a, b, c = prob.newton_system(w)
        if np.max(np.abs(g)) < cfg.gradient_tolerance and solve_arrowhead(a, b, c, gw) is not None:
            status = "converged"
            iterations -= 1
            break
        step = solve_arrowhead(a, b, c, gw)
        newton = step is not None and np.dot(step, gw) > 0
        noise = ROUNDOFF * (abs(ll) + len(table))
        if newton:
            found = _line_search(prob, w, ll, step, gw, cfg.step_control, noise)
        else:
            # Non-concave region: try a shifted Newton step and a scaled
            # gradient step, keep whichever ends higher.
            diag = np.concatenate([[a], c])
            candidates = [_shifted_step(a, b, c, gw), gw / np.maximum(np.abs(diag), 1e-8)]
            found = None
            for cand in candidates:
                r = _line_search(prob, w, ll, cand, gw, cfg.step_control, None)
                if r is not None and (found is None or r[1] > found[1]):
                    found = r
        if found is None:
            pi, _ = prob.to_params(w)
            status = "boundary" if _pinned(table, pi, lo, hi) else "stalled"
            break
        w, ll = found
        trace.append(ll)
        pi, _ = prob.to_params(w)
        if _pinned(table, pi, lo, hi):
            status = "boundary"
            break
    return w, status, iterations


def _profile_scan(table, lo, hi, n):
    """Best ``(pi, rho, loglik)`` of the profile over ``n`` evenly spaced values."""
    best = (None, None, -np.inf)
    rho = None
    for pi in np.linspace(lo, hi, n):
        rho, ll = profile_rho(table, float(pi), rho)
        if ll > best[2]:
            best = (float(pi), rho, ll)
    return best


def fit(d: SurveyDataset, partition: Optional[HazardPartition] = None,
        cfg: FitConfig = FitConfig()) -> FitResult:
    """Maximize the partial likelihood over ``(pi, rho_1, ..., rho_K)``.

    Newton steps with Armijo backtracking; steps leaving the feasible region
    are shrunk by ``cfg.step_control``. Where the negated Hessian is not
    positive definite, the diagonal is shifted until it is (a Levenberg-style
    damped Newton step), which still ascends and still costs O(K).
    After convergence the profile of ``pi`` is scanned at ``cfg.profile_scan``
    evenly spaced feasible values; a higher scan point restarts the ascent.
    If the maximum sits on the feasibility boundary of ``pi`` the estimate is
    returned with ``status="boundary"`` and a warning.

    Raises
    ------
    ValidationError
        If an interval has no labeled arrival or only one label value occurs.
    SingularInformationError
        If some interval's labeled arrivals all carry the same label.
    InfeasibleError
        If no value of ``pi`` is feasible.
    NotConvergedError
        After ``cfg.max_iterations`` without meeting the gradient tolerance.
        The partial result is attached as ``.result``.
    """
    if partition is None:
        partition = HazardPartition.constant(d.censor_time)
    d = break_ties(d, cfg.tie_seed, boundaries=partition.edges)
    partition.check_identifiable(d)
    table = EventTable(d, partition)
    if len(np.unique(table.x)) < 2:
        raise ValidationError("both label values must occur among labeled arrivals")
    ones = np.bincount(table.k, weights=table.x, minlength=table.K)
    sizes = np.bincount(table.k, minlength=table.K)
    one_sided = np.flatnonzero((ones == 0) | (ones == sizes))
    if len(one_sided):
        k = int(one_sided[0])
        # The likelihood keeps rising as rho_k goes to 0 or infinity.
        raise SingularInformationError(
            f"interval {partition.names[k]!r} has labeled arrivals of one group only; "
            "its hazard ratio has no finite maximizer", interval=k)

    lo, hi = table.pi_bounds(cfg.feasibility_margin)
    lo, hi = max(lo, 1e-12), min(hi, 1.0 - 1e-12)
    if lo > hi:
        raise InfeasibleError("no value of pi keeps every risk count feasible")

    prob = _Problem(table, lo, hi, cfg.parametrization == "transformed")
    pi0, rho0 = _start(table, cfg, lo, hi)
    w = prob.to_working(pi0, rho0)
    trace = [prob.loglik(w)]
    w, status, iterations = _ascend(prob, w, cfg, cfg.max_iterations, trace)

    # Far from the asymptotic regime the profile can have several local
    # maxima; a coarse scan over the feasible range catches a better one.
    for _ in range(MAX_RESTARTS):
        if cfg.profile_scan < 2 or status == "max_iterations":
            break
        pi_c, rho_c = prob.to_params(w)
        if status == "boundary":
            pi_c = lo if _boundary_side(pi_c, lo, hi) == "lower" else hi
            rho_c, _ = profile_rho(table, pi_c, rho_c)
        ll_c = table.loglik(pi_c, rho_c)
        pi_s, rho_s, ll_s = _profile_scan(table, lo, hi, cfg.profile_scan)
        if not ll_s > ll_c + 1e-9 * (1.0 + abs(ll_c)):
            break
        log.info("profile scan found a higher point at pi=%.6g; restarting", pi_s)
        w = prob.to_working(min(max(pi_s, lo), hi), rho_s)
        trace.append(ll_s)
        w, status, more = _ascend(prob, w, cfg, cfg.max_iterations - iterations, trace)
        iterations += more

    pi_hat, rho_hat = prob.to_params(w)
    warnings = []
    if status == "boundary":
        pi_hat = lo if _boundary_side(pi_hat, lo, hi) == "lower" else hi
        rho_hat, ll = profile_rho(table, pi_hat, rho_hat)
        trace.append(ll)
        warnings.append(
            f"pi estimate pinned at the feasibility boundary {pi_hat:.8g}; "
            "standard errors are unreliable"
        )

    ll, g, blocks = table.derivatives(pi_hat, rho_hat)
    H = assemble_hessian(blocks)
    info = information_from_blocks(blocks)
    neg = -H
    pd = bool(np.all(np.linalg.eigvalsh(neg) > 0))
    pi_se = 1.0 / math.sqrt(info) if info > 0 else float("nan")
    rho_se = _rho_standard_errors(blocks)
    grad_norm = float(np.max(np.abs(g)))
    converged = status == "converged" or (
        status == "stalled" and grad_norm < cfg.gradient_tolerance and pd
    )
    if status == "stalled":
        status = "converged" if converged else "stalled"
        if not converged:
            warnings.append("line search could not improve the objective before the gradient tolerance was met")
    if converged and not pd:
        converged = False
        status = "not_positive_definite"
        warnings.append("negated Hessian is not positive definite at the solution")

    result = FitResult(
        pi_hat=float(pi_hat), pi_se=float(pi_se), rho_hat=np.asarray(rho_hat, float),
        rho_se=rho_se, loglik_at_max=float(ll), iterations=iterations, converged=converged,
        gradient_norm_at_exit=grad_norm, tie_seed=cfg.tie_seed, status=status,
        score=g, hessian=H, information=info, pi_bounds=(lo, hi),
        warnings=tuple(warnings), loglik_trace=tuple(trace), interval_names=partition.names,
    )
    weak = weak_identification_check(d, partition, result)
    if weak is not None:
        log.warning(weak)
        result = _replace(result, weak_identification_warning=weak)
    if status == "max_iterations":
        raise NotConvergedError(
            f"no convergence after {cfg.max_iterations} iterations "
            f"(gradient norm {grad_norm:.3g})", result=result)
    return result


def _replace(result, **changes):
    data = dict(result.__dict__)
    data.update(changes)
    return FitResult(**data)


def _rho_standard_errors(blocks):
    """Diagonal of the inverse negated Hessian for the rho entries."""
    h_pipi, h_pirho, h_rhorho = blocks
    a, b, c = -h_pipi, -h_pirho, -h_rhorho
    with np.errstate(divide="ignore", invalid="ignore"):
        schur = a - np.sum(b * b / c)
        var = 1.0 / c + (b / c) ** 2 / schur
    return np.where(var > 0, np.sqrt(np.abs(var)), np.nan)


def weak_identification_check(d: SurveyDataset, partition: HazardPartition,
                              result: FitResult) -> Optional[str]:
    """Flag fits whose hazard-ratio partition is too fine for ``pi``.

    Any of: the mean number of labeled arrivals per interval is below
    ``MIN_DAYS_PER_INTERVAL`` days of average daily volume; ``pi_se`` exceeds
    ``MAX_PI_SE``; or the negated Hessian's condition number exceeds
    ``MAX_CONDITION_NUMBER``.
    """
    reasons = []
    counts = partition.labeled_counts(d)
    days = max(d.n_days(), 1)
    daily = counts.sum() / days
    per_interval = counts.sum() / partition.K
    if per_interval < MIN_DAYS_PER_INTERVAL * daily:
        reasons.append(
            f"{per_interval:.1f} labeled arrivals per interval is less than "
            f"{MIN_DAYS_PER_INTERVAL:g} days of average volume ({daily:.1f}/day)"
        )
    if not math.isfinite(result.pi_se) or result.pi_se > MAX_PI_SE:
        reasons.append(f"pi standard error {result.pi_se:.3g} exceeds {MAX_PI_SE:g}")
    if result.hessian.size:
        with np.errstate(all="ignore"):
            cond = np.linalg.cond(-result.hessian)
        if not math.isfinite(cond) or cond > MAX_CONDITION_NUMBER:
            reasons.append(f"Hessian condition number {cond:.3g} exceeds {MAX_CONDITION_NUMBER:g}")
    if not reasons:
        return None
    return "pi may be weakly identified: " + "; ".join(reasons)


def profile_curve(d: SurveyDataset, partition: Optional[HazardPartition],
                  pi_grid: Sequence[float], tie_seed=0, margin=FEASIBILITY_MARGIN):
    """Profile log-likelihood ``max_rho loglik(pi, rho)`` over a grid of ``pi``.

    Grid points outside the feasible range are omitted from the output.
    Returns a list of ``(pi, loglik)`` pairs.
    """
    if partition is None:
        partition = HazardPartition.constant(d.censor_time)
    d = break_ties(d, tie_seed, boundaries=partition.edges)
    table = EventTable(d, partition)
    lo, hi = table.pi_bounds(margin)
    out = []
    rho = None
    for pi in pi_grid:
        pi = float(pi)
        if not (lo <= pi <= hi and 0 < pi < 1):
            continue
        rho, ll = profile_rho(table, pi, rho)
        out.append((pi, ll))
    return out


def fit_or_none(d, partition=None, cfg=FitConfig()):
    """Fit, returning None instead of raising on estimation failures."""
    try:
        return fit(d, partition, cfg)
    except (NotConvergedError, SingularInformationError, InfeasibleError) as exc:
        log.info("fit failed: %s", exc)
        return None
