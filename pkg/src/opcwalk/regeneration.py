"""Regeneration times of the walk and the statistics built on their increments.

A backbone site is in ``S_2m`` when every open path of backbone sites
leaving it is back at the same space point after ``2m`` steps, so the walk
returns there whatever the weights. The regeneration times are

    T_n = inf{k >= T_{n-1} + 2m : the local path of length k - 2m ends at a
              backbone site of S_2m},

with ``T_0 = 0``. The local path of length ``j`` ends on the walk itself
exactly when the step into time ``j`` took the head of its permutation and
no earlier step ``i <= j - 2`` passed over a successor whose truncated path
length reaches ``j - i - 2``. The compiled walker tracks this condition
while it walks, so candidate times are recognized without rebuilding local
paths; the S_2m test runs only at those times.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import _core
from .environment import EnvironmentHandle, as_site, in_backbone
from .errors import ContractViolation, InsufficientDataError
from .seeding import stream_seed

DEFAULT_BUDGET = 10**7


def is_S2m(s, m: int, env: EnvironmentHandle) -> bool:
    """True iff every backbone path from ``s`` is back at the space point of ``s`` after ``2m`` steps."""
    s = as_site(s)
    if m < 1:
        raise ContractViolation("m must be >= 1")
    if not in_backbone(s, env):
        raise ContractViolation(f"{s} is not in the horizon backbone")
    return bool(_core.is_s2m(env.ienv, env.fenv, env.mem, env.row(s), int(m)))


def s2m_flags(sites, m: int, env: EnvironmentHandle) -> np.ndarray:
    """Per site row: -1 outside the backbone, else 1 for S_2m and 0 otherwise."""
    rows = np.ascontiguousarray(sites, dtype=np.int64)
    return _core.s2m_of_sites(env.ienv, env.fenv, env.mem, rows, int(m))


@dataclass
class RegenerationRecord:
    """Regeneration times ``T_0 = 0 < T_1 < ...`` and the walk's space point at each of them.

    ``stop_reason`` is ``"complete"`` when ``count`` regenerations were
    found, ``"budget"`` when the step budget ran out first and
    ``"dead_end"`` when the walk hit a horizon dead end.
    """

    m: int
    horizon: int
    times: np.ndarray
    space_marks: np.ndarray
    steps: int
    stop_reason: str = "complete"
    checks: int = 0

    @property
    def complete(self) -> bool:
        return self.stop_reason == "complete"

    @property
    def taus(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def Y(self) -> np.ndarray:
        return np.diff(self.space_marks, axis=0)

    @property
    def increments(self) -> list:
        return [(tuple(int(v) for v in y), int(t)) for y, t in zip(self.Y, self.taus)]

    def to_csv(self) -> str:
        d = self.space_marks.shape[1]
        out = io.StringIO()
        out.write(",".join(["n", "T_n", "tau_n"] + [f"Y_{i + 1}" for i in range(d)]) + "\n")
        for n in range(1, len(self.times)):
            y = self.space_marks[n] - self.space_marks[n - 1]
            out.write(",".join(str(int(v)) for v in [n, self.times[n], self.times[n] - self.times[n - 1], *y]) + "\n")
        return out.getvalue()


_STOP = {_core.OK: "complete", _core.DEAD_END: "dead_end", _core.BUDGET: "budget"}


def find_regenerations(start, count: int, m: int, env: EnvironmentHandle, rng=None,
                       budget: int = DEFAULT_BUDGET) -> RegenerationRecord:
    """Walk from ``start`` until ``count`` regenerations are found or ``budget`` steps are spent."""
    start = as_site(start)
    if m < 1 or count < 1:
        raise ContractViolation("m and count must be >= 1")
    if env.ienv[_core.I_FULL] == 1:
        raise ContractViolation("regenerations never occur when every site is open (p = 1)")
    if not in_backbone(start, env):
        raise ContractViolation(f"start {start} is not in the horizon backbone")
    status, times, marks, steps, checks = _core.run_regenerations(
        env.ienv, env.fenv, env.mem, np.uint64(stream_seed(rng)), env.row(start), int(m), int(count), int(budget))
    all_times = np.concatenate([[0], times]).astype(np.int64)
    all_marks = np.vstack([np.asarray(start.x, dtype=np.int64)[None, :], marks]).astype(np.int64)
    return RegenerationRecord(int(m), int(env.lattice.horizon), all_times, all_marks, int(steps), _STOP[int(status)],
                              int(checks))


def pooled_increments(records) -> tuple:
    """``(Y, tau)`` of all records concatenated in order; ``Y`` has shape ``(k, d)``."""
    ys = [r.Y for r in records if len(r.times) > 1]
    ts = [r.taus for r in records if len(r.times) > 1]
    if not ys:
        return np.zeros((0, 1)), np.zeros(0)
    return np.vstack(ys).astype(float), np.concatenate(ts).astype(float)


@dataclass
class DriftEstimate:
    mu_hat: np.ndarray
    stderr: np.ndarray
    n_increments: int

    def to_dict(self) -> dict:
        return {"mu_hat": self.mu_hat.tolist(), "stderr": self.stderr.tolist(), "n_increments": self.n_increments}


def ratio_drift(Y, tau, batches: int = 20) -> DriftEstimate:
    """Ratio estimator ``mean(Y) / mean(tau)`` with a batch-means standard error.

    The increments are cut into ``batches`` contiguous batches; the
    standard error is the standard deviation of the per-batch ratios over
    the square root of the number of batches (NaN with fewer than 2).
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    tau = np.asarray(tau, dtype=float)
    n = len(tau)
    if n == 0:
        raise InsufficientDataError("no regeneration increments")
    mu = Y.sum(axis=0) / tau.sum()
    nb = min(batches, n)
    if nb < 2:
        return DriftEstimate(mu, np.full_like(mu, np.nan), n)
    parts = np.array_split(np.arange(n), nb)
    ratios = np.array([Y[p].sum(axis=0) / tau[p].sum() for p in parts])
    return DriftEstimate(mu, ratios.std(axis=0, ddof=1) / math.sqrt(nb), n)


def estimate_drift(records, batches: int = 20) -> DriftEstimate:
    """Drift ``mu = E[Y_1] / E[tau_1]`` from the pooled increments of the records."""
    Y, tau = pooled_increments(records)
    return ratio_drift(Y, tau, batches)


@dataclass
class CovarianceEstimate:
    sigma: np.ndarray
    lag_cutoff: int
    per_lag_terms: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"sigma": self.sigma.tolist(), "lag_cutoff": self.lag_cutoff,
                "per_lag_terms": [t.tolist() for t in self.per_lag_terms]}


def estimate_covariance(records, lag_cutoff: int = 20) -> CovarianceEstimate:
    """Long-run covariance of the centred increments ``Z_n = Y_n - mean(Y)``.

    ``sigma_ij = Cov(Z_0i, Z_0j) + 2 * sum_{k=1}^{L} Cov(Z_0i, Z_kj)`` with
    empirical autocovariances (normalized by the sample size), symmetrized
    and with negative eigenvalues clipped to 0. ``records`` is a list of
    ``RegenerationRecord`` or an array of increments (``(n,)`` or ``(n, d)``).
    """
    if isinstance(records, np.ndarray) or (records and not isinstance(records[0], RegenerationRecord)):
        Y = np.asarray(records, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
    else:
        Y, _ = pooled_increments(records)
    n = Y.shape[0]
    if lag_cutoff < 0:
        raise ContractViolation("lag_cutoff must be >= 0")
    if n < lag_cutoff + 10:
        raise InsufficientDataError(f"need at least {lag_cutoff + 10} increments, got {n}")
    Z = Y - Y.mean(axis=0)
    terms = [Z[: n - k].T @ Z[k:] / n for k in range(lag_cutoff + 1)]
    raw = terms[0] + 2.0 * sum(terms[1:], np.zeros_like(terms[0]))
    sym = 0.5 * (raw + raw.T)
    vals, vecs = np.linalg.eigh(sym)
    sigma = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
    return CovarianceEstimate(sigma, int(lag_cutoff), terms)


@dataclass
class TailFit:
    """Fit ``P(T > n) ~ C exp(-c n)``: ``slope = -c`` and ``intercept = log C``."""

    C: float
    c: float
    r_squared: float
    slope: float
    intercept: float
    points: int

    def to_dict(self) -> dict:
        return {"C": self.C, "c": self.c, "r_squared": self.r_squared, "slope": self.slope,
                "intercept": self.intercept, "points": self.points}


def fit_tail(samples, min_count: int = 10) -> TailFit:
    """Least squares line through ``(n, log P(T > n))`` for integer ``n`` from ``min(T)``.

    Only ``n`` with an empirical survival of at least ``min_count / samples``
    are used.

    Raises:
        InsufficientDataError: fewer than 100 samples or fewer than 2 usable points.
        ContractViolation: all samples equal (no tail).
    """
    from .stats import loglinear_fit

    t = np.sort(np.asarray(samples, dtype=np.int64))
    N = len(t)
    if N < 100:
        raise InsufficientDataError("fit_tail needs at least 100 samples")
    if t[0] == t[-1]:
        raise ContractViolation("constant samples have no tail")
    ns = np.arange(t[0], t[-1] + 1)
    surv = (N - np.searchsorted(t, ns, side="right")) / N
    keep = surv >= min_count / N
    if keep.sum() < 2:
        raise InsufficientDataError("fewer than two survival points above the count threshold")
    fit = loglinear_fit(ns[keep], np.log(surv[keep]))
    return TailFit(math.exp(fit.intercept), -fit.slope, fit.r_squared, fit.slope, fit.intercept, int(keep.sum()))


def first_regeneration_times(cfg, spec, m: int, samples: int, master_seed: int, budget: int = DEFAULT_BUDGET,
                             threads: int = 1):
    """``T_1`` for ``samples`` independent (environment, walk) pairs, each conditioned on the origin.

    Returns ``(times, failures)``; replicas that hit the budget or a dead
    end are counted in ``failures`` and left out.
    """
    from .environment import Memo, condition_on_origin
    from .parallel import map_blocks
    from .seeding import derive_seed

    origin = ((0,) * cfg.d, 0)

    def run(lo, hi):
        memo = Memo(cfg.d, cfg.horizon, nn=len(cfg.offsets()))
        out, failures = [], 0
        for i in range(lo, hi):
            env = condition_on_origin(derive_seed(master_seed, "env", i), cfg, spec, memo=memo).handle
            rec = find_regenerations(origin, 1, m, env, derive_seed(master_seed, "walk", i), budget)
            if rec.complete:
                out.append(int(rec.times[1]))
            else:
                failures += 1
        return out, failures

    parts = map_blocks(run, samples, threads, block=256)
    return np.asarray([t for p, _ in parts for t in p], dtype=np.int64), sum(f for _, f in parts)
