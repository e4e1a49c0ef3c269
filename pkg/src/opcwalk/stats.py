"""Normality diagnostics, least-squares fits and the CLT experiment drivers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .environment import LatticeConfig, Memo, condition_on_origin
from .errors import ContractViolation, InsufficientDataError
from .parallel import map_blocks
from .seeding import derive_seed
from .weights import WeightFieldSpec


@dataclass
class LinearFit:
    slope: float
    intercept: float
    r_squared: float

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r_squared": self.r_squared}


def loglinear_fit(xs, ys) -> LinearFit:
    """Ordinary least squares ``y = slope * x + intercept``.

    Raises:
        ContractViolation: fewer than 2 points, mismatched lengths or all xs equal.
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ContractViolation("need two equally long 1-d arrays with at least 2 points")
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0.0:
        raise ContractViolation("xs are all equal")
    slope = float(xc @ (y - y.mean())) / sxx
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(resid @ resid) / ss_tot
    return LinearFit(slope, intercept, r2)


@dataclass
class NormalityReport:
    """Per-coordinate normality diagnostics of a sample of vectors.

    ``ks_distance`` is the largest Kolmogorov-Smirnov distance to the
    standard normal over the whitened coordinates and ``qq_correlation`` the
    smallest quantile-quantile correlation. ``standardized_mean`` and
    ``standardized_variance`` are the per-coordinate sample mean and variance
    of the samples as given.
    """

    n: int
    ks_distance: float
    qq_correlation: float
    standardized_mean: np.ndarray
    standardized_variance: np.ndarray
    covariance: np.ndarray

    def to_dict(self) -> dict:
        return {"n": self.n, "ks_distance": self.ks_distance, "qq_correlation": self.qq_correlation,
                "standardized_mean": self.standardized_mean.tolist(),
                "standardized_variance": self.standardized_variance.tolist(),
                "covariance": self.covariance.tolist()}


def whiten(samples) -> np.ndarray:
    """Centre by the sample mean and decorrelate with the Cholesky factor of the sample covariance.

    Raises:
        ContractViolation: the sample covariance is singular.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    scale = np.sqrt(np.diag(cov))
    if np.any(scale <= 1e-12 * max(1.0, float(np.abs(x).max()))):
        raise ContractViolation("degenerate covariance")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ContractViolation("degenerate covariance") from exc
    return np.linalg.solve(chol, (x - x.mean(axis=0)).T).T


def normality_report(samples, d: int | None = None) -> NormalityReport:
    """Kolmogorov-Smirnov and QQ diagnostics of whitened samples against the standard normal.

    Raises:
        InsufficientDataError: fewer than 100 samples.
        ContractViolation: degenerate covariance or dimension mismatch.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if d is not None and x.shape[1] != d:
        raise ContractViolation(f"samples have dimension {x.shape[1]}, expected {d}")
    n = x.shape[0]
    if n < 100:
        raise InsufficientDataError("normality_report needs at least 100 samples")
    z = whiten(x)
    theo = sps.norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    ks, qq = 0.0, 1.0
    for j in range(z.shape[1]):
        col = np.sort(z[:, j])
        ks = max(ks, float(sps.kstest(col, "norm").statistic))
        qq = min(qq, float(np.corrcoef(theo, col)[0, 1]))
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    return NormalityReport(n, ks, qq, x.mean(axis=0), x.var(axis=0, ddof=1), cov)


def qq_table(samples) -> np.ndarray:
    """``(theoretical_quantile, empirical_quantile)`` rows for the first whitened coordinate."""
    z = np.sort(whiten(samples)[:, 0])
    n = len(z)
    return np.column_stack([sps.norm.ppf((np.arange(1, n + 1) - 0.5) / n), z])


@dataclass
class CltConfig:
    d: int = 1
    p: float = 0.8
    weight_spec: WeightFieldSpec = field(default_factory=WeightFieldSpec.constant)
    m: int = 1
    steps: int = 10**4
    replicas: int = 10**4
    environments: int = 1
    horizon: int = 50
    neighborhood: str = "corners"
    drift_budget: int = 2 * 10**6
    threads: int = 1

    @property
    def lattice(self) -> LatticeConfig:
        return LatticeConfig(self.d, self.neighborhood, self.p, self.horizon)


@dataclass
class CltReport:
    mode: str
    per_environment: list
    drift_used: np.ndarray
    scale_used: np.ndarray
    drift_method: str
    dead_ends: int = 0
    samples: list = field(default_factory=list)

    @property
    def pooled(self) -> NormalityReport:
        return normality_report(np.vstack(self.samples))

    def max_mean_gap(self) -> float:
        """Largest sup-norm difference between per-environment standardized means."""
        means = [r.standardized_mean for r in self.per_environment]
        return max((float(np.max(np.abs(a - b))) for i, a in enumerate(means) for b in means[i + 1:]), default=0.0)

    def whitened_means(self) -> np.ndarray:
        """Per-environment sample means in units of the pooled covariance (``L^{-1} mean``, ``L L^T = cov``)."""
        pooled = np.vstack(self.samples)
        chol = np.linalg.cholesky(np.atleast_2d(np.cov(pooled, rowvar=False)))
        return np.array([np.linalg.solve(chol, np.asarray(s).mean(axis=0)) for s in self.samples])

    def max_whitened_mean_gap(self) -> float:
        """Largest sup-norm difference between per-environment whitened means."""
        w = self.whitened_means()
        return max((float(np.max(np.abs(w[i] - w[j]))) for i in range(len(w)) for j in range(i + 1, len(w))),
                   default=0.0)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "per_environment": [r.to_dict() for r in self.per_environment],
                "drift_used": self.drift_used.tolist(), "scale_used": self.scale_used.tolist(),
                "drift_method": self.drift_method, "dead_ends": self.dead_ends,
                "max_mean_gap": self.max_mean_gap(), "whitened_means": self.whitened_means().tolist(),
                "max_whitened_mean_gap": self.max_whitened_mean_gap()}


def estimate_walk_drift(cfg: CltConfig, master_seed: int) -> tuple:
    """Drift for centring: the regeneration estimator when ``p < 1``, else the ergodic average.

    With ``p < 1`` regeneration increments are collected from walks in fresh
    environments until ``drift_budget`` steps are spent. If fewer than 50
    increments turn up, the ergodic average ``X_n / n`` of those walks is
    used instead. Returns ``(mu, method)``.
    """
    from .regeneration import find_regenerations, ratio_drift
    from .walker import sample_walk

    lat = cfg.lattice
    origin = ((0,) * cfg.d, 0)
    memo = Memo(cfg.d, cfg.horizon, nn=len(lat.offsets()))
    if cfg.p >= 1.0:
        ends = []
        for i in range(64):
            env = condition_on_origin(derive_seed(master_seed, "drift-env", i), lat, cfg.weight_spec, memo=memo).handle
            path = sample_walk(origin, cfg.steps, env, derive_seed(master_seed, "drift-walk", i))
            ends.append(np.asarray(path.end.x, dtype=float))
        return np.mean(ends, axis=0) / cfg.steps, "ergodic"
    ys, taus, spent, ends, i = [], [], 0, [], 0
    chunk = max(1, cfg.drift_budget // 16)
    while spent < cfg.drift_budget:
        env = condition_on_origin(derive_seed(master_seed, "drift-env", i), lat, cfg.weight_spec, memo=memo).handle
        rec = find_regenerations(origin, 10**6, cfg.m, env, derive_seed(master_seed, "drift-walk", i), chunk)
        spent += max(rec.steps, 1)
        if len(rec.times) > 1:
            ys.append(rec.Y)
            taus.append(rec.taus)
            ends.append((rec.space_marks[-1].astype(float), float(rec.times[-1])))
        i += 1
    if sum(len(t) for t in taus) >= 50:
        return ratio_drift(np.vstack(ys), np.concatenate(taus)).mu_hat, "regeneration"
    x = np.sum([e[0] for e in ends], axis=0) if ends else np.zeros(cfg.d)
    t = sum(e[1] for e in ends) or 1.0
    return np.asarray(x, dtype=float) / t, "ergodic"


def _walk_block(cfg: CltConfig, master_seed: int, env_label: str, walk_label: str, fresh_env: bool, env_index: int):
    from .walker import walk_endpoints

    lat = cfg.lattice
    origin = ((0,) * cfg.d, 0)

    def run(lo, hi):
        memo = Memo(cfg.d, cfg.horizon, nn=len(lat.offsets()))
        ends, dead = [], 0
        if fresh_env:
            for r in range(lo, hi):
                env = condition_on_origin(derive_seed(master_seed, env_label, r), lat, cfg.weight_spec,
                                          memo=memo).handle
                e, flag = walk_endpoints(origin, cfg.steps, env, [derive_seed(master_seed, walk_label, r)])
                ends.append(e[0])
                dead += int(flag[0])
                if flag[0]:
                    ends[-1] = None
        else:
            env = condition_on_origin(derive_seed(master_seed, env_label, env_index), lat, cfg.weight_spec,
                                      memo=memo).handle
            seeds = [derive_seed(master_seed, walk_label, r) for r in range(lo, hi)]
            e, flag = walk_endpoints(origin, cfg.steps, env, seeds)
            ends = [None if f else row for row, f in zip(e, flag)]
            dead = int(flag.sum())
        return [row for row in ends if row is not None], dead

    return run


def clt_experiment(mode: str, cfg: CltConfig, master_seed: int) -> CltReport:
    """Collect ``(X_n - n mu) / sqrt(n)`` and report normality.

    ``annealed``: a fresh environment (conditioned on the origin) for every
    replica, all samples pooled into one report. ``quenched``: ``environments``
    fixed environments with ``replicas`` walks each, one report per
    environment. Walks that hit a horizon dead end are dropped and counted.
    """
    if mode not in ("annealed", "quenched"):
        raise ContractViolation("mode must be 'annealed' or 'quenched'")
    if mode == "quenched" and cfg.environments < 2:
        raise ContractViolation("the quenched experiment needs at least 2 environments")
    mu, method = estimate_walk_drift(cfg, master_seed)
    scale = math.sqrt(cfg.steps)
    groups = []
    dead = 0
    if mode == "annealed":
        fn = _walk_block(cfg, master_seed, "env", "walk", True, 0)
        parts = map_blocks(fn, cfg.replicas, cfg.threads)
        groups.append([row for rows, _ in parts for row in rows])
        dead += sum(dd for _, dd in parts)
    else:
        for e in range(cfg.environments):
            fn = _walk_block(cfg, master_seed, "quenched-env", f"quenched-walk/{e}", False, e)
            parts = map_blocks(fn, cfg.replicas, cfg.threads, block=256)
            groups.append([row for rows, _ in parts for row in rows])
            dead += sum(dd for _, dd in parts)
    samples = [(np.asarray(g, dtype=float)[:, : cfg.d] - cfg.steps * mu) / scale for g in groups]
    reports = [normality_report(s, cfg.d) for s in samples]
    return CltReport(mode, reports, np.asarray(mu, dtype=float), scale * np.eye(cfg.d), method, dead, samples)
