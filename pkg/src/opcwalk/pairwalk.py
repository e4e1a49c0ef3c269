"""Two walks side by side: simultaneous regenerations, coupling distance and annulus escape.

In ``joint`` mode both walks live in one environment; in ``independent``
mode each has its own. The walks always use independent permutation
streams and advance in lockstep. A simultaneous regeneration time is a time
that is a regeneration time of both walks; the pieces between consecutive
ones are the blocks ``Xi_1, Xi_2, ...``, and the positions at those times
form the skeleton ``(X_hat_k, X_hat'_k)``.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import _core
from .environment import LatticeConfig, Memo, Site, as_site, condition_on_sites, in_backbone
from .errors import ContractViolation, InsufficientDataError
from .parallel import map_blocks
from .regeneration import DEFAULT_BUDGET
from .seeding import derive_seed, stream_seed
from .weights import WeightFieldSpec

MODES = ("joint", "independent")


@dataclass
class PairWalkRecord:
    """Regeneration structure of one pair of walks.

    ``sim_marks`` holds the two space points at each simultaneous time;
    ``times`` the individual regeneration times of each walk. ``paths`` can
    be replayed from the stored environments and walk seeds.
    """

    mode: str
    starts: tuple
    m: int
    sim_times: np.ndarray
    sim_marks: tuple
    times: tuple
    steps: int
    stop_reason: str
    envs: tuple = field(repr=False, default=())
    seeds: tuple = field(repr=False, default=())

    @property
    def complete(self) -> bool:
        return self.stop_reason == "complete"

    def paths(self):
        """Both walk paths, long enough to cover every recorded regeneration time."""
        from .walker import sample_walk

        last = max([self.steps] + [int(t[-1]) for t in self.times if len(t)])
        return tuple(sample_walk(s, last, env, seed) for s, env, seed in zip(self.starts, self.envs, self.seeds))

    def xi_summaries(self) -> list:
        """Per block: duration, displacement of each walk over the block and separation at its end."""
        out = []
        prev_t = 0
        prev_a = np.asarray(self.starts[0].x)
        prev_b = np.asarray(self.starts[1].x)
        for t, a, b in zip(self.sim_times, *self.sim_marks):
            out.append({"tau": int(t - prev_t), "Y_a": tuple(int(v) for v in a - prev_a),
                        "Y_b": tuple(int(v) for v in b - prev_b),
                        "separation": tuple(int(v) for v in a - b)})
            prev_t, prev_a, prev_b = t, a, b
        return out


_STOP = {_core.OK: "complete", _core.DEAD_END: "dead_end", _core.BUDGET: "budget"}


def _pair_envs(mode, envs):
    if mode not in MODES:
        raise ContractViolation(f"mode must be one of {MODES}")
    if mode == "joint":
        env = envs[0] if isinstance(envs, (tuple, list)) else envs
        return env, env
    if not isinstance(envs, (tuple, list)) or len(envs) != 2:
        raise ContractViolation("independent mode needs two environment handles")
    return envs[0], envs[1]


def run_pair(mode: str, x, x2, target_sim_regens: int, m: int, envs, rng=None,
             budget: int = DEFAULT_BUDGET) -> PairWalkRecord:
    """Advance two walks in lockstep until ``target_sim_regens`` simultaneous regenerations or ``budget`` steps.

    ``envs`` is one handle (joint) or a pair of handles (independent);
    ``rng`` yields the two walk seeds.
    """
    env_a, env_b = _pair_envs(mode, envs)
    x, x2 = as_site(x), as_site(x2)
    if x.n != x2.n:
        raise ContractViolation("both walks must start at the same time")
    if not (in_backbone(x, env_a) and in_backbone(x2, env_b)):
        raise ContractViolation("both starting points must be in the backbone")
    if env_a.ienv[_core.I_FULL] == 1 or env_b.ienv[_core.I_FULL] == 1:
        raise ContractViolation("regenerations never occur when every site is open (p = 1)")
    base = stream_seed(rng)
    seeds = (derive_seed(base, "walk-a"), derive_seed(base, "walk-b"))
    status, sim, ma, mb, ta, tb, steps = _core.run_pair(
        env_a.ienv, env_a.fenv, env_a.mem, env_b.ienv, env_b.fenv, env_b.mem, np.uint64(seeds[0]),
        np.uint64(seeds[1]), env_a.row(x), env_b.row(x2), int(m), int(target_sim_regens), int(budget))
    return PairWalkRecord(mode, (x, x2), int(m), sim, (ma, mb), (ta, tb), int(steps), _STOP[int(status)],
                          (env_a, env_b), seeds)


def xi1_summary(rec: PairWalkRecord, tau_clip: int = 64, resolution: int = 1) -> tuple:
    """Finite summary of the first block: clipped duration and quantized displacements of both walks."""
    first = rec.xi_summaries()[0]
    q = lambda y: tuple(int(v) // resolution for v in y)  # noqa: E731
    return (min(first["tau"], tau_clip),) + q(first["Y_a"]) + q(first["Y_b"])


def _pair_environments(law, x, x2, cfg, spec, seed, memos):
    if law == "joint":
        env = condition_on_sites(derive_seed(seed, "env"), cfg, [x, x2], spec, memo=memos[0]).handle
        return env
    env_a = condition_on_sites(derive_seed(seed, "env-a"), cfg, [x], spec, memo=memos[0]).handle
    env_b = condition_on_sites(derive_seed(seed, "env-b"), cfg, [x2], spec, memo=memos[1]).handle
    return (env_a, env_b)


def sample_xi1(law: str, x, x2, n_samples: int, m: int, cfg: LatticeConfig, spec: WeightFieldSpec | None,
               master_seed: int, budget: int = DEFAULT_BUDGET, tau_clip: int = 64, resolution: int = 1,
               threads: int = 1) -> tuple:
    """Summaries of ``Xi_1`` for ``n_samples`` replicas under the joint or independent law.

    Joint: one environment conditioned on both starts being in the
    backbone. Independent: two environments, each conditioned on its own
    start. Returns ``(summaries, failures)``; replicas without a simultaneous
    regeneration within ``budget`` are counted as failures.
    """
    x, x2 = as_site(x), as_site(x2)

    def run(lo, hi):
        memos = [Memo(cfg.d, cfg.horizon, nn=len(cfg.offsets())) for _ in range(2)]
        out, fails = [], 0
        for i in range(lo, hi):
            seed = derive_seed(master_seed, law, i)
            envs = _pair_environments(law, x, x2, cfg, spec, seed, memos)
            rec = run_pair(law, x, x2, 1, m, envs, derive_seed(seed, "walks"), budget)
            if rec.complete:
                out.append(xi1_summary(rec, tau_clip, resolution))
            else:
                fails += 1
        return out, fails

    parts = map_blocks(run, n_samples, threads, block=32)
    return [s for p, _ in parts for s in p], sum(f for _, f in parts)


def first_simultaneous_times(law: str, x, x2, samples: int, m: int, cfg: LatticeConfig,
                             spec: WeightFieldSpec | None, master_seed: int, budget: int = DEFAULT_BUDGET,
                             threads: int = 1) -> tuple:
    """``T^sim_1`` for ``samples`` replicas of the joint or independent law; returns ``(times, failures)``."""
    x, x2 = as_site(x), as_site(x2)

    def run(lo, hi):
        memos = [Memo(cfg.d, cfg.horizon, nn=len(cfg.offsets())) for _ in range(2)]
        out, fails = [], 0
        for i in range(lo, hi):
            seed = derive_seed(master_seed, law, i)
            envs = _pair_environments(law, x, x2, cfg, spec, seed, memos)
            rec = run_pair(law, x, x2, 1, m, envs, derive_seed(seed, "walks"), budget)
            if rec.complete:
                out.append(int(rec.sim_times[0]))
            else:
                fails += 1
        return out, fails

    parts = map_blocks(run, samples, threads, block=64)
    return np.asarray([t for p, _ in parts for t in p], dtype=np.int64), sum(f for _, f in parts)


def plugin_tv(samples_a, samples_b) -> float:
    """Total variation distance between the empirical laws of two sample lists (hashable items)."""
    if not samples_a or not samples_b:
        raise InsufficientDataError("both sample lists must be non-empty")
    ca, cb = Counter(samples_a), Counter(samples_b)
    na, nb = len(samples_a), len(samples_b)
    return 0.5 * sum(abs(ca[k] / na - cb[k] / nb) for k in set(ca) | set(cb))


def tv_from_histograms(p: dict, q: dict) -> float:
    """Total variation distance between two laws given as ``{outcome: probability}``."""
    return 0.5 * float(sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in set(p) | set(q)))


@dataclass
class TVEstimate:
    tv: float
    ci_low: float
    ci_high: float
    n_joint: int
    n_independent: int
    failures: int

    def __float__(self):
        return float(self.tv)

    def to_dict(self) -> dict:
        return {"tv": self.tv, "ci_low": self.ci_low, "ci_high": self.ci_high, "n_joint": self.n_joint,
                "n_independent": self.n_independent, "failures": self.failures}


def bootstrap_tv(samples_a, samples_b, reps: int = 200, confidence: float = 0.95, seed: int = 0) -> tuple:
    """Basic bootstrap interval for ``plugin_tv`` resampling both lists, clipped to ``[0, 1]``.

    The plug-in estimate is biased upwards and resampling adds the same bias
    again, so the interval reflects the bootstrap quantiles around the
    estimate (``2 tv - q_hi, 2 tv - q_lo``) instead of using them directly.
    """
    rng = np.random.default_rng(seed)
    codes = {k: i for i, k in enumerate(sorted(set(samples_a) | set(samples_b)))}
    a = np.array([codes[s] for s in samples_a])
    b = np.array([codes[s] for s in samples_b])
    k = len(codes)
    vals = np.empty(reps)
    for r in range(reps):
        ha = np.bincount(rng.choice(a, len(a)), minlength=k) / len(a)
        hb = np.bincount(rng.choice(b, len(b)), minlength=k) / len(b)
        vals[r] = 0.5 * np.abs(ha - hb).sum()
    q_lo, q_hi = np.quantile(vals, [(1 - confidence) / 2, (1 + confidence) / 2])
    tv = 0.5 * np.abs(np.bincount(a, minlength=k) / len(a) - np.bincount(b, minlength=k) / len(b)).sum()
    return float(np.clip(2 * tv - q_hi, 0.0, 1.0)), float(np.clip(2 * tv - q_lo, 0.0, 1.0))


def estimate_tv(x, x2, n_samples: int, summary_resolution: int = 1, m: int = 1, seeds: int = 0,
                cfg: LatticeConfig | None = None, spec: WeightFieldSpec | None = None, tau_clip: int = 64,
                budget: int = DEFAULT_BUDGET, bootstrap: int = 200, threads: int = 1) -> TVEstimate:
    """Plug-in total variation between the joint and independent laws of the summary of ``Xi_1``.

    The summary is ``(min(tau_1, tau_clip), Y_a // res, Y_b // res)``, so the
    estimate lower-bounds the distance between the full block laws (up to
    sampling error, which biases a plug-in estimate upwards).
    """
    if n_samples < 1000:
        raise InsufficientDataError("estimate_tv needs n_samples >= 1000")
    cfg = cfg or LatticeConfig()
    joint, fj = sample_xi1("joint", x, x2, n_samples, m, cfg, spec, derive_seed(seeds, "joint"), budget, tau_clip,
                           summary_resolution, threads)
    ind, fi = sample_xi1("independent", x, x2, n_samples, m, cfg, spec, derive_seed(seeds, "independent"), budget,
                         tau_clip, summary_resolution, threads)
    if not joint or not ind:
        raise InsufficientDataError("no simultaneous regeneration found within the budget")
    lo, hi = bootstrap_tv(joint, ind, bootstrap, seed=derive_seed(seeds, "bootstrap"))
    return TVEstimate(plugin_tv(joint, ind), lo, hi, len(joint), len(ind), fj + fi)


def f_d_reference(r: float, r1: float, r2: float, d: int, convention: str = "contract") -> float:
    """Reference probability that the separation reaches ``r2`` before ``r1`` from ``r``.

    ``convention="contract"``: logarithmic ratio for ``d >= 3`` and
    ``(1/r1 - 1/r) / (1/r1 - 1/r2)`` for ``d = 2`` (the formulas the
    acceptance values are computed from). ``convention="brownian"``: the
    exit probability of Brownian motion, logarithmic for ``d = 2`` and
    ``(r1^(2-d) - r^(2-d)) / (r1^(2-d) - r2^(2-d))`` for ``d >= 3``. For
    ``d = 1`` both give the linear gambler's-ruin value.
    """
    if not 0 < r1 <= r <= r2 or r1 == r2:
        raise ContractViolation("need 0 < r1 <= r <= r2 and r1 < r2")
    if convention not in ("contract", "brownian"):
        raise ContractViolation("convention must be 'contract' or 'brownian'")
    if d < 1:
        raise ContractViolation("d must be >= 1")
    if d == 1:
        return (r - r1) / (r2 - r1)
    use_log = (d >= 3) if convention == "contract" else (d == 2)
    if use_log:
        return (math.log(r) - math.log(r1)) / (math.log(r2) - math.log(r1))
    e = -1.0 if convention == "contract" else 2.0 - d
    return (r1**e - r**e) / (r1**e - r2**e)


@dataclass
class AnnulusSpec:
    """Annulus ``r1 < ||U v||_inf < r2`` for the separation ``v`` of the two walks."""

    r1: float
    r2: float
    U: np.ndarray | None = None

    def __post_init__(self):
        if not 0 < self.r1 < self.r2:
            raise ContractViolation("need 0 < r1 < r2")
        if self.U is not None:
            self.U = np.atleast_2d(np.asarray(self.U, dtype=float))
            if self.U.shape[0] != self.U.shape[1] or np.linalg.matrix_rank(self.U) < self.U.shape[0]:
                raise ContractViolation("U must be square with full rank")

    @classmethod
    def from_covariance(cls, sigma, r1: float, r2: float) -> "AnnulusSpec":
        """``U`` with ``U^T U = sigma^{-1}`` (transpose of the Cholesky factor of the inverse)."""
        inv = np.linalg.inv(np.atleast_2d(np.asarray(sigma, dtype=float)))
        return cls(r1, r2, np.linalg.cholesky(inv).T)

    def matrix(self, d: int) -> np.ndarray:
        return np.eye(d) if self.U is None else self.U


def realizable_separation(U: np.ndarray, r: float) -> np.ndarray:
    """Integer vector ``v`` with ``||U v||_inf`` closest to ``r`` (ties: lexicographically smallest)."""
    d = U.shape[0]
    radius = int(math.ceil(r * np.abs(np.linalg.inv(U)).sum(axis=1).max())) + 2
    axes = [np.arange(-radius, radius + 1)] * d
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    norms = np.abs(grid @ U.T).max(axis=1)
    err = np.abs(norms - r)
    best = np.flatnonzero(err <= err.min() + 1e-12)
    return grid[best[0]].astype(np.int64)


@dataclass
class AnnulusResult:
    p_hat: float
    ci: tuple
    f_d_value: float
    r_realized: float
    outward: int
    completed: int
    incomplete: int
    mean_skeleton_steps: float
    total_ticks: int = 0

    def to_dict(self) -> dict:
        return {"p_hat": self.p_hat, "ci_low": self.ci[0], "ci_high": self.ci[1], "f_d": self.f_d_value,
                "r_realized": self.r_realized, "outward": self.outward, "completed": self.completed,
                "incomplete": self.incomplete, "mean_skeleton_steps": self.mean_skeleton_steps,
                "total_ticks": self.total_ticks}


def annulus_experiment(spec: AnnulusSpec, r: float, n_samples: int, cfg: LatticeConfig,
                       weight_spec: WeightFieldSpec | None = None, m: int = 1, master_seed: int = 0,
                       budget: int = 10**6, min_radius: float = 2.0, threads: int = 1,
                       convention: str = "contract") -> AnnulusResult:
    """Outward exit probability of the whitened skeleton separation from the annulus.

    Independent mode: each replica uses two environments conditioned on
    the respective start; the walks start at ``0`` and at the lattice point
    whose whitened norm is closest to ``r``. The separation is checked only
    at simultaneous regeneration times. Replicas that run out of ``budget``
    ticks (or hit a dead end) are reported as incomplete and excluded from
    ``p_hat``.

    Raises:
        ContractViolation: ``r1 < min_radius`` or ``r`` outside ``[r1, r2]``.
    """
    from .environment import backbone_probability_ci

    if spec.r1 < min_radius:
        raise ContractViolation(f"r1 = {spec.r1} is below the minimum radius {min_radius}")
    if not spec.r1 <= r <= spec.r2:
        raise ContractViolation("r must lie in [r1, r2]")
    d = cfg.d
    U = spec.matrix(d)
    if U.shape != (d, d):
        raise ContractViolation(f"U must be {d}x{d}")
    v = realizable_separation(U, r)
    r_real = float(np.abs(U @ v).max())
    x = Site((0,) * d, 0)
    x2 = Site(tuple(int(c) for c in v), 0)

    def run(lo, hi):
        memos = [Memo(d, cfg.horizon, nn=len(cfg.offsets())) for _ in range(2)]
        res = []
        for i in range(lo, hi):
            seed = derive_seed(master_seed, "annulus", i)
            env_a, env_b = _pair_environments("independent", x, x2, cfg, weight_spec, seed, memos)
            sa, sb = derive_seed(seed, "walk-a"), derive_seed(seed, "walk-b")
            res.append(_core.pair_annulus(env_a.ienv, env_a.fenv, env_a.mem, env_b.ienv, env_b.fenv, env_b.mem,
                                          np.uint64(sa), np.uint64(sb), env_a.row(x), env_b.row(x2), int(m), U,
                                          float(spec.r1), float(spec.r2), int(budget)))
        return res

    results = [t for part in map_blocks(run, n_samples, threads, block=16) for t in part]
    outcomes = np.array([t[0] for t in results], dtype=np.int64)
    done = outcomes <= 1
    outward = int((outcomes == 1).sum())
    completed = int(done.sum())
    if completed:
        p_hat, lo, hi = backbone_probability_ci(outward, completed)
    else:
        p_hat, lo, hi = float("nan"), 0.0, 1.0
    sims = np.array([t[1] for t in results], dtype=float)
    f_val = f_d_reference(min(max(r, spec.r1), spec.r2), spec.r1, spec.r2, d, convention)
    return AnnulusResult(p_hat, (lo, hi), f_val, r_real, outward, completed, int((~done).sum()),
                         float(sims[done].mean()) if completed else float("nan"),
                         int(sum(int(t[2]) for t in results)))


def pair_environments_for(law: str, x, x2, cfg: LatticeConfig, spec=None, seed: int = 0):
    """Conditioned environment(s) for one replica of the joint or independent law."""
    memos = [Memo(cfg.d, cfg.horizon, nn=len(cfg.offsets())) for _ in range(2)]
    return _pair_environments(law, as_site(x), as_site(x2), cfg, spec, seed, memos)

