"""Oriented site percolation on ``Z^d x Z`` with horizon backbone queries.

Sites are open independently with probability ``p``; the state of a site is
a pure function of the percolation seed and its coordinates, so the lattice
is never materialized. A site belongs to the horizon-``h`` backbone when an
open directed path of length ``h`` starts there. Path lengths are cached in
a bounded hash table that may be cleared at any time without changing any
answer.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _core
from .errors import ContractViolation, RejectionCapError
from .seeding import derive_seed, seed_to_int
from .weights import WeightFieldSpec

NEIGHBORHOODS = ("corners", "shell", "shell_with_self")


class Site(NamedTuple):
    """Lattice point ``(x, n)``: space vector ``x`` and time ``n``."""

    x: tuple
    n: int


def as_site(s) -> Site:
    """Coerce ``Site``, ``(x, n)`` with scalar or vector ``x``, or a flat row into a ``Site``."""
    if isinstance(s, Site):
        return s
    if isinstance(s, np.ndarray) and s.ndim == 1:
        return Site(tuple(int(v) for v in s[:-1]), int(s[-1]))
    x, n = s
    if np.ndim(x) == 0:
        x = (int(x),)
    return Site(tuple(int(v) for v in x), int(n))


def site_row(s, d=None) -> np.ndarray:
    s = as_site(s)
    if d is not None and len(s.x) != d:
        raise ContractViolation(f"site {s} does not have dimension {d}")
    return np.array(list(s.x) + [s.n], dtype=np.int64)


@dataclass(frozen=True)
class LatticeConfig:
    d: int = 1
    neighborhood: str = "corners"
    p: float = 0.8
    horizon: int = 50

    def __post_init__(self):
        if int(self.d) < 1:
            raise ContractViolation("d must be >= 1")
        if self.neighborhood not in NEIGHBORHOODS:
            raise ContractViolation(f"neighborhood must be one of {NEIGHBORHOODS}")
        if not (0.0 < float(self.p) <= 1.0):
            raise ContractViolation("p must lie in (0, 1]")
        if int(self.horizon) < 1:
            raise ContractViolation("horizon must be >= 1")

    def offsets(self) -> np.ndarray:
        """Space offsets of ``U^+`` in lexicographic order."""
        return neighbor_offsets(self.d, self.neighborhood)

    def to_dict(self) -> dict:
        return {"d": self.d, "neighborhood": self.neighborhood, "p": self.p, "horizon": self.horizon}


def neighbor_offsets(d: int, neighborhood: str = "corners") -> np.ndarray:
    if neighborhood == "corners":
        offs = itertools.product((-1, 1), repeat=d)
    else:
        offs = itertools.product((-1, 0, 1), repeat=d)
        if neighborhood == "shell":
            offs = (o for o in offs if any(o))
    return np.array(sorted(offs), dtype=np.int64).reshape(-1, d)


def neighbors(s, cfg: LatticeConfig) -> list:
    """``U^+(s)``: successor sites at time ``n + 1`` in canonical order."""
    s = as_site(s)
    return [Site(tuple(a + b for a, b in zip(s.x, off)), s.n + 1) for off in cfg.offsets().tolist()]


class Memo:
    """Bounded open-addressing cache of path reach values used by the kernels.

    The table is cleared wholesale when half full; since every entry can be
    recomputed, clearing never changes an answer.
    """

    def __init__(self, d: int, horizon: int, capacity: int = 1 << 15, slack: int | None = None, funnel: int = 8,
                 nn: int | None = None):
        self.shape = (int(d), int(horizon), int(3**d if nn is None else nn))
        self.mem = _core.new_mem(d, self.shape[2], horizon, capacity, slack, funnel)

    def clear(self):
        _core.memo_clear(self.mem)

    @property
    def size(self) -> int:
        return int(self.mem[_core.M_COUNT])

    @property
    def stats(self) -> dict:
        m = self.mem
        return {"entries": int(m[_core.M_COUNT]), "clears": int(m[_core.M_CLEARS]),
                "searches": int(m[_core.M_SEARCHES]), "pushes": int(m[_core.M_PUSHES])}


class EnvironmentHandle:
    """Deterministic oracle for one realization of the percolation and weight fields.

    ``overrides`` maps sites to ``(open, weight)`` pairs that replace the
    random values (``None`` keeps the random one); it is how small
    hand-built windows are described.
    """

    def __init__(self, perc_seed, weight_seed, lattice: LatticeConfig, weight_spec: WeightFieldSpec | None = None,
                 overrides=None, memo_capacity: int = 1 << 15, memo: Memo | None = None):
        self.perc_seed = seed_to_int(perc_seed)
        self.weight_seed = seed_to_int(weight_seed)
        self.lattice = lattice
        self.weight_spec = weight_spec or WeightFieldSpec.constant(1.0)
        if self.weight_spec.kind == "berger" and lattice.d != 1:
            raise ContractViolation("the berger field is defined for d = 1")
        self.overrides = dict(overrides or {})
        self._memo_capacity = memo_capacity
        d = lattice.d
        keys = np.zeros((len(self.overrides), d + 1), dtype=np.int64)
        ov_open = np.full(len(self.overrides), -1, dtype=np.int64)
        ov_w = np.full(len(self.overrides), np.nan)
        for i, (s, (op, w)) in enumerate(self.overrides.items()):
            keys[i] = site_row(s, d)
            if op is not None:
                ov_open[i] = 1 if op else 0
            if w is not None:
                if not w > 0:
                    raise ContractViolation("override weights must be positive")
                ov_w[i] = float(w)
        code, par, vals, mat = self.weight_spec.kernel_params()
        self.ienv, self.fenv = _core.pack_environment(
            self.perc_seed, self.weight_seed, float(lattice.p), int(lattice.horizon), lattice.offsets(), code,
            par, vals, mat, keys, ov_open, ov_w)
        if memo is None:
            memo = Memo(d, lattice.horizon, memo_capacity, nn=len(lattice.offsets()))
        else:
            if memo.shape != (d, int(lattice.horizon), len(lattice.offsets())):
                raise ContractViolation("a cache can only be reused for the same d, horizon and neighborhood size")
            memo.clear()
        self.memo = memo

    def fork(self) -> "EnvironmentHandle":
        """Same environment with a private cache (for use from another thread)."""
        twin = object.__new__(EnvironmentHandle)
        twin.__dict__.update(self.__dict__)
        twin.memo = Memo(self.lattice.d, self.lattice.horizon, self._memo_capacity, nn=self.nn)
        return twin

    @property
    def d(self) -> int:
        return self.lattice.d

    def row(self, s) -> np.ndarray:
        return site_row(s, self.lattice.d)

    @property
    def nn(self) -> int:
        return int(self.ienv[_core.I_NN])

    @property
    def mem(self) -> np.ndarray:
        return self.memo.mem

    def __repr__(self):
        return (f"EnvironmentHandle(perc_seed={self.perc_seed}, weight_seed={self.weight_seed}, "
                f"lattice={self.lattice}, weight_spec={self.weight_spec})")


def window_environment(d: int = 1, open_sites=(), closed_sites=(), weights=None, default_open: bool = True,
                       neighborhood: str = "corners", horizon: int = 8,
                       weight_spec: WeightFieldSpec | None = None) -> EnvironmentHandle:
    """Hand-built environment: listed sites forced open/closed, everything else ``default_open``.

    With ``default_open=True`` all unlisted sites are open, so paths leaving
    the window continue forever.
    """
    ov = {}
    for s in open_sites:
        ov[as_site(s)] = (True, None)
    for s in closed_sites:
        ov[as_site(s)] = (False, None)
    for s, w in (weights or {}).items():
        s = as_site(s)
        op = ov.get(s, (None, None))[0]
        ov[s] = (op, float(w))
    lat = LatticeConfig(d=d, neighborhood=neighborhood, p=1.0, horizon=horizon)
    env = EnvironmentHandle(0, 0, lat, weight_spec, overrides=ov)
    if not default_open:
        env.fenv[_core.F_P] = 0.0
        env.ienv[_core.I_FULL] = 0
    return env


def is_open(s, env: EnvironmentHandle) -> bool:
    return bool(_core.is_open(env.ienv, env.fenv, env.row(s), 0))


def path_length(s, env: EnvironmentHandle) -> int:
    """``-1`` if closed, else ``min(l(s), h)`` with ``l`` the longest open directed path length."""
    return int(_core.path_length(env.ienv, env.fenv, env.mem, env.row(s), 0))


def in_backbone(s, env: EnvironmentHandle) -> bool:
    """Membership in the horizon backbone: an open path of length ``h`` starts at ``s``."""
    return bool(_core.in_backbone(env.ienv, env.fenv, env.mem, env.row(s), 0))


def xi_value(s, env: EnvironmentHandle) -> float:
    """The weighted environment: ``K(s)`` on the backbone, ``0`` elsewhere."""
    if not in_backbone(s, env):
        return 0.0
    return float(_core.weight(env.ienv, env.fenv, env.row(s), 0))


def path_lengths(sites, env: EnvironmentHandle) -> np.ndarray:
    """Vectorized ``path_length`` over an ``(k, d+1)`` array of site rows."""
    rows = np.ascontiguousarray(sites, dtype=np.int64)
    return _core.path_lengths_of_sites(env.ienv, env.fenv, env.mem, rows)


def open_mask(sites, env: EnvironmentHandle) -> np.ndarray:
    rows = np.ascontiguousarray(sites, dtype=np.int64)
    return _core.open_of_sites(env.ienv, env.fenv, rows)


@dataclass
class ConditionedEnvironment:
    handle: EnvironmentHandle
    attempts: int
    origin: Site = field(default=None)


def condition_on_sites(base_seed, cfg: LatticeConfig, sites, spec: WeightFieldSpec | None = None, cap: int = 1000,
                       memo: Memo | None = None, memo_capacity: int = 1 << 15) -> ConditionedEnvironment:
    """Rejection-sample environments until every site in ``sites`` is in the backbone.

    Candidate ``i`` uses percolation seed ``derive_seed(base_seed, "perc", i)``;
    the weight seed ``derive_seed(base_seed, "weights")`` does not depend on
    ``i``. ``attempts`` counts the candidates tried, including the accepted
    one. A passed ``memo`` is cleared and reused.
    """
    if cfg.p <= 0:
        raise ContractViolation("p must be positive")
    sites = [as_site(s) for s in sites]
    base = seed_to_int(base_seed)
    wseed = derive_seed(base, "weights")
    for i in range(cap + 1):
        env = EnvironmentHandle(derive_seed(base, "perc", i), wseed, cfg, spec, memo_capacity=memo_capacity, memo=memo)
        memo = env.memo
        if all(in_backbone(s, env) for s in sites):
            return ConditionedEnvironment(env, i + 1, sites[0])
    raise RejectionCapError(
        f"sites not all in the horizon-{cfg.horizon} backbone after {cap} rejections (p={cfg.p} too small?)"
    )


def condition_on_origin(base_seed, cfg: LatticeConfig, spec: WeightFieldSpec | None = None, cap: int = 1000,
                        origin=None, memo: Memo | None = None,
                        memo_capacity: int = 1 << 15) -> ConditionedEnvironment:
    """Rejection-sample environments until ``origin`` (default ``(0, 0)``) is in the backbone.

    See ``condition_on_sites`` for the seed derivation.
    """
    origin = as_site(origin if origin is not None else ((0,) * cfg.d, 0))
    return condition_on_sites(base_seed, cfg, [origin], spec, cap, memo, memo_capacity)


def backbone_mask(sites, env: EnvironmentHandle) -> np.ndarray:
    rows = np.ascontiguousarray(sites, dtype=np.int64)
    return _core.backbone_of_sites(env.ienv, env.fenv, env.mem, rows)


def backbone_probability_ci(successes: int, trials: int, z: float = 1.96):
    """Wilson interval for a binomial proportion."""
    if trials <= 0:
        raise ContractViolation("trials must be positive")
    ph = successes / trials
    den = 1 + z * z / trials
    centre = (ph + z * z / (2 * trials)) / den
    half = z * math.sqrt(ph * (1 - ph) / trials + z * z / (4 * trials * trials)) / den
    return ph, max(0.0, centre - half), min(1.0, centre + half)
