"""The weighted random walk on the horizon backbone.

From a backbone site the walk moves to a backbone successor chosen with
probability proportional to its weight. Two samplers produce this law:

* ``sample_walk`` walks the per-site weighted permutations and takes the first
  backbone element at every step;
* ``local_path`` builds the path of length ``k`` from the same permutations
  and the truncated path lengths ``l ^ q``, which is the construction used to
  define regeneration times.

``exact_walk_distribution`` computes the law of ``X_n`` exactly with rational
arithmetic on small environments and serves as the oracle for both.

A walk seed fixes every permutation the walk can ever look at: the
permutation at a site is a pure function of ``(walk seed, site)``, so it is
drawn once per site and reused by later steps and by local paths of other
lengths.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import _core
from .environment import EnvironmentHandle, Site, as_site, in_backbone, neighbors
from .errors import ContractViolation, DeadEndError, WindowTooLarge
from .seeding import stream_seed


@dataclass(frozen=True)
class WalkPath:
    """A path given by its start and one space offset per time step."""

    start: Site
    displacements: np.ndarray

    @classmethod
    def from_rows(cls, rows: np.ndarray) -> "WalkPath":
        rows = np.asarray(rows, dtype=np.int64)
        return cls(as_site(rows[0]), np.diff(rows[:, :-1], axis=0))

    @property
    def steps(self) -> int:
        return int(self.displacements.shape[0])

    def sites(self) -> np.ndarray:
        """Visited sites as rows ``(x_1, ..., x_d, n)``, start included."""
        d = len(self.start.x)
        rows = np.empty((self.steps + 1, d + 1), dtype=np.int64)
        rows[0, :d] = self.start.x
        rows[1:, :d] = np.asarray(self.start.x) + np.cumsum(self.displacements, axis=0)
        rows[:, d] = self.start.n + np.arange(self.steps + 1)
        return rows

    @property
    def end(self) -> Site:
        return as_site(self.sites()[-1])

    def to_csv(self) -> str:
        rows = self.sites()
        d = rows.shape[1] - 1
        out = io.StringIO()
        out.write(",".join(["step"] + [f"x_{i + 1}" for i in range(d)]) + "\n")
        for t, r in enumerate(rows):
            out.write(",".join(str(int(v)) for v in [t, *r[:d]]) + "\n")
        return out.getvalue()


@dataclass(frozen=True)
class PermutationSample:
    """Ordering of ``U^+(site)`` as indices into the canonical neighbor list."""

    site: Site
    ordering: tuple

    def sites(self, env: EnvironmentHandle) -> list:
        nbrs = neighbors(self.site, env.lattice)
        return [nbrs[k] for k in self.ordering]


def step_distribution(s, env: EnvironmentHandle) -> np.ndarray:
    """Transition probabilities from ``s`` over ``neighbors(s)`` in canonical order.

    Mass is ``K(z)`` on backbone successors and zero elsewhere, normalized.

    Raises:
        ContractViolation: ``s`` is not in the backbone.
        DeadEndError: no successor of ``s`` is in the backbone (horizon artifact).
    """
    s = as_site(s)
    if not in_backbone(s, env):
        raise ContractViolation(f"{s} is not in the horizon backbone")
    rows = np.array([env.row(z) for z in neighbors(s, env.lattice)], dtype=np.int64)
    mass = _core.weights_of_sites(env.ienv, env.fenv, rows)
    mass = mass * _core.backbone_of_sites(env.ienv, env.fenv, env.mem, rows)
    total = mass.sum()
    if total <= 0:
        raise DeadEndError(s)
    return mass / total


def _check_start(start, env):
    start = as_site(start)
    if not in_backbone(start, env):
        raise ContractViolation(f"start {start} is not in the horizon backbone")
    return start


def sample_walk(start, steps: int, env: EnvironmentHandle, rng=None) -> WalkPath:
    """Walk ``steps`` steps from ``start``; ``rng`` is an int seed or a numpy Generator.

    Raises:
        ContractViolation: ``start`` is not in the backbone or ``steps < 0``.
        DeadEndError: the walk reached a horizon dead end.
    """
    if steps < 0:
        raise ContractViolation("steps must be >= 0")
    start = _check_start(start, env)
    status, done, pos, path = _core.run_walk(env.ienv, env.fenv, env.mem, np.uint64(stream_seed(rng)),
                                             env.row(start), int(steps), True)
    if status != _core.OK:
        raise DeadEndError(as_site(pos))
    return WalkPath.from_rows(path)


def walk_endpoints(start, steps: int, env: EnvironmentHandle, seeds) -> tuple:
    """Final sites of independent walks, one per seed, and a per-walk dead-end flag."""
    start = _check_start(start, env)
    seeds = np.asarray([int(s) for s in seeds], dtype=np.uint64)
    ends, status = _core.run_walks_endpoints(env.ienv, env.fenv, env.mem, seeds, env.row(start), int(steps))
    return ends, status != _core.OK


def sample_permutation(s, env: EnvironmentHandle, rng=None) -> PermutationSample:
    """Weighted permutation of ``U^+(s)``: successive selection without replacement by weight."""
    s = as_site(s)
    order = _core.sample_permutation(env.ienv, env.fenv, np.uint64(stream_seed(rng)), env.row(s))
    return PermutationSample(s, tuple(int(k) for k in order))


def local_path(start, k: int, env: EnvironmentHandle, rng=None) -> WalkPath:
    """Local path of length ``k``.

    Step ``j`` moves to the first element of the permutation at the current
    site whose truncated path length ``min(l, k - j - 1)`` is maximal among the
    successors; at ``j = k`` every successor qualifies. Path lengths come
    from the environment, so they saturate at the horizon.
    """
    if k < 0:
        raise ContractViolation("k must be >= 0")
    start = as_site(start)
    rows = _core.local_path(env.ienv, env.fenv, env.mem, np.uint64(stream_seed(rng)), env.row(start), int(k))
    return WalkPath.from_rows(rows)


def local_path_positions(start, k: int, at: int, env: EnvironmentHandle, seeds) -> np.ndarray:
    """Site at time index ``at`` of the length-``k`` local path, one row per seed."""
    if not 0 <= at <= k:
        raise ContractViolation("need 0 <= at <= k")
    seeds = np.asarray([int(s) for s in seeds], dtype=np.uint64)
    return _core.local_path_positions(env.ienv, env.fenv, env.mem, seeds, env.row(as_site(start)), int(k), int(at))


def exact_walk_distribution(window: EnvironmentHandle, start, steps: int, max_states: int = 10**6) -> dict:
    """Exact law of ``X_steps`` as ``{Site: Fraction}`` by dynamic programming over the kernel.

    Weights are converted to exact rationals, so the result is exact for the
    environment as given (including its horizon backbone).

    Raises:
        WindowTooLarge: the number of reachable sites could exceed ``max_states``.
        ContractViolation: ``start`` is not in the backbone.
    """
    if steps < 0:
        raise ContractViolation("steps must be >= 0")
    d = window.lattice.d
    if (2 * steps + 1) ** d > max_states:
        raise WindowTooLarge(f"{steps} steps in d={d} can reach more than {max_states} sites")
    start = _check_start(start, window)
    dist = {start: Fraction(1)}
    for _ in range(steps):
        nxt = {}
        for s, ps in dist.items():
            nbrs = neighbors(s, window.lattice)
            rows = np.array([window.row(z) for z in nbrs], dtype=np.int64)
            wts = _core.weights_of_sites(window.ienv, window.fenv, rows)
            ok = _core.backbone_of_sites(window.ienv, window.fenv, window.mem, rows)
            mass = [Fraction(float(w)) if b else Fraction(0) for w, b in zip(wts, ok)]
            total = sum(mass)
            if total == 0:
                raise DeadEndError(s)
            for z, w in zip(nbrs, mass):
                if w:
                    nxt[z] = nxt.get(z, Fraction(0)) + ps * w / total
        dist = nxt
    return dist


def empirical_distribution(rows) -> dict:
    """Empirical law ``{Site: frequency}`` of a set of site rows."""
    rows = np.asarray(rows, dtype=np.int64)
    keys, counts = np.unique(rows, axis=0, return_counts=True)
    n = rows.shape[0]
    return {as_site(k): c / n for k, c in zip(keys, counts)}


def total_variation(p: dict, q: dict) -> float:
    """Half the L1 distance between two laws given as ``{outcome: probability}`` maps."""
    keys = set(p) | set(q)
    return 0.5 * float(sum(abs(float(p.get(k, 0)) - float(q.get(k, 0))) for k in keys))


# ------------------------------------------------------------ oracle windows

def _cone(d: int, top: int) -> list:
    """Sites ``(x, n)`` with ``0 <= n <= top`` reachable from the origin with corner steps."""
    out = []
    for n in range(top + 1):
        axis = range(-n, n + 1, 2)
        grids = np.stack(np.meshgrid(*([np.fromiter(axis, dtype=np.int64)] * d), indexing="ij"), axis=-1)
        out += [list(map(int, g)) + [n] for g in grids.reshape(-1, d)]
    return out


DEFAULT_WINDOWS = [
    {
        "name": "d1-open-with-traps",
        "d": 1, "horizon": 4, "default_open": True, "steps": 6, "start": [0, 0],
        "closed": [[0, 2], [-3, 3], [3, 5], [-2, 6]],
        "weights": [[-1, 1, 3.0], [-2, 2, 0.5], [-1, 3, 2.5], [3, 3, 4.0]],
        "weight_spec": {"kind": "iid", "params": {"a": 1.0, "b": 3.0}},
    },
    {
        "name": "d1-finite-cone",
        "d": 1, "horizon": 3, "default_open": False, "steps": 3, "start": [0, 0],
        "open": _cone(1, 7),
        "closed": [[-2, 2], [0, 4], [3, 5], [-1, 5]],
        "weights": [[-1, 1, 2.0], [0, 2, 5.0], [1, 3, 0.25]],
        "weight_spec": {"kind": "constant", "params": {"value": 1.0}},
    },
    {
        "name": "d2-open-with-traps",
        "d": 2, "horizon": 3, "default_open": True, "steps": 3, "start": [0, 0, 0],
        "closed": [[1, 1, 1], [0, 0, 2], [2, -2, 2], [-1, 1, 3], [3, 1, 3], [0, 2, 2]],
        "weights": [[-1, -1, 1, 4.0], [-2, 0, 2, 0.5]],
        "weight_spec": {"kind": "iid", "params": {"a": 1.0, "b": 3.0}},
    },
]


def _row_site(r) -> Site:
    return Site(tuple(int(v) for v in r[:-1]), int(r[-1]))


def window_from_dict(spec: dict) -> tuple:
    """``(environment, start, steps)`` from a window description like those in ``DEFAULT_WINDOWS``."""
    from .environment import window_environment
    from .weights import WeightFieldSpec

    d = int(spec["d"])
    ws = spec.get("weight_spec")
    env = window_environment(
        d,
        open_sites=[_row_site(r) for r in spec.get("open", [])],
        closed_sites=[_row_site(r) for r in spec.get("closed", [])],
        weights={_row_site(r[:-1]): r[-1] for r in spec.get("weights", [])},
        default_open=bool(spec.get("default_open", True)),
        neighborhood=spec.get("neighborhood", "corners"),
        horizon=int(spec.get("horizon", 8)),
        weight_spec=WeightFieldSpec.from_dict(ws) if ws else None,
    )
    return env, _row_site(spec.get("start", [0] * (d + 1))), int(spec["steps"])


def oracle_check(window: EnvironmentHandle, start, steps: int, runs: int, seed: int = 0, k: int | None = None) -> dict:
    """Total variation between the exact law of ``X_steps`` and two samplers.

    ``walk_tv`` compares ``runs`` walks from ``sample_walk``'s kernel;
    ``local_tv`` compares the site at time ``steps`` of local paths of length
    ``k`` (default ``steps + horizon``).
    """
    from .seeding import derive_seed

    exact = exact_walk_distribution(window, start, steps)
    k = steps + window.lattice.horizon if k is None else int(k)
    walk_seeds = [derive_seed(seed, "oracle-walk", i) for i in range(runs)]
    local_seeds = [derive_seed(seed, "oracle-local", i) for i in range(runs)]
    ends, dead = walk_endpoints(start, steps, window, walk_seeds)
    if dead.any():
        raise DeadEndError(start)
    local = local_path_positions(start, k, steps, window, local_seeds)
    return {
        "walk_tv": total_variation(exact, empirical_distribution(ends)),
        "local_tv": total_variation(exact, empirical_distribution(local)),
        "support": len(exact),
        "runs": int(runs),
        "k": k,
    }
