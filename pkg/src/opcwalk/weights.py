"""Strictly positive stationary weight fields and empirical mixing coefficients.

Supported kinds:

* ``constant``: ``K = value``.
* ``iid``: independent uniforms on ``[a, b]``.
* ``time_markov``: one stationary Markov chain per space point, running in time.
* ``berger``: ``K(x, n) = ((beta(n) + 3|x| + x) mod 3) + 1`` with ``beta(n)``
  i.i.d. uniform on ``{0, 1, 2}`` (d = 1 only).
* ``m_dependent``: ``a + (b - a) * mean`` of i.i.d. uniforms over the sup-norm
  space-time window of radius ``w``; sites further apart than ``2w`` are
  independent.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import _core
from .errors import ContractViolation, InsufficientDataError
from .seeding import derive_seed

KINDS = ("constant", "iid", "time_markov", "berger", "m_dependent")
_KIND_CODE = {
    "constant": _core.W_CONSTANT,
    "iid": _core.W_IID,
    "time_markov": _core.W_MARKOV,
    "berger": _core.W_BERGER,
    "m_dependent": _core.W_MDEP,
}


@dataclass(frozen=True)
class WeightFieldSpec:
    """Description of a weight field ``K``; see the module docstring for the kinds."""

    kind: str = "constant"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractViolation(f"unknown weight kind {self.kind!r}")
        params = dict(self.params)
        object.__setattr__(self, "params", _normalize_params(self.kind, params))

    @classmethod
    def constant(cls, value=1.0):
        return cls("constant", {"value": value})

    @classmethod
    def iid(cls, a=1.0, b=2.0):
        return cls("iid", {"a": a, "b": b})

    @classmethod
    def berger(cls):
        return cls("berger", {})

    @classmethod
    def m_dependent(cls, w=2, a=1.0, b=2.0):
        return cls("m_dependent", {"w": w, "a": a, "b": b})

    @classmethod
    def time_markov(cls, values, matrix, initial=None):
        params = {"values": list(values), "matrix": [list(r) for r in matrix]}
        if initial is not None:
            params["initial"] = list(initial)
        return cls("time_markov", params)

    @property
    def floor(self) -> float:
        """Smallest weight the field can take."""
        p = self.params
        if self.kind == "constant":
            return float(p["value"])
        if self.kind in ("iid", "m_dependent"):
            return float(p["a"])
        if self.kind == "berger":
            return 1.0
        return float(min(p["values"]))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, data: dict) -> "WeightFieldSpec":
        return cls(data["kind"], dict(data.get("params", {})))

    def kernel_params(self):
        """Arrays consumed by the compiled weight kernel: (code, par, values, matrix)."""
        p = self.params
        vals = np.zeros(1)
        mat = np.zeros((1, 1))
        if self.kind == "constant":
            par = np.array([p["value"]], dtype=float)
        elif self.kind == "iid":
            par = np.array([p["a"], p["b"]], dtype=float)
        elif self.kind == "berger":
            par = np.zeros(1)
        elif self.kind == "m_dependent":
            par = np.array([p["w"], p["a"], p["b"]], dtype=float)
        else:
            rho, nu, resid = markov_split(np.asarray(p["matrix"], dtype=float))
            par = np.array([rho])
            vals = np.asarray(p["values"], dtype=float)
            mat = np.vstack([resid, nu[None, :]])
        return _KIND_CODE[self.kind], par, vals, mat


def _normalize_params(kind, p):
    def positive(name):
        if name not in p:
            raise ContractViolation(f"{kind} weights need parameter {name!r}")
        v = float(p[name])
        if not v > 0 or not math.isfinite(v):
            raise ContractViolation(f"{kind} parameter {name!r} must be a positive finite number")
        return v

    if kind == "constant":
        return {"value": positive("value") if "value" in p else 1.0}
    if kind == "iid":
        a, b = positive("a"), positive("b")
        if a > b:
            raise ContractViolation("iid weights need a <= b")
        return {"a": a, "b": b}
    if kind == "berger":
        return {}
    if kind == "m_dependent":
        w = int(p.get("w", 2))
        if w < 0:
            raise ContractViolation("m_dependent window radius w must be >= 0")
        a = positive("a") if "a" in p else 1.0
        b = positive("b") if "b" in p else 2.0
        if a > b:
            raise ContractViolation("m_dependent weights need a <= b")
        return {"w": w, "a": a, "b": b}
    values = [float(v) for v in p.get("values", [])]
    matrix = np.asarray(p.get("matrix", []), dtype=float)
    k = len(values)
    if k == 0 or any(not v > 0 for v in values):
        raise ContractViolation("time_markov state values must be non-empty and positive")
    if matrix.shape != (k, k) or np.any(matrix < 0):
        raise ContractViolation("time_markov matrix must be a non-negative square matrix matching the values")
    if not np.allclose(matrix.sum(axis=1), 1.0, atol=1e-9):
        raise ContractViolation("time_markov matrix rows must sum to 1")
    rho, _, _ = markov_split(matrix)
    if rho <= 0:
        raise ContractViolation("time_markov matrix needs a column with all entries positive (Doeblin constant > 0)")
    pi = stationary_law(matrix)
    if "initial" in p and p["initial"] is not None:
        init = np.asarray(p["initial"], dtype=float)
        if init.shape != (k,) or not np.allclose(init, pi, atol=1e-8):
            raise ContractViolation("time_markov initial law must be the stationary vector of the matrix")
    return {"values": values, "matrix": matrix.tolist(), "initial": pi.tolist()}


def stationary_law(matrix) -> np.ndarray:
    """Stationary vector of a row-stochastic matrix (left eigenvector for eigenvalue 1)."""
    matrix = np.asarray(matrix, dtype=float)
    k = matrix.shape[0]
    a = np.vstack([matrix.T - np.eye(k), np.ones((1, k))])
    rhs = np.zeros(k + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, rhs, rcond=None)
    return np.clip(pi, 0.0, None) / np.clip(pi, 0.0, None).sum()


def markov_split(matrix):
    """Split ``P = rho * nu + (1 - rho) * Q`` with ``nu_j`` proportional to ``min_i P_ij``."""
    matrix = np.asarray(matrix, dtype=float)
    col_min = matrix.min(axis=0)
    rho = float(col_min.sum())
    if rho <= 0:
        return 0.0, col_min, matrix
    nu = col_min / rho
    if rho >= 1.0 - 1e-15:
        return 1.0, nu, matrix.copy()
    resid = np.clip((matrix - rho * nu[None, :]) / (1.0 - rho), 0.0, None)
    resid /= resid.sum(axis=1, keepdims=True)
    return rho, nu, resid


def weight(s, env) -> float:
    """Weight ``K(s)`` of a site under the handle's weight seed and spec."""
    from .environment import site_row

    return float(_core.weight(env.ienv, env.fenv, site_row(s, env.lattice.d), 0))


# -------------------------------------------------------------------- mixing


@dataclass
class MixingEstimate:
    """Empirical mixing coefficients; each value lower-bounds the true coefficient."""

    gaps: list
    coefficients: list
    mode: str
    axis: str
    event_family: str
    samples: int
    ci_halfwidth: list

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["axis", "mode", "gap", "estimate", "ci_halfwidth", "samples"])
        for g, c, w in zip(self.gaps, self.coefficients, self.ci_halfwidth):
            wr.writerow([self.axis, self.mode, g, f"{c:.10g}", f"{w:.10g}", self.samples])
        return buf.getvalue()


@dataclass(frozen=True)
class ThresholdEvents:
    """Events ``{K(s) <= median}`` and their complements on single sites and 2-site blocks.

    A block is a run of ``size`` consecutive sites along the chosen axis; a
    block event asks all its sites to be at or below the marginal median.
    """

    block_sizes: tuple = (1, 2)

    def describe(self) -> str:
        return "threshold K<=median and complement on blocks of sizes " + ",".join(map(str, self.block_sizes))


_AXIS_STEP = {"time": "n", "space": "x", "spacetime": "xn"}


def _axis_vector(axis, d):
    v = np.zeros(d + 1, dtype=np.int64)
    if axis == "time":
        v[d] = 1
    elif axis == "space":
        v[0] = 1
    elif axis == "spacetime":
        v[0] = 1
        v[d] = 1
    else:
        raise ContractViolation(f"unknown axis {axis!r}")
    return v


def _field_vectors(spec: WeightFieldSpec, d: int):
    code, par, vals, mat = spec.kernel_params()
    empty = np.zeros((0, d + 1), dtype=np.int64)
    return _core.pack_environment(0, 0, 1.0, 1, np.zeros((1, d), dtype=np.int64), code, par, vals, mat, empty,
                                  np.zeros(0, dtype=np.int64), np.zeros(0))


def _median(spec: WeightFieldSpec, d: int, rng_seed: int) -> float:
    """Median of the one-site marginal, from well separated sites of a few realizations."""
    ienv, fenv = _field_vectors(spec, d)
    sites = np.zeros((1000, d + 1), dtype=np.int64)
    sites[:, 0] = np.arange(1000) * 97
    sites[:, d] = np.arange(1000) * 89
    seeds = np.array([derive_seed(rng_seed, "median", i) for i in range(4)], dtype=np.uint64)
    return float(np.median(_core.field_samples(seeds, ienv, fenv, sites)))


def estimate_mixing(spec, mode="alpha", axis="time", gaps=(1, 2, 4, 8), event_family=None,
                    samples=20000, rng=None, d=1, bootstrap=200, confidence=0.95, phi_min_prob=0.05):
    """Estimate alpha- or phi-mixing coefficients of a weight field at the given gaps.

    Each sample is a fresh realization of the field (new weight seed); the
    event pair for gap n consists of a block ending at the origin and a block
    starting n lattice steps further along ``axis``. The returned coefficient
    is the maximum over all ordered event pairs; ``ci_halfwidth`` is a
    bootstrap half-width for that maximum, simultaneous over the gaps.
    """
    if mode not in ("alpha", "phi"):
        raise ContractViolation("mode must be 'alpha' or 'phi'")
    family = event_family or ThresholdEvents()
    gaps = [int(g) for g in gaps]
    if any(g < 1 for g in gaps):
        raise ContractViolation("gaps must be >= 1")
    alpha_level = (1.0 - confidence) / len(gaps)
    min_samples = max(200, int(math.ceil(20.0 / alpha_level)))
    if samples < min_samples:
        raise InsufficientDataError(
            f"{samples} samples too few for {len(gaps)} gaps at confidence {confidence}; need >= {min_samples}"
        )
    if rng is None:
        rng = np.random.default_rng(0)
    base = int(rng.integers(0, 2**63))
    step = _axis_vector(axis, d)
    ienv, fenv = _field_vectors(spec, d)
    bmax = max(family.block_sizes)
    med = _median(spec, d, derive_seed(base, "median"))
    seeds = np.array([derive_seed(base, "mixing", i) for i in range(samples)], dtype=np.uint64)
    coeffs, halfwidths = [], []
    boot_rng = np.random.default_rng(derive_seed(base, "bootstrap"))
    for g in gaps:
        # A block occupies offsets -(b-1)..0 along the axis; B block g..g+b-1
        offs = list(range(-(bmax - 1), 1)) + list(range(g, g + bmax))
        sites = np.array([o * step for o in offs], dtype=np.int64)
        vals = _core.field_samples(seeds, ienv, fenv, sites)
        low = vals <= med
        ev_a, ev_b = [], []
        for b in family.block_sizes:
            a_ind = low[:, bmax - b:bmax].all(axis=1)
            b_ind = low[:, bmax:bmax + b].all(axis=1)
            ev_a += [a_ind, ~a_ind]
            ev_b += [b_ind, ~b_ind]
        A = np.array(ev_a, dtype=float).T
        B = np.array(ev_b, dtype=float).T
        est = _pair_stat(A, B, mode, phi_min_prob)
        boot = np.empty(bootstrap)
        for r in range(bootstrap):
            idx = boot_rng.integers(0, samples, samples)
            boot[r] = _pair_stat_deviation(A[idx], B[idx], A, B, mode, phi_min_prob)
        coeffs.append(float(est))
        halfwidths.append(float(np.quantile(boot, 1.0 - alpha_level)))
    return MixingEstimate(gaps, coeffs, mode, axis, family.describe(), samples, halfwidths)


def _pair_terms(A, B, mode, phi_min_prob):
    n = A.shape[0]
    pa = A.mean(axis=0)
    pb = B.mean(axis=0)
    pab = (A.T @ B) / n
    if mode == "alpha":
        return np.abs(pab - np.outer(pa, pb)), np.ones_like(pab, dtype=bool)
    ok = np.repeat((pa >= phi_min_prob)[:, None], B.shape[1], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(pa[:, None] > 0, pab / pa[:, None], 0.0)
    return np.abs(cond - pb[None, :]), ok


def _pair_stat(A, B, mode, phi_min_prob):
    terms, ok = _pair_terms(A, B, mode, phi_min_prob)
    return float(np.max(np.where(ok, terms, 0.0))) if ok.any() else 0.0


def _pair_stat_deviation(Ab, Bb, A, B, mode, phi_min_prob):
    """Largest deviation of resampled pair terms from the original ones (signed terms)."""
    def signed(X, Y):
        n = X.shape[0]
        px, py = X.mean(axis=0), Y.mean(axis=0)
        pxy = (X.T @ Y) / n
        if mode == "alpha":
            return pxy - np.outer(px, py), np.ones_like(pxy, dtype=bool)
        with np.errstate(divide="ignore", invalid="ignore"):
            cond = np.where(px[:, None] > 0, pxy / px[:, None], 0.0)
        return cond - py[None, :], np.repeat((px >= phi_min_prob)[:, None], Y.shape[1], axis=1)

    tb, okb = signed(Ab, Bb)
    t0, ok0 = signed(A, B)
    ok = okb & ok0
    if not ok.any():
        return 0.0
    return float(np.max(np.abs(tb - t0)[ok]))
