"""Acceptance criteria 1 to 11 at their stated sizes and tolerances.

Each test prints one ``criterion N: PASS|FAIL ...`` line (also collected in
the terminal summary). Criteria 8 and 9 first run a short probe of the
two-walk simulation and project the cost of the full run; when the
projection exceeds ``COMPUTE_ALLOWANCE`` seconds the criterion is reported
as failed. Both are strict xfails, see the decisions ledger entries
"criterion 8" and "criterion 9".
"""

import json
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from opcwalk.cli import main
from opcwalk.environment import EnvironmentHandle, LatticeConfig, condition_on_origin
from opcwalk.pairwalk import AnnulusSpec, annulus_experiment, f_d_reference, first_simultaneous_times
from opcwalk.regeneration import estimate_drift, find_regenerations, first_regeneration_times, fit_tail, s2m_flags
from opcwalk.seeding import derive_seed
from opcwalk.stats import CltConfig, clt_experiment
from opcwalk.walker import DEFAULT_WINDOWS, oracle_check, window_from_dict
from opcwalk.weights import WeightFieldSpec, estimate_mixing

SEED = 20261016
COMPUTE_ALLOWANCE = 3600.0


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


def _cli_json(tmp_path, command, raw, name, threads=1):
    cfg = tmp_path / f"{command}.json"
    cfg.write_text(json.dumps(raw))
    out = tmp_path / f"{command}-{threads}"
    code = main([command, "--config", str(cfg), "--out", str(out), "--threads", str(threads)])
    assert code == 0
    return json.loads((out / name).read_text()), out


def test_criterion_1_berger_drift(tmp_path):
    res, _ = _cli_json(tmp_path, "berger", {"steps": 10**6, "replicas": 10, "master_seed": SEED}, "drift.json")
    mu = res["mu_hat"][0]
    ok = abs(mu + 1 / 90) <= 0.005
    assert report(1, ok, f"pooled X_n/n = {mu:.6f}, target -1/90 = {-1 / 90:.6f} +- 0.005")


def test_criterion_2_zero_drift_constant_weights():
    lat = LatticeConfig(d=1, p=0.8, horizon=50)
    recs, n, i = [], 0, 0
    while n < 10**4:
        env = condition_on_origin(derive_seed(SEED, "env", i), lat).handle
        rec = find_regenerations(((0,), 0), 2000, 1, env, derive_seed(SEED, "walk", i), budget=10**6)
        recs.append(rec)
        n += len(rec.taus)
        i += 1
    est = estimate_drift(recs)
    mu, se = float(est.mu_hat[0]), float(est.stderr[0])
    ok = est.n_increments >= 10**4 and abs(mu) <= 4 * se
    assert report(2, ok, f"mu_hat = {mu:.5f}, stderr = {se:.5f}, increments = {est.n_increments}")


def test_criterion_3_sampler_oracle_equivalence():
    worst, parts = 0.0, []
    for k, w in enumerate(DEFAULT_WINDOWS):
        env, start, steps = window_from_dict(w)
        res = oracle_check(env, start, steps, 10**5, derive_seed(SEED, "window", k))
        assert res["k"] >= steps + env.lattice.horizon
        worst = max(worst, res["walk_tv"], res["local_tv"])
        parts.append(f"{w['name']} walk {res['walk_tv']:.4f} local {res['local_tv']:.4f}")
    ok = len(DEFAULT_WINDOWS) >= 3 and worst <= 0.01
    assert report(3, ok, f"max TV = {worst:.4f} <= 0.01 at 1e5 runs ({'; '.join(parts)})")


def test_criterion_4_s2m_frequency():
    p, m, d = 0.9, 1, 1
    env = EnvironmentHandle(SEED, 0, LatticeConfig(d=d, p=p, horizon=50))
    rows = np.array([[x, n] for x in range(0, 4000) for n in range(0, 300, 5) if (x + n) % 2 == 0])
    flags = s2m_flags(rows, m, env)
    n = int((flags >= 0).sum())
    freq = float((flags == 1).sum()) / n
    bound = (1 - p) ** (2 * m * (2 * d - 1))
    floor = bound - 4 * math.sqrt(bound * (1 - bound) / n)
    ok = n >= 10**5 and freq >= floor
    assert report(4, ok, f"S_2m frequency {freq:.4f} over {n} backbone sites, floor {floor:.4f}")


def test_criterion_5_regeneration_tails():
    lat = LatticeConfig(d=1, p=0.8, horizon=50)
    # a few replicas can end at a horizon dead end, so draw a small surplus
    t1, f1 = first_regeneration_times(lat, None, 1, 10**4 + 100, derive_seed(SEED, "T1"))
    ts, fs = first_simultaneous_times("independent", ((0,), 0), ((0,), 0), 10**4 + 100, 1, lat, None,
                                      derive_seed(SEED, "Tsim"))
    a, b = fit_tail(t1), fit_tail(ts)
    ok = (len(t1) >= 10**4 and len(ts) >= 10**4 and a.slope < 0 and b.slope < 0
          and a.r_squared >= 0.95 and b.r_squared >= 0.95)
    assert report(5, ok, f"T_1 slope {a.slope:.4f} r2 {a.r_squared:.4f} (failures {f1}); "
                         f"T_sim_1 slope {b.slope:.5f} r2 {b.r_squared:.4f} (failures {fs})")


@pytest.mark.slow
def test_criterion_6_annealed_clt():
    free = clt_experiment("annealed", CltConfig(d=1, p=1.0, steps=10**4, replicas=10**4), SEED).pooled
    perc = clt_experiment("annealed", CltConfig(d=1, p=0.8, steps=10**4, replicas=10**4), SEED).pooled
    var = float(free.standardized_variance[0])
    ok = (0.95 <= var <= 1.05 and free.qq_correlation >= 0.99 and perc.qq_correlation >= 0.99
          and float(perc.covariance[0, 0]) > 0)
    assert report(6, ok, f"p=1: variance {var:.4f}, qq {free.qq_correlation:.5f}; "
                         f"p=0.8: qq {perc.qq_correlation:.5f}, sigma^2 {float(perc.covariance[0, 0]):.4f}")


@pytest.mark.slow
def test_criterion_7_quenched_clt():
    spec = WeightFieldSpec.time_markov([1.0, 3.0], [[0.7, 0.3], [0.4, 0.6]])
    R = 2000
    cfg = CltConfig(d=2, p=0.8, weight_spec=spec, steps=4000, replicas=R, environments=5, horizon=50)
    rep = clt_experiment("quenched", cfg, SEED)
    qq = min(r.qq_correlation for r in rep.per_environment)
    gap = rep.max_whitened_mean_gap()
    ok = qq >= 0.98 and gap <= 4 / math.sqrt(R)
    assert report(7, ok, f"min qq {qq:.5f}; whitened mean gap {gap:.4f} <= {4 / math.sqrt(R):.4f}")


def _censored_mean(times, failures, budget):
    n = len(times) + failures
    return (float(np.sum(times)) + failures * budget) / n


@pytest.mark.slow
@pytest.mark.xfail(strict=True, raises=AssertionError, reason="ledger: criterion 8, d=2 simultaneous regenerations are out of reach")
def test_criterion_8_tv_decay():
    lat = LatticeConfig(d=2, p=0.8, horizon=50)
    pairs, budget = 2, 5 * 10**5
    t0 = time.perf_counter()
    means = []
    for law in ("joint", "independent"):
        ts, fs = first_simultaneous_times(law, ((0, 0), 0), ((0, 0), 0), pairs, 1, lat, None,
                                          derive_seed(derive_seed(SEED, "probe"), law), budget)
        means.append(_censored_mean(ts, fs, budget))
    rate = 2 * pairs * np.mean(means) / (time.perf_counter() - t0)
    needed = 5 * 2 * 5000 * min(means)
    projected = needed / rate
    feasible = projected <= COMPUTE_ALLOWANCE
    detail = (f"probe: mean T_sim_1 >= {min(means):.3g} ticks at {rate:.3g} ticks/s; "
              f"full run needs >= {projected / 86400:.3g} days")
    if feasible:
        from opcwalk.pairwalk import estimate_tv
        from opcwalk.stats import loglinear_fit

        ests = [estimate_tv(((0, 0), 0), ((s, 0), 0), 5000, cfg=lat, seeds=derive_seed(SEED, "tv", s))
                for s in (0, 4, 8, 16, 32)]
        mono = all(ests[i + 1].ci_low <= ests[i].ci_high for i in range(4))
        fit = loglinear_fit([0, 4, 8, 16, 32], [math.log(max(e.tv, 1e-12)) for e in ests])
        feasible = mono and fit.slope < 0
        detail = f"tv {[round(e.tv, 4) for e in ests]}, slope {fit.slope:.4f}"
    assert report(8, feasible, detail)


@pytest.mark.slow
@pytest.mark.xfail(strict=True, raises=AssertionError, reason="ledger: criterion 9, annulus exits at d=2 are out of reach")
def test_criterion_9_annulus_escape():
    lat = LatticeConfig(d=2, p=0.8, horizon=50)
    spec = AnnulusSpec(10, 40)
    pairs, budget = 2, 5 * 10**5
    t0 = time.perf_counter()
    probe = annulus_experiment(spec, 20, pairs, lat, master_seed=SEED, budget=budget)
    rate = probe.total_ticks / (time.perf_counter() - t0)
    per_pair = probe.total_ticks / pairs
    projected = 5000 * per_pair / rate
    target = f_d_reference(20, 10, 40, 2)
    detail = (f"probe: {probe.completed}/{pairs} pairs left the annulus within {budget} ticks, "
              f"{rate:.3g} ticks/s; full run needs >= {projected / 86400:.3g} days; f_2 = {target:.4f}")
    ok = False
    if projected <= COMPUTE_ALLOWANCE:
        res = annulus_experiment(spec, 20, 5000, lat, master_seed=SEED, budget=10**8)
        ok = res.completed >= 5000 and abs(res.p_hat - target) <= 0.10
        detail = f"p_hat {res.p_hat:.4f} over {res.completed} pairs, f_2 = {target:.4f}"
    assert report(9, ok, detail)


def test_criterion_10_mixing_calibration():
    dep = estimate_mixing(WeightFieldSpec.m_dependent(2), "alpha", "time", [5, 6, 8, 12], samples=20000,
                          rng=np.random.default_rng(SEED))
    iid = estimate_mixing(WeightFieldSpec.iid(), "alpha", "time", [1, 2, 4, 8], samples=20000,
                          rng=np.random.default_rng(SEED + 1))
    ok_dep = all(c <= w for c, w in zip(dep.coefficients, dep.ci_halfwidth))
    ok_iid = all(c <= w for c, w in zip(iid.coefficients, iid.ci_halfwidth))
    fmt = lambda est: ", ".join(f"n={g}: {c:.4f}<={w:.4f}" for g, c, w in
                                zip(est.gaps, est.coefficients, est.ci_halfwidth))
    assert report(10, ok_dep and ok_iid, f"m_dependent(2) [{fmt(dep)}]; iid [{fmt(iid)}]")


def _result_bytes(out):
    return {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name != "manifest.json"}


def test_criterion_11_determinism(tmp_path):
    runs = [
        ("berger", {"steps": 10**6, "replicas": 10, "master_seed": SEED}),
        ("drift", {"lattice": {"p": 0.8, "horizon": 100}, "steps": 50000, "replicas": 10, "master_seed": SEED}),
        ("tail", {"lattice": {"p": 0.8}, "replicas": 2000, "master_seed": SEED, "options": {"pair": True}}),
        ("oracle-check", {"replicas": 10**4, "master_seed": SEED}),
    ]
    same = []
    for command, raw in runs:
        cfg = tmp_path / f"{command}.json"
        cfg.write_text(json.dumps(raw))
        outs = []
        for k, threads in enumerate((1, 2, 1)):
            out = tmp_path / f"{command}-{k}"
            assert main([command, "--config", str(cfg), "--out", str(out), "--threads", str(threads)]) == 0
            outs.append(_result_bytes(out))
        same.append(outs[0] == outs[1] == outs[2] and bool(outs[0]))
    ok = all(same)
    assert report(11, ok, "byte-identical outputs over repeats and thread counts 1/2 for "
                          + ", ".join(c for c, _ in runs))
