"""Command-line entry point: ``opcwalk <command> --config f.json --out dir [--threads N] [--seed S]``.

Each command reads an experiment configuration (see ``opcwalk.config``),
runs its replicas, writes CSV and JSON results to the output directory and
finishes with ``manifest.json``. Result files depend only on the
configuration and the master seed; the manifest also records wall-clock
time and is the one file that differs between repeated runs.

Exit codes: 0 success, 1 runtime error, 2 configuration error, 3 partial
results (some replicas ran out of budget or hit a horizon dead end).
Errors and warnings go to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .config import COMMANDS, ExperimentConfig, parse_config, validate_config
from .environment import Memo, condition_on_origin
from .errors import ConfigError, InsufficientDataError, OpcwalkError
from .parallel import map_blocks
from .seeding import derive_seed

__all__ = ["RunManifest", "run", "main", "validate_config"]


@dataclass
class RunManifest:
    config: dict
    files: list
    wall_clock_seconds: float
    version: str
    seed_derivations: dict
    partial: bool = False
    warnings: list = field(default_factory=list)
    threads: int = 1

    def to_dict(self) -> dict:
        return {"config": self.config, "files": self.files, "wall_clock_seconds": self.wall_clock_seconds,
                "version": self.version, "seed_derivations": self.seed_derivations, "partial": self.partial,
                "warnings": self.warnings, "threads": self.threads}


def _plain(obj):
    """Convert numpy scalars and arrays (recursively) to JSON-ready Python values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


class _Outputs:
    """Collects result files in memory and writes them with stable formatting."""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        self.files = []
        self.warnings = []

    def _write(self, name: str, text: str):
        os.makedirs(self.out_dir, exist_ok=True)
        data = text.encode("utf-8")
        with open(os.path.join(self.out_dir, name), "wb") as fh:
            fh.write(data)
        self.files.append({"path": name, "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()})

    def json(self, name: str, obj):
        self._write(name, json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")

    def csv(self, name: str, header, rows):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        self._write(name, buf.getvalue())

    def text(self, name: str, text: str):
        self._write(name, text)

    def warn(self, message: str):
        self.warnings.append(message)


def _origin(d):
    return ((0,) * d, 0)


# ------------------------------------------------------------------ commands

def _cmd_berger(cfg: ExperimentConfig, out: _Outputs, threads: int) -> dict:
    from .walker import walk_endpoints

    lat, d = cfg.lattice, cfg.lattice.d

    def block(lo, hi):
        memo = Memo(d, lat.horizon, nn=len(lat.offsets()))
        rows = []
        for i in range(lo, hi):
            env = condition_on_origin(derive_seed(cfg.master_seed, "env", i), lat, cfg.weight_spec, memo=memo).handle
            ends, dead = walk_endpoints(_origin(d), cfg.steps, env, [derive_seed(cfg.master_seed, "walk", i)])
            rows.append((i, ends[0, :d].tolist(), bool(dead[0])))
        return rows

    rows = [r for part in map_blocks(block, cfg.replicas, threads, block=1) for r in part]
    good = [np.asarray(x, dtype=float) / cfg.steps for _, x, dead in rows if not dead]
    dead = sum(1 for r in rows if r[2])
    if dead:
        out.warn(f"{dead} walks hit a horizon dead end and were dropped")
    out.csv("replicas.csv", ["replica"] + [f"x_{j + 1}" for j in range(d)] + ["dead_end"],
            [[i, *x, int(de)] for i, x, de in rows])
    if not good:
        raise InsufficientDataError("every walk hit a dead end")
    arr = np.vstack(good)
    stderr = arr.std(axis=0, ddof=1) / math.sqrt(len(arr)) if len(arr) > 1 else np.full(d, np.nan)
    res = {"mu_hat": arr.mean(axis=0), "stderr": stderr, "replicas": len(arr), "steps": cfg.steps,
           "method": "ergodic X_n/n averaged over replicas", "dead_ends": dead}
    if cfg.weight_spec.kind == "berger":
        res["reference_mu"] = -1.0 / 90.0
    out.json("drift.json", res)
    return {"env i": "derive_seed(master_seed, 'env', i)", "walk i": "derive_seed(master_seed, 'walk', i)"}


def _cmd_drift(cfg: ExperimentConfig, out: _Outputs, threads: int) -> dict:
    from .regeneration import estimate_drift, find_regenerations

    lat, d = cfg.lattice, cfg.lattice.d
    count = cfg.steps // (2 * cfg.m) + 1
    budget = min(cfg.steps, cfg.options["budget"])

    def block(lo, hi):
        memo = Memo(d, lat.horizon, nn=len(lat.offsets()))
        recs = []
        for i in range(lo, hi):
            env = condition_on_origin(derive_seed(cfg.master_seed, "env", i), lat, cfg.weight_spec, memo=memo).handle
            recs.append(find_regenerations(_origin(d), count, cfg.m, env, derive_seed(cfg.master_seed, "walk", i),
                                           budget))
        return recs

    recs = [r for part in map_blocks(block, cfg.replicas, threads, block=1) for r in part]
    rows = []
    for i, rec in enumerate(recs):
        for n, (t, tau, y) in enumerate(zip(rec.times[1:], rec.taus, rec.Y), start=1):
            rows.append([i, n, int(t), int(tau), *[int(v) for v in y]])
    out.csv("increments.csv", ["replica", "n", "T_n", "tau_n"] + [f"Y_{j + 1}" for j in range(d)], rows)
    dead = sum(r.stop_reason == "dead_end" for r in recs)
    if dead:
        out.warn(f"{dead} walks hit a horizon dead end; their increments up to that point are kept")
    est = estimate_drift(recs)
    out.json("drift.json", {**est.to_dict(), "replicas": cfg.replicas, "steps_per_replica": budget,
                            "dead_ends": dead, "method": "regeneration ratio sum(Y) / sum(tau)"})
    return {"env i": "derive_seed(master_seed, 'env', i)", "walk i": "derive_seed(master_seed, 'walk', i)"}


def _clt_config(cfg: ExperimentConfig, threads: int):
    from .stats import CltConfig

    lat = cfg.lattice
    return CltConfig(lat.d, lat.p, cfg.weight_spec, cfg.m, cfg.steps, cfg.replicas, cfg.environments, lat.horizon,
                     lat.neighborhood, cfg.options["drift_budget"], threads)


def _cmd_clt(cfg: ExperimentConfig, out: _Outputs, threads: int, mode: str = "annealed") -> dict:
    from .stats import clt_experiment, qq_table

    rep = clt_experiment(mode, _clt_config(cfg, threads), cfg.master_seed)
    d = cfg.lattice.d
    rows = [[e, r, *z] for e, s in enumerate(rep.samples) for r, z in enumerate(s.tolist())]
    out.csv("samples.csv", ["environment", "replica"] + [f"z_{j + 1}" for j in range(d)], rows)
    res = rep.to_dict()
    pooled = rep.pooled
    res["pooled"] = pooled.to_dict()
    out.json("clt.json", res)
    out.csv("qq.csv", ["theoretical", "empirical"], qq_table(np.vstack(rep.samples)).tolist())
    if rep.dead_ends:
        out.warn(f"{rep.dead_ends} walks hit a horizon dead end and were dropped")
    if mode == "annealed":
        return {"drift env i": "derive_seed(master_seed, 'drift-env', i)",
                "drift walk i": "derive_seed(master_seed, 'drift-walk', i)",
                "env r": "derive_seed(master_seed, 'env', r)", "walk r": "derive_seed(master_seed, 'walk', r)"}
    return {"drift env i": "derive_seed(master_seed, 'drift-env', i)",
            "drift walk i": "derive_seed(master_seed, 'drift-walk', i)",
            "env e": "derive_seed(master_seed, 'quenched-env', e)",
            "walk r in env e": "derive_seed(master_seed, 'quenched-walk/{e}', r)"}


def _tail_block(name: str, times: np.ndarray, failures: int, out: _Outputs) -> dict:
    from .regeneration import fit_tail

    out.csv(f"{name}.csv", ["sample", name], [[i, int(t)] for i, t in enumerate(times)])
    res = {"samples": int(len(times)), "failures": int(failures),
           "mean": float(times.mean()) if len(times) else None}
    if failures:
        out.warn(f"{failures} {name} replicas ran out of budget or hit a dead end")
    try:
        res["fit"] = fit_tail(times).to_dict()
    except (InsufficientDataError, OpcwalkError) as exc:
        res["fit"] = None
        out.warn(f"{name} tail fit failed: {exc}")
    return res


def _cmd_tail(cfg: ExperimentConfig, out: _Outputs, threads: int) -> dict:
    from .pairwalk import first_simultaneous_times
    from .regeneration import first_regeneration_times

    lat, o = cfg.lattice, cfg.options
    t1, f1 = first_regeneration_times(lat, cfg.weight_spec, cfg.m, cfg.replicas, cfg.master_seed, o["budget"],
                                      threads)
    res = {"T_1": _tail_block("T_1", t1, f1, out)}
    seeds = {"env i": "derive_seed(master_seed, 'env', i)", "walk i": "derive_seed(master_seed, 'walk', i)"}
    if o["pair"]:
        mode = o["pair_mode"]
        base = derive_seed(cfg.master_seed, "pair")
        ts, fs = first_simultaneous_times(mode, _origin(lat.d), _origin(lat.d), cfg.replicas, cfg.m, lat,
                                          cfg.weight_spec, base, o["budget"], threads)
        res["T_sim_1"] = _tail_block("T_sim_1", ts, fs, out)
        res["T_sim_1"]["mode"] = mode
        seeds["pair replica i"] = f"derive_seed(derive_seed(master_seed, 'pair'), '{mode}', i)"
    out.json("tail.json", res)
    return seeds


def _cmd_mixing(cfg: ExperimentConfig, out: _Outputs, threads: int) -> dict:
    from .weights import estimate_mixing

    o = cfg.options
    est = estimate_mixing(cfg.weight_spec, o["mode"], o["axis"], o["gaps"], samples=o["samples"],
                          rng=np.random.default_rng(cfg.master_seed), d=cfg.lattice.d, bootstrap=o["bootstrap"])
    out.text("mixing.csv", est.to_csv())
    out.json("mixing.json", {"gaps": est.gaps, "estimate": est.coefficients, "ci_halfwidth": est.ci_halfwidth,
                             "mode": est.mode, "axis": est.axis, "event_family": est.event_family,
                             "samples": est.samples})
    return {"field realizations": "derive_seed(base, 'mixing', i) with base drawn from "
                                  "numpy.random.default_rng(master_seed)"}


def _separation(s, d):
    if isinstance(s, list):
        return tuple(int(v) for v in s)
    return (int(s),) + (0,) * (d - 1)


def _cmd_pair_tv(cfg: ExperimentConfig, out: _Outputs, threads: int) -> dict:
    from .pairwalk import estimate_tv
    from .stats import loglinear_fit

    lat, o, d = cfg.lattice, cfg.options, cfg.lattice.d
    rows, norms, tvs, ests = [], [], [], []
    for k, s in enumerate(o["separations"]):
        v = _separation(s, d)
        est = estimate_tv(_origin(d), (v, 0), cfg.replicas, o["resolution"], cfg.m,
                          derive_seed(cfg.master_seed, "tv", k), lat, cfg.weight_spec, o["tau_clip"], o["budget"],
                          o["bootstrap"], threads)
        if est.failures:
            out.warn(f"separation {list(v)}: {est.failures} replicas without a simultaneous regeneration")
        norm = float(max(abs(c) for c in v))
        rows.append([k, norm, *v, est.tv, est.ci_low, est.ci_high, est.n_joint, est.n_independent, est.failures])
        norms.append(norm)
        tvs.append(est.tv)
        ests.append(est)
    out.csv("tv.csv", ["index", "separation"] + [f"v_{j + 1}" for j in range(d)]
            + ["tv", "ci_low", "ci_high", "n_joint", "n_independent", "failures"], rows)
    order = np.argsort(norms, kind="stable")
    monotone = all(ests[order[i + 1]].ci_low <= ests[order[i]].ci_high for i in range(len(order) - 1))
    pos = [i for i in range(len(tvs)) if tvs[i] > 0]
    fit = None
    if len({norms[i] for i in pos}) >= 2:
        fit = loglinear_fit([norms[i] for i in pos], [math.log(tvs[i]) for i in pos]).to_dict()
    out.json("tv.json", {"separations": norms, "tv": tvs, "non_increasing_up_to_ci": monotone, "loglinear_fit": fit})
    return {"separation k": "derive_seed(master_seed, 'tv', k) = s_k; joint replica i: "
                            "derive_seed(derive_seed(s_k, 'joint'), 'joint', i); independent replica i: "
                            "derive_seed(derive_seed(s_k, 'independent'), 'independent', i)"}


def _cmd_annulus(cfg: ExperimentConfig, out: _Outputs, threads: int) -> dict:
    from .pairwalk import AnnulusSpec, annulus_experiment

    o = cfg.options
    spec = AnnulusSpec(float(o["r1"]), float(o["r2"]), o.get("U"))
    res = annulus_experiment(spec, float(o["r"]), cfg.replicas, cfg.lattice, cfg.weight_spec, cfg.m,
                             cfg.master_seed, o["budget"], o["min_radius"], threads, o["convention"])
    if res.incomplete:
        out.warn(f"{res.incomplete} pairs did not leave the annulus within the budget")
    out.json("annulus.json", res.to_dict())
    return {"pair i": "derive_seed(master_seed, 'annulus', i) = s_i; environments "
                      "derive_seed(s_i, 'env-a'/'env-b'); walks derive_seed(s_i, 'walk-a'/'walk-b')"}


def _cmd_oracle(cfg: ExperimentConfig, out: _Outputs, threads: int) -> dict:
    from .walker import DEFAULT_WINDOWS, oracle_check, window_from_dict

    windows = cfg.options.get("windows") or DEFAULT_WINDOWS
    rows, worst = [], 0.0
    for k, w in enumerate(windows):
        env, start, steps = window_from_dict(w)
        res = oracle_check(env, start, steps, cfg.replicas, derive_seed(cfg.master_seed, "window", k),
                           cfg.options.get("k_extra") and steps + int(cfg.options["k_extra"]))
        name = w.get("name", f"window-{k}")
        rows.append([name, "sample_walk", res["walk_tv"], res["support"], res["runs"], steps])
        rows.append([name, "local_path", res["local_tv"], res["support"], res["runs"], res["k"]])
        worst = max(worst, res["walk_tv"], res["local_tv"])
    out.csv("oracle.csv", ["window", "sampler", "tv", "support", "runs", "length"], rows)
    out.json("oracle.json", {"max_tv": worst, "windows": len(windows), "runs": cfg.replicas})
    return {"window k": "derive_seed(master_seed, 'window', k) = s_k; walk i: derive_seed(s_k, 'oracle-walk', i); "
                        "local path i: derive_seed(s_k, 'oracle-local', i)"}


_DISPATCH = {
    "berger": _cmd_berger,
    "drift": _cmd_drift,
    "clt": _cmd_clt,
    "quenched-clt": lambda c, o, t: _cmd_clt(c, o, t, "quenched"),
    "tail": _cmd_tail,
    "mixing": _cmd_mixing,
    "pair-tv": _cmd_pair_tv,
    "annulus": _cmd_annulus,
    "oracle-check": _cmd_oracle,
}


def run(config: ExperimentConfig, threads: int = 1) -> RunManifest:
    """Run the configured command, write its results and ``manifest.json`` to ``config.output_dir``."""
    t0 = time.perf_counter()
    out = _Outputs(config.output_dir)
    seeds = _DISPATCH[config.command](config, out, max(1, int(threads)))
    manifest = RunManifest(config.to_dict(), list(out.files), round(time.perf_counter() - t0, 3), __version__,
                           seeds, bool(out.warnings), list(out.warnings), max(1, int(threads)))
    with open(os.path.join(config.output_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(_plain(manifest.to_dict()), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _emit(obj):
    sys.stderr.write(json.dumps(_plain(obj), sort_keys=True) + "\n")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="opcwalk", description="Random walks on the oriented percolation backbone.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON experiment configuration")
    parser.add_argument("--out", help="output directory (overrides output_dir)")
    parser.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")
    parser.add_argument("--seed", type=int, help="master seed (overrides master_seed)")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        _emit({"error": "config", "details": [{"pointer": "", "message": str(exc)}]})
        return 2
    try:
        cfg = validate_config(text, args.command)
        if args.seed is not None or args.out is not None:
            raw = cfg.to_dict()
            if args.seed is not None:
                raw["master_seed"] = args.seed
            if args.out is not None:
                raw["output_dir"] = args.out
            cfg = parse_config(raw, args.command)
        if args.threads < 1:
            raise ConfigError([("/threads", "must be >= 1")])
    except ConfigError as exc:
        _emit({"error": "config", "details": [{"pointer": p, "message": m} for p, m in exc.errors]})
        return 2
    try:
        manifest = run(cfg, args.threads)
    except OpcwalkError as exc:
        _emit({"error": type(exc).__name__, "message": str(exc)})
        return 1
    if manifest.partial:
        _emit({"warning": "partial", "details": manifest.warnings, "output_dir": cfg.output_dir})
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
