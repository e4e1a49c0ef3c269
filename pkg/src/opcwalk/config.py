"""Experiment configuration: JSON schema, defaults and validation.

A configuration is a JSON object::

    {
      "command": "drift",
      "lattice": {"d": 1, "neighborhood": "corners", "p": 0.8, "horizon": 50},
      "weight_spec": {"kind": "constant", "params": {"value": 1.0}},
      "m": 1, "steps": 1000, "replicas": 10, "environments": 1,
      "master_seed": 0, "output_dir": "out",
      "options": {}
    }

Every field except ``command`` has a default. ``options`` holds the
command-specific settings listed in ``OPTION_DEFAULTS``; ``annulus`` also
needs ``r1``, ``r2`` and ``r``. Errors are reported as ``(JSON pointer,
message)`` pairs.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

from .environment import NEIGHBORHOODS, LatticeConfig
from .errors import ConfigError, ContractViolation
from .weights import KINDS, WeightFieldSpec

COMMANDS = ("drift", "clt", "quenched-clt", "tail", "mixing", "pair-tv", "annulus", "oracle-check", "berger")

TOP_DEFAULTS = {
    "m": 1,
    "steps": 1000,
    "replicas": 10,
    "environments": 1,
    "master_seed": 0,
    "output_dir": "out",
}
LATTICE_DEFAULTS = {"d": 1, "neighborhood": "corners", "p": 0.8, "horizon": 50}

OPTION_DEFAULTS = {
    "drift": {"budget": 10**7},
    "clt": {"drift_budget": 2 * 10**6},
    "quenched-clt": {"drift_budget": 2 * 10**6},
    "tail": {"budget": 10**7, "pair": False, "pair_mode": "independent"},
    "mixing": {"mode": "alpha", "axis": "time", "gaps": [1, 2, 4, 8], "samples": 20000, "bootstrap": 200},
    "pair-tv": {"separations": [0, 4, 8, 16, 32], "tau_clip": 64, "resolution": 1, "budget": 10**7,
                "bootstrap": 200},
    "annulus": {"budget": 10**6, "min_radius": 2.0, "convention": "contract"},
    "oracle-check": {"windows": None, "k_extra": None},
    "berger": {},
}
REQUIRED_OPTIONS = {"annulus": ("r1", "r2", "r")}

_COUNTS = ("m", "steps", "replicas", "environments")


@dataclass
class ExperimentConfig:
    command: str
    lattice: LatticeConfig
    weight_spec: WeightFieldSpec
    m: int = 1
    steps: int = 1000
    replicas: int = 10
    environments: int = 1
    master_seed: int = 0
    output_dir: str = "out"
    options: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "lattice": self.lattice.to_dict(),
            "weight_spec": self.weight_spec.to_dict(),
            "m": self.m,
            "steps": self.steps,
            "replicas": self.replicas,
            "environments": self.environments,
            "master_seed": self.master_seed,
            "output_dir": self.output_dir,
            "options": copy.deepcopy(self.options),
        }


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_lattice(raw, errors, command):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        errors.append(("/lattice", "must be an object"))
        return None
    out = dict(LATTICE_DEFAULTS)
    if command == "berger":
        out["p"] = 1.0
    for key in raw:
        if key not in LATTICE_DEFAULTS:
            errors.append((f"/lattice/{key}", "unknown field"))
    out.update({k: v for k, v in raw.items() if k in LATTICE_DEFAULTS})
    ok = True
    if not _is_int(out["d"]) or out["d"] < 1:
        errors.append(("/lattice/d", "must be an integer >= 1"))
        ok = False
    if out["neighborhood"] not in NEIGHBORHOODS:
        errors.append(("/lattice/neighborhood", f"must be one of {list(NEIGHBORHOODS)}"))
        ok = False
    if not _is_number(out["p"]) or not 0 < out["p"] <= 1:
        errors.append(("/lattice/p", "must be a number in (0, 1]"))
        ok = False
    if not _is_int(out["horizon"]) or out["horizon"] < 1:
        errors.append(("/lattice/horizon", "must be an integer >= 1"))
        ok = False
    if not ok:
        return None
    return LatticeConfig(out["d"], out["neighborhood"], float(out["p"]), out["horizon"])


def _check_weights(raw, errors, command):
    if raw is None:
        return WeightFieldSpec.berger() if command == "berger" else WeightFieldSpec.constant(1.0)
    if not isinstance(raw, dict):
        errors.append(("/weight_spec", "must be an object"))
        return None
    if "kind" not in raw:
        errors.append(("/weight_spec/kind", "required"))
        return None
    if raw["kind"] not in KINDS:
        errors.append(("/weight_spec/kind", f"must be one of {list(KINDS)}"))
        return None
    params = raw.get("params", {})
    if not isinstance(params, dict):
        errors.append(("/weight_spec/params", "must be an object"))
        return None
    try:
        return WeightFieldSpec(raw["kind"], params)
    except (ContractViolation, TypeError, ValueError) as exc:
        errors.append(("/weight_spec/params", str(exc)))
        return None


def _check_options(command, raw, errors):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        errors.append(("/options", "must be an object"))
        return {}
    out = copy.deepcopy(OPTION_DEFAULTS.get(command, {}))
    out.update(copy.deepcopy(raw))
    for key in REQUIRED_OPTIONS.get(command, ()):
        if key not in raw:
            errors.append((f"/options/{key}", f"required by command {command}"))
    for key in ("budget", "drift_budget", "samples", "bootstrap", "tau_clip", "resolution"):
        if key in out and (not _is_int(out[key]) or out[key] < 1):
            errors.append((f"/options/{key}", "must be a positive integer"))
    if command == "annulus" and all(k in raw for k in ("r1", "r2", "r")):
        if not all(_is_number(raw[k]) for k in ("r1", "r2", "r")):
            errors.append(("/options", "r1, r2 and r must be numbers"))
        elif not 0 < raw["r1"] < raw["r2"]:
            errors.append(("/options/r2", "need 0 < r1 < r2"))
        elif not raw["r1"] <= raw["r"] <= raw["r2"]:
            errors.append(("/options/r", "must lie in [r1, r2]"))
    if command == "pair-tv":
        seps = out["separations"]
        if not isinstance(seps, list) or not seps:
            errors.append(("/options/separations", "must be a non-empty list"))
        else:
            for i, s in enumerate(seps):
                if not (_is_int(s) and s >= 0) and not (isinstance(s, list) and all(_is_int(c) for c in s)):
                    errors.append((f"/options/separations/{i}", "must be a non-negative integer or an integer vector"))
    if command == "mixing":
        if out["mode"] not in ("alpha", "phi"):
            errors.append(("/options/mode", "must be 'alpha' or 'phi'"))
        if out["axis"] not in ("time", "space", "spacetime"):
            errors.append(("/options/axis", "must be 'time', 'space' or 'spacetime'"))
        gaps = out["gaps"]
        if not isinstance(gaps, list) or not gaps or not all(_is_int(g) and g >= 1 for g in gaps):
            errors.append(("/options/gaps", "must be a non-empty list of integers >= 1"))
    if command == "tail" and out["pair_mode"] not in ("joint", "independent"):
        errors.append(("/options/pair_mode", "must be 'joint' or 'independent'"))
    if command == "annulus" and out["convention"] not in ("contract", "brownian"):
        errors.append(("/options/convention", "must be 'contract' or 'brownian'"))
    return out


def parse_config(raw: dict, command: str | None = None) -> ExperimentConfig:
    """Validate a decoded JSON object and apply defaults.

    ``command`` (from the command line) fills in a missing ``command`` field
    and must agree with a present one.

    Raises:
        ConfigError: with every violation as a ``(JSON pointer, message)`` pair.
    """
    errors = []
    if not isinstance(raw, dict):
        raise ConfigError([("", "configuration must be a JSON object")])
    known = {"command", "lattice", "weight_spec", "options"} | set(TOP_DEFAULTS)
    for key in raw:
        if key not in known:
            errors.append((f"/{key}", "unknown field"))
    cmd = raw.get("command", command)
    if cmd is None:
        errors.append(("/command", "required"))
    elif cmd not in COMMANDS:
        errors.append(("/command", f"must be one of {list(COMMANDS)}"))
    elif command is not None and cmd != command:
        errors.append(("/command", f"config says {cmd!r} but {command!r} was requested"))
    top = dict(TOP_DEFAULTS)
    top.update({k: raw[k] for k in TOP_DEFAULTS if k in raw})
    for key in _COUNTS:
        if not _is_int(top[key]) or top[key] < 1:
            errors.append((f"/{key}", "must be a positive integer"))
    if not _is_int(top["master_seed"]) or not 0 <= top["master_seed"] < 2**64:
        errors.append(("/master_seed", "must be an integer in [0, 2^64)"))
    if not isinstance(top["output_dir"], str) or not top["output_dir"]:
        errors.append(("/output_dir", "must be a non-empty string"))
    cmd_ok = cmd in COMMANDS
    lattice = _check_lattice(raw.get("lattice"), errors, cmd)
    weights = _check_weights(raw.get("weight_spec"), errors, cmd)
    options = _check_options(cmd, raw.get("options"), errors) if cmd_ok else {}
    if cmd_ok and lattice is not None and weights is not None:
        if cmd == "berger" and (lattice.d != 1 or weights.kind != "berger"):
            errors.append(("/weight_spec/kind", "berger needs d = 1 and the berger weight field"))
        if weights.kind == "berger" and lattice.d != 1:
            errors.append(("/weight_spec/kind", "the berger field is defined for d = 1 only"))
        if cmd in ("drift", "tail", "pair-tv", "annulus") and lattice.p >= 1:
            errors.append(("/lattice/p", f"{cmd} needs regenerations, which require p < 1"))
        if cmd == "quenched-clt" and top["environments"] < 2:
            errors.append(("/environments", "quenched-clt needs at least 2 environments"))
        if cmd == "annulus" and lattice.d < 2:
            errors.append(("/lattice/d", "annulus needs d >= 2"))
        if cmd == "pair-tv":
            for i, s in enumerate(options.get("separations", [])):
                if isinstance(s, list) and len(s) != lattice.d:
                    errors.append((f"/options/separations/{i}", f"vector must have {lattice.d} entries"))
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(cmd, lattice, weights, top["m"], top["steps"], top["replicas"], top["environments"],
                            top["master_seed"], top["output_dir"], options)


def validate_config(text: str, command: str | None = None) -> ExperimentConfig:
    """Parse JSON text into an ``ExperimentConfig``.

    Raises:
        ConfigError: malformed JSON (pointer ``""``) or schema violations.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([("", f"invalid JSON: {exc}")]) from exc
    return parse_config(raw, command)
