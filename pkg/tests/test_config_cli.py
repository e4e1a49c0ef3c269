import json
import os

import pytest

from opcwalk.cli import main
from opcwalk.config import LATTICE_DEFAULTS, OPTION_DEFAULTS, TOP_DEFAULTS, parse_config, validate_config
from opcwalk.errors import ConfigError


def _pointers(exc):
    return {p for p, _ in exc.value.errors}


def test_bad_probability_and_missing_kind():
    with pytest.raises(ConfigError) as exc:
        validate_config('{"command": "drift", "lattice": {"p": 1.5}, "weight_spec": {"params": {}}}')
    assert {"/lattice/p", "/weight_spec/kind"} <= _pointers(exc)


def test_unknown_fields_and_bad_json():
    with pytest.raises(ConfigError) as exc:
        parse_config({"command": "drift", "lattic": {}, "lattice": {"q": 1}})
    assert {"/lattic", "/lattice/q"} <= _pointers(exc)
    with pytest.raises(ConfigError) as exc:
        validate_config("{not json")
    assert _pointers(exc) == {""}


def test_minimal_config_gets_defaults():
    cfg = parse_config({}, "drift").to_dict()
    assert cfg["lattice"] == {**LATTICE_DEFAULTS, "p": float(LATTICE_DEFAULTS["p"])}
    assert cfg["weight_spec"]["kind"] == "constant"
    assert {k: cfg[k] for k in TOP_DEFAULTS} == TOP_DEFAULTS
    assert cfg["options"] == OPTION_DEFAULTS["drift"]


def test_defaults_roundtrip():
    cfg = parse_config({"command": "mixing", "weight_spec": {"kind": "m_dependent", "params": {"w": 2}}})
    assert parse_config(cfg.to_dict()).to_dict() == cfg.to_dict()


@pytest.mark.parametrize("raw,pointer", [
    ({"command": "drift", "lattice": {"p": 1.0}}, "/lattice/p"),
    ({"command": "quenched-clt", "environments": 1}, "/environments"),
    ({"command": "annulus", "lattice": {"d": 1}, "options": {"r1": 2, "r2": 4, "r": 3}}, "/lattice/d"),
    ({"command": "annulus", "lattice": {"d": 2}}, "/options/r1"),
    ({"command": "berger", "lattice": {"d": 2}}, "/weight_spec/kind"),
    ({"command": "mixing", "options": {"gaps": []}}, "/options/gaps"),
    ({"command": "drift", "steps": 0}, "/steps"),
    ({"command": "tail", "options": {"pair_mode": "both"}}, "/options/pair_mode"),
])
def test_command_constraints(raw, pointer):
    with pytest.raises(ConfigError) as exc:
        parse_config(raw)
    assert pointer in _pointers(exc)


def _write(tmp_path, obj, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return str(path)


def test_cli_config_error_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path, {"lattice": {"p": 1.5}, "weight_spec": {"params": {}}})
    assert main(["drift", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert {d["pointer"] for d in err["details"]} >= {"/lattice/p", "/weight_spec/kind"}


def test_cli_berger_drift(tmp_path):
    cfg = _write(tmp_path, {"steps": 200000, "replicas": 4, "master_seed": 3})
    out = tmp_path / "o"
    assert main(["berger", "--config", cfg, "--out", str(out)]) == 0
    res = json.loads((out / "drift.json").read_text())
    assert abs(res["mu_hat"][0] + 1 / 90) <= 4 * max(res["stderr"][0], 1e-3)
    manifest = json.loads((out / "manifest.json").read_text())
    assert {f["path"] for f in manifest["files"]} == {"drift.json", "replicas.csv"}
    assert manifest["config"]["lattice"]["p"] == 1.0


def test_cli_partial_exit_code(tmp_path):
    cfg = _write(tmp_path, {"lattice": {"p": 0.8}, "replicas": 20, "options": {"budget": 3}})
    out = tmp_path / "o"
    assert main(["tail", "--config", cfg, "--out", str(out)]) == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["partial"] and manifest["warnings"]


def test_cli_oracle_check(tmp_path):
    cfg = _write(tmp_path, {"replicas": 20000})
    out = tmp_path / "o"
    assert main(["oracle-check", "--config", cfg, "--out", str(out)]) == 0
    assert json.loads((out / "oracle.json").read_text())["max_tv"] <= 0.03


def _results(out):
    return {name: (out / name).read_bytes() for name in sorted(os.listdir(out)) if name != "manifest.json"}


@pytest.mark.parametrize("command,raw", [
    ("drift", {"lattice": {"p": 0.8, "horizon": 40}, "steps": 2000, "replicas": 5}),
    ("tail", {"lattice": {"p": 0.8}, "replicas": 300, "options": {"pair": True}}),
    ("clt", {"lattice": {"p": 0.8}, "steps": 100, "replicas": 120, "options": {"drift_budget": 20000}}),
])
def test_cli_determinism_across_threads_and_runs(tmp_path, command, raw):
    cfg = _write(tmp_path, raw)
    outs = []
    for k, threads in enumerate((1, 2, 1)):
        out = tmp_path / f"o{k}"
        assert main([command, "--config", cfg, "--out", str(out), "--threads", str(threads), "--seed", "11"]) == 0
        outs.append(_results(out))
    assert outs[0] == outs[1] == outs[2]
    assert outs[0]


def test_cli_seed_changes_results(tmp_path):
    cfg = _write(tmp_path, {"lattice": {"p": 0.8}, "steps": 2000, "replicas": 3})
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["drift", "--config", cfg, "--out", str(a), "--seed", "1"]) == 0
    assert main(["drift", "--config", cfg, "--out", str(b), "--seed", "2"]) == 0
    assert _results(a) != _results(b)
