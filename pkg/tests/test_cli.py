from __future__ import annotations

import json
import math
import os

import pytest

from sacelab import cli
from sacelab.config import parse_config_text, validate_dict
from sacelab.grid import default_gamma2
from sacelab.errors import ConfigError, NumericError
from sacelab.io import read_csv, read_manifest, verify_manifest, write_csv

MINIMAL = """
kind = "sample-gibbs"
potential = "quartic"
epsilon = 0.3
gamma = 0.3
"""

SMALL_GIBBS = MINIMAL + """
seed = 5
[chain]
n_steps = 40
burn_in = 10
n_chains = 8
"""


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


def test_minimal_config_gets_auto_N():
    cfg = parse_config_text(MINIMAL)
    g2 = default_gamma2(0.3, 0.1)
    assert cfg.N == "auto" and cfg.N_value == math.ceil(0.3 ** -g2) == 2
    assert cfg.section("chain")["rho"] == 0.5


def test_config_round_trip():
    cfg = parse_config_text(SMALL_GIBBS)
    again = parse_config_text(cfg.to_toml())
    assert again == cfg
    assert again.digest() == cfg.digest()


def test_runtime_keys_do_not_change_the_digest():
    a = parse_config_text(SMALL_GIBBS + "\n")
    b = parse_config_text(SMALL_GIBBS.replace('seed = 5', 'seed = 5\nworkers = 3\noutput_dir = "x"'))
    assert a.digest() == b.digest()
    assert "workers" not in a.to_toml(runtime=False)


def test_all_violations_are_reported():
    _, errs = validate_dict({"kind": "logz", "potential": "octic", "epsilon": 1.5, "gamma": 0.9,
                             "bogus": 1, "chain": {"rho": 1.0, "colour": "red"}})
    text = "\n".join(errs)
    for frag in ("unknown key 'bogus'", "unknown key 'chain.colour'", "unknown potential",
                 "epsilon", "0<γ<2/3", "chain.rho"):
        assert frag in text, frag
    assert len(errs) >= 6


def test_bad_coefficients_name_the_failing_clause():
    _, errs = validate_dict({"kind": "instanton", "potential": {"coeffs": [1.0, 0.0, 1.0]}})
    assert any("clause" in e for e in errs)


def test_toml_syntax_error_is_a_config_error():
    with pytest.raises(ConfigError, match="TOML"):
        parse_config_text("kind = ")


def test_env_overrides_and_flags(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text(SMALL_GIBBS)
    args = cli.build_parser().parse_args(["run", str(p)])
    cfg = cli.resolve_config(args, {"SACELAB_OUTPUT_DIR": "envout", "SACELAB_WORKERS": "2"})
    assert cfg.output_dir == "envout" and cfg.workers == 2
    args = cli.build_parser().parse_args(["sample-gibbs", "--config", str(p), "--out", "flagout",
                                          "--set", "chain.rho=0.7", "--epsilon", "0.25"])
    cfg = cli.resolve_config(args, {"SACELAB_OUTPUT_DIR": "envout"})
    assert cfg.output_dir == "flagout"
    assert cfg.section("chain")["rho"] == 0.7 and cfg.epsilon == 0.25
    with pytest.raises(ConfigError):
        cli.resolve_config(args, {"SACELAB_WORKERS": "many"})


def test_exit_code_config_error(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text('kind = "logz"\npotential = "quartic"\nepsilon = 2.0\ngamma = 0.3\nfoo = 1\n')
    assert cli.main(["run", str(p), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert "foo" in err and "epsilon" in err


def test_instanton_run_and_manifest(tmp_path):
    out = tmp_path / "inst"
    assert cli.main(["instanton", "--out", str(out)]) == cli.EXIT_OK
    man = read_manifest(str(out))
    assert man.status == "OK"
    assert {"config.toml", "instanton.csv", "instanton.json", "instanton.svg"} <= set(man.files)
    assert verify_manifest(str(out)) == []
    schema, cols, data = read_csv(str(out / "instanton.csv"))
    assert schema == "sacelab.instanton/1" and cols[:2] == ["s", "m"]
    info = json.loads((out / "instanton.json").read_text())
    assert abs(info["C_star"] - 4 / 3) < 1e-12
    (out / "instanton.json").write_text("{}")
    assert any("instanton.json" in m for m in verify_manifest(str(out)))


def test_exit_code_numeric_failure_writes_failed_manifest(tmp_path, monkeypatch):
    def boom(cfg, out):
        raise NumericError("synthetic breakdown")
    monkeypatch.setitem(cli.RUNNERS, "instanton", boom)
    out = tmp_path / "num"
    assert cli.main(["instanton", "--out", str(out)]) == cli.EXIT_NUMERIC
    man = read_manifest(str(out))
    assert man.status == "FAILED" and "synthetic breakdown" in man.error


def test_exit_code_acceptance_failure(tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "invariant_checks", lambda: [("always fails", False, "forced")])
    assert cli.main(["verify", "--out", str(tmp_path / "v")]) == cli.EXIT_ACCEPTANCE


def test_verify_passes(tmp_path):
    assert cli.main(["verify", "--out", str(tmp_path / "v")]) == cli.EXIT_OK
    rep = json.loads((tmp_path / "v" / "verify.json").read_text())
    assert rep["all_passed"] and len(rep["checks"]) >= 8


def test_reruns_are_byte_identical_for_any_worker_count(tmp_path):
    p = tmp_path / "g.toml"
    p.write_text(SMALL_GIBBS)
    outs = []
    for name, workers in (("a", "1"), ("b", "1"), ("c", "3")):
        out = tmp_path / name
        assert cli.main(["run", str(p), "--out", str(out), "--workers", workers]) == cli.EXIT_OK
        outs.append(out)
    files = ("gibbs.json", "traces.csv", "xi_hist.svg", "config.toml")
    for f in files:
        ref = _read(outs[0] / f)
        for o in outs[1:]:
            assert _read(o / f) == ref, f
    ma, mc = read_manifest(str(outs[0])), read_manifest(str(outs[2]))
    assert ma.config_hash == mc.config_hash
    assert {f: ma.files[f] for f in files} == {f: mc.files[f] for f in files}


def test_csv_schema_header(tmp_path):
    path = str(tmp_path / "t.csv")
    write_csv(path, "sacelab.test/1", ["a", "b"], [(1, 0.1), (2, float("nan"))])
    with open(path) as fh:
        assert fh.readline().strip() == "# schema: sacelab.test/1"
    schema, cols, data = read_csv(path)
    assert schema == "sacelab.test/1" and cols == ["a", "b"] and data.shape == (2, 2)


def test_no_partial_files_left_behind(tmp_path):
    out = tmp_path / "inst"
    cli.main(["instanton", "--out", str(out)])
    assert not [f for f in os.listdir(out) if f.startswith(".tmp-")]
