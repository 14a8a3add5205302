import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from gbfbi import cli

ROOT = Path(__file__).resolve().parents[1]


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


BASE = {"schema_version": 1, "metric": {"family": "euclidean"}, "seed": 3,
        "pair": {"samples": 20, "admissibility_samples": 1}}


def test_schema_copy_in_docs_matches_package():
    assert json.loads((ROOT / "docs" / "config.schema.json").read_text()) == cli.schema()


def test_bundled_example_validates():
    cfg = cli.load_config(cli.example_config())
    assert cfg["function"]["kind"] == "half-plane-jump" and cfg["directions"]["count"] == 16


@pytest.mark.parametrize("text", [
    "{not json",
    json.dumps({"schema_version": 1}),
    json.dumps({**BASE, "bogus": 1}),
    json.dumps({**BASE, "probe": {"taus": [25, 20, 30, 40, 50]}}),
    json.dumps({**BASE, "anchor": {"z": [2.0, 0.0]}}),
    json.dumps({**BASE, "function": {"kind": "sawtooth"}}),
    '{"schema_version": 1, "metric": {"family": "euclidean"}, "probe": {"lambda1": NaN}}',
])
def test_config_errors_exit_2_without_artifacts(tmp_path, text):
    p = tmp_path / "bad.json"
    p.write_text(text)
    out = tmp_path / "out"
    assert cli.main(["pair-audit", "--config", str(p), "--out", str(out)]) == cli.EXIT_CONFIG
    assert not out.exists()


def test_pair_audit_deterministic_and_manifest(tmp_path):
    p = _write(tmp_path, BASE)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["pair-audit", "--config", str(p), "--out", str(a)]) == 0
    assert cli.main(["pair-audit", "--config", str(p), "--out", str(b)]) == 0
    assert (a / "pair_audit.csv").read_bytes() == (b / "pair_audit.csv").read_bytes()
    rows = (a / "pair_audit.csv").read_text().splitlines()
    assert len(rows) == 21
    man = json.loads((a / "manifest.json").read_text())
    assert man["exit_status"] == 0 and man["seed"] == 3
    again = cli.validate_config(man["config"])
    assert cli.config_hash(again) == man["config_hash"]
    summ = json.loads((a / "pair_audit.json").read_text())
    assert summ["max_sum_defect"] <= 1e-10


def test_seed_override_changes_samples(tmp_path):
    p = _write(tmp_path, BASE)
    cli.main(["pair-audit", "--config", str(p), "--out", str(tmp_path / "a")])
    cli.main(["pair-audit", "--config", str(p), "--out", str(tmp_path / "b"), "--seed", "4"])
    assert (tmp_path / "a/pair_audit.csv").read_bytes() != (tmp_path / "b/pair_audit.csv").read_bytes()
    assert json.loads((tmp_path / "b/manifest.json").read_text())["seed"] == 4


def test_threads_env_fallback(monkeypatch):
    monkeypatch.setenv("TOOL_THREADS", "3")
    assert cli._threads(None) == 3
    assert cli._threads(2) == 2
    monkeypatch.setenv("TOOL_THREADS", "x")
    assert cli._threads(None) == 1


def test_numerical_failure_exit_3(tmp_path, monkeypatch):
    def boom(cfg, rng, threads):
        raise FloatingPointError("diverged")
    monkeypatch.setitem(cli.RUNNERS, "su-audit", boom)
    out = tmp_path / "o"
    assert cli.run("su-audit", _write(tmp_path, BASE), out) == cli.EXIT_NUMERIC
    assert json.loads((out / "manifest.json").read_text())["exit_status"] == 3


def test_phase_audit_and_console_entry(tmp_path):
    p = _write(tmp_path, {**BASE, "phase": {"samples": 1}})
    out = tmp_path / "o"
    env = dict(os.environ, PYTHONPATH=str(ROOT / "src"))
    proc = subprocess.run([sys.executable, "-m", "gbfbi", "phase-audit", "--config", str(p), "--out", str(out)],
                          env=env, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads((out / "phase_audit.json").read_text())["all_passed"] is True
