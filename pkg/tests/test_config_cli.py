import csv
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from openqx.cli import EXIT_TOLERANCE, EXIT_VALIDATION, main, resolve_workers
from openqx.config import ConfigError, load_scenario, parse_complex, preset_names, scenario_from_dict

BASE = {
    "system": {"statistics": "fermion", "eps_s": [[0.3]]},
    "bath": {"beta": 2.0},
    "spectral": {"kind": "lorentzian", "terms": [{"amplitude": 0.5, "center": 0.0, "width": 1.0}]},
    "initial": {"state": "fock:1"},
    "grid": {"t_max": 4.0, "n_steps": 80},
}


def with_changes(**sections):
    doc = {k: dict(v) for k, v in BASE.items()}
    for sec, fields in sections.items():
        doc.setdefault(sec, {}).update(fields)
    return doc


@pytest.mark.parametrize(
    "text, value",
    [("0.3-0.2i", 0.3 - 0.2j), ("2i", 2j), ("-i", -1j), ("1e-3+4j", 1e-3 + 4j), (1.5, 1.5), ("  7 ", 7)],
)
def test_parse_complex(text, value):
    assert parse_complex(text) == value


@pytest.mark.parametrize("bad", ["abc", True, [1]])
def test_parse_complex_rejects(bad):
    with pytest.raises(ConfigError):
        parse_complex(bad)


@pytest.mark.parametrize(
    "changes, field",
    [
        ({"system": {"statistics": "anyon"}}, "system.statistics"),
        ({"system": {"eps_s": [[0, 1], [0, 0]]}}, "system"),
        ({"bath": {"beta": "hot"}}, "bath.beta"),
        ({"spectral": {"kind": "gaussian"}}, "spectral.kind"),
        ({"initial": {"state": "fock:2"}}, "initial.state"),
        ({"initial": {"state": "mixed:0.5*1"}}, "initial: trace"),
        ({"grid": {"snapshots": [9.0]}}, "grid.snapshots"),
    ],
)
def test_validation_messages_name_the_field(changes, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        scenario_from_dict(with_changes(**changes))


def test_missing_section():
    doc = with_changes()
    del doc["bath"]
    with pytest.raises(ConfigError, match=r"\[bath\]"):
        scenario_from_dict(doc)


def test_non_hermitian_initial_entries():
    doc = with_changes(
        system={"eps_s": [[0.1, 0], [0, 0.2]]},
        spectral={"kind": "none"},
        initial={"state": None, "entries": [{"i": [1, 0], "j": [1, 0], "c": 1}, {"i": [1, 0], "j": [0, 1], "c": 0.1}]},
    )
    doc["initial"].pop("state")
    with pytest.raises(ConfigError, match="Hermitian"):
        scenario_from_dict(doc)


def test_fermion_coherence_across_particle_number_rejected():
    doc = with_changes(initial={"entries": [{"i": [1], "j": [0], "c": 0.1}]})
    with pytest.raises(ConfigError, match="particle numbers"):
        scenario_from_dict(doc)


def test_every_preset_loads():
    names = preset_names()
    assert "decoupled" in names and "weak_coupling" in names
    for name in names:
        assert load_scenario(f"preset:{name}").rho0.passes_audit()


def test_worker_resolution(monkeypatch):
    monkeypatch.setenv("OPENQX_WORKERS", "3")
    assert resolve_workers(None) == 3
    assert resolve_workers(2) == 2
    with pytest.raises(ConfigError):
        resolve_workers(0)


def write_config(tmp_path, text):
    path = tmp_path / "scenario.toml"
    path.write_text(text)
    return path


GOOD = """
[system]
statistics = "fermion"
eps_s = [[0.3]]
[bath]
beta = 2.0
[spectral]
kind = "lorentzian"
terms = [{ amplitude = 0.5, center = 0.0, width = 1.0 }]
[initial]
state = "fock:1"
[grid]
t_max = 4.0
n_steps = 80
snapshots = [2.0, 4.0]
"""


def test_exit_code_for_invalid_config(tmp_path, capsys):
    path = write_config(tmp_path, GOOD.replace('"fermion"', '"anyon"'))
    assert main(["evolve", "--config", str(path), "--out", str(tmp_path / "o")]) == EXIT_VALIDATION
    assert "system.statistics" in capsys.readouterr().err


def test_exit_code_for_numerical_failure(tmp_path):
    text = """
[system]
statistics = "boson"
eps_s = [[0.3]]
n_max = 3
[bath]
beta = 0.5
mu = -0.2
[spectral]
kind = "ohmic"
amplitude = 0.3
cutoff = 1.0
[initial]
state = "fock:3"
[grid]
t_max = 10.0
n_steps = 100
"""
    assert main(["evolve", "--config", str(write_config(tmp_path, text)), "--out", str(tmp_path / "o")]) == EXIT_TOLERANCE


def test_outputs_are_deterministic(tmp_path):
    path = write_config(tmp_path, GOOD)
    for run, workers in (("a", "1"), ("b", "4")):
        for stage in ("spectrum", "greens", "evolve"):
            assert main([stage, "--config", str(path), "--workers", workers, "--out", str(tmp_path / run)]) == 0
    for name in ("spectrum.csv", "modes.json", "greens.csv", "evolution.csv", "snapshots.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_csv_columns(tmp_path):
    path = write_config(tmp_path, GOOD)
    main(["greens", "--config", str(path), "--out", str(tmp_path)])
    with open(tmp_path / "greens.csv") as fh:
        header = next(csv.reader(fh))
    assert header[0] == "t" and "u_11_re" in header and "v_11_im" in header


def test_decoupled_populations_are_constant(tmp_path):
    assert main(["evolve", "--config", "preset:decoupled", "--out", str(tmp_path)]) == 0
    with open(tmp_path / "evolution.csv") as fh:
        rows = list(csv.DictReader(fh))
    pops = [c for c in rows[0] if c.startswith("p") and c != "purity"]
    first = np.array([float(rows[0][c]) for c in pops])
    for row in rows:
        assert np.max(np.abs([float(row[c]) for c in pops] - first)) < 1e-12


def test_verify_stage_passes(tmp_path, capsys):
    assert main(["verify", "--config", "preset:fermion_oracle", "--out", str(tmp_path)]) == 0
    result = json.loads((tmp_path / "verify.json").read_text())
    assert result and all(v["pass"] for v in result.values())
    assert "PASS" in capsys.readouterr().out


def test_console_script(tmp_path):
    exe = shutil.which("openqx")
    cmd = [exe] if exe else [sys.executable, "-m", "openqx.cli"]
    proc = subprocess.run(cmd + ["spectrum", "--config", "preset:decoupled", "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "spectrum.csv").exists()


def test_thermalize_weak_coupling_preset(tmp_path):
    assert main(["thermalize", "--config", "preset:weak_coupling", "--workers", "2", "--out", str(tmp_path)]) == 0
    with open(tmp_path / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert float(rows[-1]["deviation"]) < 1e-3
    assert json.loads((tmp_path / "memory.json").read_text())["retains_memory"] is False
