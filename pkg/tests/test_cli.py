import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from cbilab import cli

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write(tmp_path, text, name="c.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_unknown_experiment_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 2


def test_missing_seed_names_the_field(tmp_path, capsys):
    cfg = write(tmp_path, "branching: {b: 0, c: 1}\n")
    assert cli.main(["cumulant", "-c", cfg, "-o", str(tmp_path / "o")]) == 3
    assert "'seed'" in capsys.readouterr().err


def test_unknown_field_and_bad_mechanism(tmp_path, capsys):
    cfg = write(tmp_path, "seed: 1\nbranching: {b: 0, c: 1}\nbogus: 3\n")
    assert cli.main(["cumulant", "-c", cfg, "-o", str(tmp_path / "o")]) == 3
    assert "bogus" in capsys.readouterr().err
    cfg = write(tmp_path, "seed: 1\nbranching: {b: 0, c: -1}\n")
    assert cli.main(["cumulant", "-c", cfg, "-o", str(tmp_path / "o")]) == 3


def test_config_needed_except_for_verify(tmp_path):
    assert cli.main(["laws", "-o", str(tmp_path)]) == 3


def test_cumulant_run_artifacts_and_manifest(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["cumulant", "-c", str(CONFIGS / "cumulant.yaml"), "-o", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 1 and man["exit_status"] == 0
    assert "cumulant.csv" in man["artifacts"]
    assert set(man["versions"]) >= {"numpy", "scipy", "python"}
    assert (out / "cumulant.csv").read_text().count("\n") > 10


def test_seed_override(tmp_path):
    out = tmp_path / "o"
    cli.main(["cumulant", "-c", str(CONFIGS / "cumulant.yaml"), "-o", str(out), "-s", "99"])
    assert json.loads((out / "manifest.json").read_text())["seed"] == 99


def _simulate_cfg(tmp_path, n=400):
    text = (CONFIGS / "simulate.yaml").read_text()
    text = text.replace("dt: 0.001", "dt: 0.02").replace("n_paths: 5000", f"n_paths: {n}")
    return write(tmp_path, text, "sim.yaml")


def test_rerun_is_byte_identical_and_workers_invariant(tmp_path):
    cfg = _simulate_cfg(tmp_path)
    outs = []
    for i, w in enumerate(("1", "1", "2")):
        out = tmp_path / f"run{i}"
        cli.main(["simulate", "-c", cfg, "-o", str(out), "-w", w])
        outs.append(out)
    for name in ("summary.csv", "report.csv", "paths.csv", "jumps.csv"):
        ref = (outs[0] / name).read_bytes()
        assert (outs[1] / name).read_bytes() == ref
        assert (outs[2] / name).read_bytes() == ref


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.ENV_OUTPUT, str(tmp_path / "env"))
    assert cli.main(["cumulant", "-c", str(CONFIGS / "cumulant.yaml")]) == 0
    assert (tmp_path / "env" / "manifest.json").exists()


def test_entry_point_subprocess(tmp_path):
    env = dict(os.environ, **{cli.ENV_OUTPUT: str(tmp_path)})
    r = subprocess.run([sys.executable, "-m", "cbilab.cli", "nope"], capture_output=True, env=env)
    assert r.returncode == 2
    r = subprocess.run([sys.executable, "-m", "cbilab.cli", "laws", "-c",
                        str(CONFIGS / "laws.yaml")], capture_output=True, env=env)
    assert r.returncode == 0, r.stderr


def test_numerical_failure_exit_code(tmp_path, monkeypatch, capsys):
    from cbilab.errors import NumericalError

    def boom(spec):
        raise NumericalError("did not converge")
    monkeypatch.setitem(cli.RUNNERS, "cumulant", boom)
    assert cli.main(["cumulant", "-c", str(CONFIGS / "cumulant.yaml"), "-o", str(tmp_path)]) == 4
    assert "did not converge" in capsys.readouterr().err


def test_verify_subset_writes_acceptance_rows(tmp_path, capsys):
    cfg = write(tmp_path, "seed: 20240601\nverify:\n  only: [1, 2]\n")
    out = tmp_path / "v"
    assert cli.main(["verify", "-c", cfg, "-o", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    rows = man["acceptance"]
    assert len(rows) == 2 and all("PASS" in r for r in rows)
    assert (out / "acceptance.csv").read_text().count("\n") == 3
