from __future__ import annotations

import subprocess
import sys
from pathlib import Path

import pytest

from eitlab import cli, frozen

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write_cfg(tmp_path, text, name="x.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


PMF = "[experiment]\nkind = pmf\nseed = 0\n\n[pmf]\nell = {ell}\nr = {r}\nn = {n}\n"
SURV = ("[experiment]\nkind = survival\nseed = 1\nreplicas = 20\nassert = true\n\n"
        "[survival]\np = 0.95\nn = 8\n")


def test_pmf_subcommand_stdout(capsys, monkeypatch):
    monkeypatch.delenv(cli.OUT_ENV, raising=False)
    assert cli.main(["pmf", "--ell", "2", "--r", "1", "--n", "1"]) == 0
    assert capsys.readouterr().out == "x,prob\n1,1/2\n3,1/2\n"


def test_walk_subcommand(capsys, monkeypatch):
    monkeypatch.delenv(cli.OUT_ENV, raising=False)
    assert cli.main(["walk", "--n", "10", "--seed", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 12


def test_unknown_key_exits_2(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "[experiment]\nkind = pmf\n\n[pmf]\nelll = 2\n")
    assert cli.run(cfg, tmp_path / "out") == cli.EXIT_SCHEMA
    assert "elll" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_unknown_section_and_kind(tmp_path):
    bad = write_cfg(tmp_path, "[experiment]\nkind = pmf\n\n[pmf]\nn = 2\n[extra]\na = 1\n")
    assert cli.run(bad) == cli.EXIT_SCHEMA
    bad = write_cfg(tmp_path, "[experiment]\nkind = nope\n")
    assert cli.run(bad) == cli.EXIT_SCHEMA


def test_budget_exits_3_without_files(tmp_path):
    cfg = write_cfg(tmp_path, PMF.format(ell=3, r=3, n=12))
    out = tmp_path / "out"
    assert cli.run(cfg, out) == cli.EXIT_BUDGET
    assert not out.exists() or not any(out.iterdir())


def test_assertion_failure_exits_4(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, SURV)
    out = tmp_path / "out"
    assert cli.run(cfg, out) == cli.EXIT_OK
    monkeypatch.setattr(frozen, "Z3_C_ENVELOPE", 1e-3)   # bound far above any frequency
    out2 = tmp_path / "out2"
    assert cli.run(cfg, out2) == cli.EXIT_ASSERT
    assert not out2.exists() or not any(out2.iterdir())


def test_run_is_deterministic(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    cfg = write_cfg(tmp_path, PMF.format(ell=3, r=2, n=4))
    assert cli.run(cfg, tmp_path / "a") == 0
    assert cli.run(cfg, tmp_path / "b") == 0
    a, b = (tmp_path / "a" / "pmf.csv").read_bytes(), (tmp_path / "b" / "pmf.csv").read_bytes()
    assert a == b
    text = a.decode()
    assert text.startswith("# eitlab ") and "# seed = 0" in text
    assert "# timestamp = 1970-01-01T00:00:00Z" in text
    assert "timestamp" not in cli.strip_timestamp(text)


def test_env_out_dir(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    assert cli.main(["pmf", "--n", "2"]) == 0
    assert (tmp_path / "env" / "pmf.csv").exists()


def test_validator(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, PMF.format(ell=2, r=1, n=3))
    assert cli.run(cfg, tmp_path) == 0
    good = tmp_path / "pmf.csv"
    assert cli.validate_text(good.read_text()) == []
    assert cli.main(["validate", str(good)]) == 0
    bad = tmp_path / "bad.csv"
    bad.write_text(good.read_text().replace("1/8", "1/4", 1))
    assert cli.validate_text(bad.read_text())
    assert cli.main(["validate", str(bad)]) == cli.EXIT_ASSERT
    assert cli.main(["validate", str(tmp_path / "missing.csv")]) == cli.EXIT_ASSERT


def test_perc_writes_binary(tmp_path):
    assert cli.main(["perc", "--d", "2", "--depth", "6", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "config.bin").read_bytes()[:4] == b"PERC"
    assert (tmp_path / "cluster.csv").read_text().count("u,v") == 1


def test_resist_radii_guard():
    assert cli.main(["resist", "--p", "1.0", "--depth", "4", "--radii", "2", "8"]) == cli.EXIT_SCHEMA


def test_plot_is_deterministic(tmp_path):
    pytest.importorskip("matplotlib")
    for sub in ("a", "b"):
        assert cli.main(["walk", "--n", "50", "--plot", "--out", str(tmp_path / sub)]) == 0
    a = (tmp_path / "a" / "walk.svg").read_bytes()
    assert a == (tmp_path / "b" / "walk.svg").read_bytes()
    assert b"<svg" in a


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "eitlab", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("eitlab ")


@pytest.mark.parametrize("cfg", sorted(CONFIGS.glob("*.cfg")), ids=lambda p: p.stem)
def test_example_configs_parse(cfg):
    resolved = cli.load_config(cfg)
    assert resolved["experiment"]["kind"] in cli.SCHEMA
