import json

import pytest

from pmeflow.cli import main
from pmeflow.config import BUILTIN_PRESETS, preset_text


@pytest.fixture(scope="module")
def small_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    codes = {}
    for n in (128, 256):
        codes[n] = main(["run", "barenblatt", "--resolution-override", str(n), "--dt-override", "0.02",
                         "--out", str(root / f"b{n}"), "--quiet"])
    return root, codes


def test_run_and_check(small_runs, capsys):
    root, codes = small_runs
    assert codes == {128: 0, 256: 0}
    for name in ("config.yaml", "summary.json", "diagnostics.csv", "diagnostics.json", "trajectories.csv"):
        assert (root / "b128" / name).exists()
    assert (root / "b128" / "snapshots" / "000_rho.bin").exists()
    assert main(["check", str(root / "b128")]) == 0
    assert "all checks passed" in capsys.readouterr().out


def test_check_reports_failures(small_runs, tmp_path, capsys):
    root, _ = small_runs
    bad = tmp_path / "bad"
    bad.mkdir()
    summary = json.loads((root / "b128" / "summary.json").read_text())
    summary["checks"]["mass_conservation"]["passed"] = False
    (bad / "summary.json").write_text(json.dumps(summary))
    assert main(["check", str(bad)]) == 1
    assert "mass_conservation" in capsys.readouterr().out
    assert main(["check", str(tmp_path / "missing")]) == 2


def test_report_with_comparison(small_runs, capsys):
    root, _ = small_runs
    assert main(["report", str(root / "b256"), "--compare", str(root / "b128"), "--write"]) == 0
    out = capsys.readouterr().out
    assert "Convergence ratios" in out and "mass_conservation" in out
    assert (root / "b256" / "report.md").read_text() == out


def test_preset_commands(capsys):
    assert main(["preset"]) == 0
    assert capsys.readouterr().out.split() == list(BUILTIN_PRESETS)
    assert main(["preset", "barenblatt"]) == 0
    assert capsys.readouterr().out == preset_text("barenblatt")


def test_bad_config_exits_2(tmp_path, capsys):
    path = tmp_path / "broken.yaml"
    path.write_text(preset_text("barenblatt").replace("gamma: 2.0", "gama: 2.0"))
    assert main(["run", str(path), "--out", str(tmp_path / "x")]) == 2
    assert "did you mean 'gamma'" in capsys.readouterr().err
    assert main(["run", "no-such-preset"]) == 2


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv("PMEFLOW_OUTPUT_ROOT", str(tmp_path))
    code = main(["run", "barenblatt", "--resolution-override", "64", "--dt-override", "0.05", "--quiet"])
    assert code == 0
    assert list(tmp_path.rglob("summary.json"))


def test_runs_are_reproducible(small_runs, tmp_path):
    root, _ = small_runs
    main(["run", "barenblatt", "--resolution-override", "128", "--dt-override", "0.02",
          "--out", str(tmp_path / "again"), "--quiet"])
    for name in ("summary.json", "diagnostics.csv", "diagnostics.json", "trajectories.csv"):
        assert (root / "b128" / name).read_bytes() == (tmp_path / "again" / name).read_bytes()
