import json
import subprocess
import sys

import pytest

from pharmonic_lab import cli, scenarios
from pharmonic_lab.scenarios import SCENARIOS, ScenarioResult

NAMES = ["sphere-disc", "gauge-synthetic", "conservation-sweep", "wente-suite", "lorentz-suite",
         "duality-probe", "neck-annulus", "morrey-decay"]


def test_list_text(capsys):
    assert cli.main(["list"]) == 0
    out = capsys.readouterr().out
    assert all(f"{n}:" in out for n in NAMES)


def test_list_json(capsys):
    assert cli.main(["list", "--json"]) == 0
    items = json.loads(capsys.readouterr().out)
    assert [i["name"] for i in items] == NAMES


@pytest.mark.parametrize("argv", [["list", "--bogus"], ["run", "--bogus"], ["frobnicate"], []])
def test_unknown_flag_exit_2(argv):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == 2


@pytest.mark.parametrize("config,field", [
    ({"scenario": "neck-annulus", "delta": 2}, "delta"),
    ({"scenario": "sphere-disc", "h": -0.1}, "h"),
    ({"scenario": "sphere-disc", "bc": "north"}, "bc"),
    ({"scenario": "wente-suite"}, "seed"),
    ({"scenario": "nope"}, "scenario"),
    ({"scenario": "duality-probe", "p": 2.2}, "p"),
    ({"scenario": "sphere-disc", "colour": 1}, "config"),
    ({"h": 0.04}, "scenario"),
])
def test_config_errors(tmp_path, capsys, config, field):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(config))
    assert cli.main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert capsys.readouterr().err.startswith(f"config error: {field}")


def test_flags_override_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"scenario": "wente-suite", "seed": 1, "h": 0.1}))
    cfg, out = cli.load_config(str(path), {"h": 0.05, "seed": None, "out": str(tmp_path)})
    assert cfg["h"] == 0.05 and cfg["seed"] == 1 and cfg["n_pairs"] == 20
    assert out == tmp_path


def test_missing_config_file(tmp_path, capsys):
    assert cli.main(["run", "--config", str(tmp_path / "none.json")]) == 2


def _run(tmp_path, name, *extra):
    out = tmp_path / name
    code = cli.main(["run", "--scenario", "wente-suite", "--seed", "7", "--h", "0.08", "--out", str(out), *extra])
    return code, out


def test_run_writes_outputs_and_is_deterministic(tmp_path):
    c1, o1 = _run(tmp_path, "a")
    c2, o2 = _run(tmp_path, "b")
    assert c1 == c2 == 0
    assert (o1 / "report.json").read_bytes() == (o2 / "report.json").read_bytes()
    rep = json.loads((o1 / "report.json").read_text())
    assert rep["schema"] == "1" and rep["passed"] is True
    assert set(rep["tags"]) == {"wente.closed_form", "wente.constant", "wente.sup"}
    assert (o1 / "metrics" / "suite.csv").read_text().startswith("case,f_id,h,")
    assert (o1 / "plots" / "constants.svg").read_text().lstrip().startswith("<?xml")
    meta = json.loads((o1 / "meta.json").read_text())
    assert {"started", "finished", "seconds"} <= set(meta)
    assert "started" not in rep


def test_failing_assertion_exit_1(tmp_path, monkeypatch):
    def failing(cfg):
        res = ScenarioResult("wente-suite")
        res.tables["t"] = [{"x": 1.0, "y": 2.0}]
        res.check("always_fails", "test.fail", 2.0, 1.0)
        return res
    spec = SCENARIOS["wente-suite"]
    monkeypatch.setitem(SCENARIOS, "wente-suite", scenarios.ScenarioSpec(
        spec.name, failing, spec.defaults, spec.seeded, spec.summary, spec.tags))
    code, out = _run(tmp_path, "f")
    assert code == 1
    rep = json.loads((out / "report.json").read_text())
    assert rep["passed"] is False and rep["checks"][0]["passed"] is False


def test_non_finite_values_serialize():
    from pharmonic_lab.report import clean
    assert clean({"a": float("inf"), "b": [float("nan")]}) == {"a": "inf", "b": ["nan"]}


def test_console_script(tmp_path):
    res = subprocess.run([sys.executable, "-m", "pharmonic_lab.cli", "list", "--json"],
                         capture_output=True, text=True, check=True)
    assert len(json.loads(res.stdout)) == 8
