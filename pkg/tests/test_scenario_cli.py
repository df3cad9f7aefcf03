import copy
import csv
import json

import pytest

from superdensity import cli, scenario

SQUARE_BUILD = {
    "version": 1,
    "name": "tiny-build",
    "seed": 0,
    "measures": {"plane": {"type": "lebesgue", "dim": 2}},
    "regions": {"square": {"type": "box", "lo": [-1, -1], "hi": [1, 1]}},
    "tasks": [
        {"id": "build", "op": "scatter_build", "measure": "plane", "omega": "square",
         "frame": {"C": 3.141592653589793, "p": 2, "q": 2, "r_bar": 1},
         "epsilon": 0.1, "h": 1, "K_max": 2},
        {"id": "grid", "op": "lambda_distribution", "n": 2, "R": 1, "beta": 2, "K": 2,
         "cloud": {"kind": "grid", "per_axis": 8}},
    ],
}


def _write(tmp_path, doc, name="s.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def test_bundled_scenarios_validate(capsys):
    for name in scenario.BUNDLED:
        assert cli.main(["validate", name]) == cli.EXIT_OK
    assert cli.main(["scenarios"]) == cli.EXIT_OK
    listed = capsys.readouterr().out
    assert all(name in listed for name in scenario.BUNDLED)


@pytest.mark.parametrize("edit, message", [
    (lambda d: d.update(version=2), "version"),
    (lambda d: d.update(colour="red"), "colour"),
    (lambda d: d["tasks"][0].update(omega="disk"), "task 'build': field 'omega'"),
    (lambda d: d["tasks"].append(dict(d["tasks"][1])), "duplicate"),
    (lambda d: d["tasks"][1].update(K="two"), "task 'grid'"),
])
def test_schema_errors_exit_2(tmp_path, capsys, edit, message):
    doc = copy.deepcopy(SQUARE_BUILD)
    edit(doc)
    assert cli.main(["validate", _write(tmp_path, doc)]) == cli.EXIT_SCHEMA
    assert message in capsys.readouterr().err


def test_validate_scenario_returns_diagnostics(tmp_path):
    assert scenario.validate_scenario("lattice-grid") == []
    errors = scenario.validate_scenario(_write(tmp_path, dict(SQUARE_BUILD, version=7)))
    assert len(errors) == 1 and "version" in errors[0]
    with pytest.raises(OSError):
        scenario.validate_scenario(str(tmp_path / "missing.json"))


def test_unregistered_chart_is_named(tmp_path, capsys):
    doc = {"version": 1, "name": "c", "charts": {"h": {"name": "helix"}},
           "tasks": [{"id": "fc", "op": "frame_constants", "chart": "h"}]}
    assert cli.main(["run", _write(tmp_path, doc), "--out", str(tmp_path / "o")]) == cli.EXIT_SCHEMA
    assert "helix" in capsys.readouterr().err


def test_missing_file_exits_3(tmp_path):
    assert cli.main(["validate", str(tmp_path / "nope.json")]) == cli.EXIT_IO


def test_unwritable_output_exits_3(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["run", "lattice-grid", "--out", str(blocker / "sub")]) == cli.EXIT_IO


def test_impossible_hypothesis_names_the_inequality(tmp_path, capsys):
    doc = copy.deepcopy(SQUARE_BUILD)
    doc["tasks"][0]["h"] = 0
    assert cli.main(["run", _write(tmp_path, doc), "--out", str(tmp_path / "o")]) == cli.EXIT_FAIL
    out = capsys.readouterr().out
    assert "FAIL build" in out and "h > np/q - q" in out
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["tasks"][0]["verdict"] == "FAIL"


def test_summary_records_provenance_and_thresholds(tmp_path):
    res = scenario.run_scenario(_write(tmp_path, SQUARE_BUILD), out=str(tmp_path / "o"), seed=3)
    assert res.passed
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    prov = summary["provenance"]
    assert prov["seed"] == 3 and prov["schema_version"] == scenario.SCHEMA_VERSION
    assert len(prov["scenario_sha256"]) == 64
    build = summary["tasks"][0]
    assert build["numbers"]["beta"] == 6
    assert build["numbers"]["m"] == 3.0
    assert "thresholds" in build
    for name in build["files"]:
        with open(tmp_path / "o" / name, newline="") as fh:
            assert len(list(csv.reader(fh))) >= 2


def test_output_directory_precedence(tmp_path, monkeypatch):
    path = _write(tmp_path, dict(SQUARE_BUILD, output=str(tmp_path / "from-doc")))
    monkeypatch.setenv("SUPERDENSITY_OUT", str(tmp_path / "from-env"))
    assert scenario.run_scenario(path, ops={"lambda_distribution"}).out == tmp_path / "from-env"
    flag = scenario.run_scenario(path, out=str(tmp_path / "from-flag"), ops={"lambda_distribution"})
    assert flag.out == tmp_path / "from-flag"
    monkeypatch.delenv("SUPERDENSITY_OUT")
    doc_default = scenario.run_scenario(path, ops={"lambda_distribution"})
    assert doc_default.out == tmp_path / "from-doc" / "tiny-build"
    assert (doc_default.out / "summary.json").exists()


def test_subcommands_filter_operations(tmp_path, capsys):
    path = _write(tmp_path, SQUARE_BUILD)
    assert cli.main(["scatter", "build", path, "--out", str(tmp_path / "a")]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "build (scatter_build)" in out and "grid" not in out
    assert cli.main(["schwarz", "check", path, "--out", str(tmp_path / "b")]) == cli.EXIT_OK
    summary = json.loads((tmp_path / "b" / "summary.json").read_text())
    assert summary["tasks"] == []


def test_tolerance_flag_overrides_scenario(tmp_path):
    doc = copy.deepcopy(SQUARE_BUILD)
    doc["tolerances"] = {"tol": 1e-3}
    ctx = scenario.Context(doc, None, None, None)
    assert ctx.tol({"tol": 1e-5}, 0.5) == 1e-5
    assert ctx.tol({}, 0.5) == 1e-3
    assert scenario.Context(doc, 1e-2, None, None).tol({"tol": 1e-5}, 0.5) == 1e-2
    assert scenario.Context(SQUARE_BUILD, None, None, None).tol({}, 0.5) == 0.5


def test_jobs_give_the_same_report(tmp_path):
    path = _write(tmp_path, SQUARE_BUILD)
    a = scenario.run_scenario(path, out=str(tmp_path / "a"))
    b = scenario.run_scenario(path, out=str(tmp_path / "b"), jobs=2)
    assert a.summary["tasks"] == b.summary["tasks"]
    for name in a.summary["tasks"][1]["files"]:
        assert (a.out / name).read_bytes() == (b.out / name).read_bytes()


def test_counterexample_subcommand(tmp_path, capsys):
    assert cli.main(["schwarz", "counterexample", "--jmax", "3"]) == cli.EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "j,value,bound" and len(lines) == 4
    target = tmp_path / "ce" / "rows.csv"
    assert cli.main(["schwarz", "counterexample", "--jmax", "2", "--out", str(target)]) == cli.EXIT_OK
    assert target.read_text().count("\n") == 3
