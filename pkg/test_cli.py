"""
Command-line surface: subcommands and exit codes.
"""
import dataclasses

from app.api.cli import EXIT_FAILED, EXIT_PASSED, EXIT_USAGE, cli_main
from app.services.mesh_service import MeshService

COUNTEREXAMPLE = """[experiment]
id = counterexample

[mesh]
generator = circle

[mesh.params]
n = 48
"""

FAILING = """[experiment]
id = theorem2

[mesh]
generator = circle

[mesh.params]
n = 48

[field]
kind = winding

[potential]
kind = inverse-design
"""


def test_gen_mesh_then_validate(tmp_path):
    path = tmp_path / "circle.txt"
    assert cli_main(["gen-mesh", "circle", "64", "1.0", "--out", str(path), "--quiet"]) == EXIT_PASSED
    assert path.read_text().startswith("# mesh circle\n")
    assert cli_main(["validate-mesh", str(path)]) == EXIT_PASSED


def test_gen_mesh_to_stdout(capsys):
    assert cli_main(["gen-mesh", "interval", "5"]) == EXIT_PASSED
    out = capsys.readouterr().out
    assert "1 5 4 2 0" in out


def test_gen_mesh_rejects_extra_parameters():
    assert cli_main(["gen-mesh", "circle", "64", "1.0", "3.0"]) == EXIT_USAGE


def test_usage_errors():
    assert cli_main(["frobnicate"]) == EXIT_USAGE
    assert cli_main(["run"]) == EXIT_USAGE
    assert cli_main(["run", "--config", "x.cfg", "--colour"]) == EXIT_USAGE


def test_missing_config_file(tmp_path):
    assert cli_main(["run", "--config", str(tmp_path / "absent.cfg")]) == EXIT_USAGE


def test_malformed_config_file(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text(COUNTEREXAMPLE + "\n[mesh]\nunknown = 1\n")
    assert cli_main(["run", "--config", str(path)]) == EXIT_USAGE


def test_run_and_show_report(tmp_path, capsys):
    config = tmp_path / "counterexample.cfg"
    config.write_text(COUNTEREXAMPLE)
    out = tmp_path / "out"
    assert cli_main(["run", "--config", str(config), "--out", str(out), "--seed", "11", "--quiet"]) == EXIT_PASSED
    assert "counterexample: passed" in capsys.readouterr().out
    assert cli_main(["show-report", str(out / "report.json")]) == EXIT_PASSED
    shown = capsys.readouterr().out
    assert "(seed 11)" in shown
    assert "max_abs_v_error" in shown


def test_failed_assertion_exits_with_one(tmp_path):
    config = tmp_path / "winding.cfg"
    config.write_text(FAILING)
    out = tmp_path / "out"
    assert cli_main(["run", "--config", str(config), "--out", str(out)]) == EXIT_FAILED
    assert cli_main(["show-report", str(out / "report.json")]) == EXIT_FAILED


def test_invalid_mesh_file_exits_with_one(tmp_path, capsys):
    meshes = MeshService()
    disk = meshes.gen_disk(2)
    path = tmp_path / "flipped.txt"
    meshes.save(dataclasses.replace(disk, cells=disk.cells[:, [0, 2, 1]]), str(path))
    assert cli_main(["validate-mesh", str(path)]) == EXIT_FAILED
    assert "clockwise" in capsys.readouterr().out


def test_show_report_rejects_other_json(tmp_path):
    path = tmp_path / "other.json"
    path.write_text('{"hello": "world"}')
    assert cli_main(["show-report", str(path)]) == EXIT_USAGE
