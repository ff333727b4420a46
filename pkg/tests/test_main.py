"""Tests for the command line entry point and its exit codes"""

from pathlib import Path

from main import EXIT_OK, EXIT_PRECISION, EXIT_VALIDATION, main


def test_successful_run_prints_report_paths(tmp_path, capsys):
    code = main(["cf-info", "--out", str(tmp_path), "--seed", "4"])

    printed = capsys.readouterr().out.split()
    assert code == EXIT_OK
    assert len(printed) == 1
    assert Path(printed[0]).parent == tmp_path


def test_unknown_subcommand_is_a_validation_error(tmp_path):
    assert main(["cf-infoo", "--out", str(tmp_path)]) == EXIT_VALIDATION


def test_bad_precision_flag_is_a_validation_error(tmp_path):
    assert main(["cf-info", "--out", str(tmp_path), "--precision", "32"]) == EXIT_VALIDATION


def test_unknown_config_key_is_a_validation_error(tmp_path):
    config = tmp_path / "bad.cfg"
    config.write_text("alpah = golden\n", encoding="utf-8")
    assert main(["cf-info", "--config", str(config), "--out", str(tmp_path)]) == EXIT_VALIDATION


def test_insufficient_precision_exits_with_precision_code(tmp_path):
    config = tmp_path / "huge.cfg"
    config.write_text("alpha = 1180591620717411303424,1180591620717411303424\n", encoding="utf-8")
    code = main(["cf-info", "--config", str(config), "--out", str(tmp_path), "--precision", "64"])
    assert code == EXIT_PRECISION
