import numpy as np
import pytest

from transportlab.cli import main
from transportlab.config import DEFAULTS, parse_experiment_config, parse_experiment_text
from transportlab.errors import BadValue, GapClosed, IoError, ParseError, UnknownKey
from transportlab.experiments import (ReportDocument, Table, resolve_model, run_experiment,
                                      write_report)
from transportlab.model import builtin_spec, dump_model_file


def test_minimal_config_defaults():
    cfg = parse_experiment_text("model: haldane\nkind: transport\n")
    assert cfg.N == 48
    assert cfg.mu is None
    assert resolve_model(cfg).mu == 0.0
    assert cfg.L_list == DEFAULTS.L_list
    assert cfg.profiles == ("poly5", "erf")


def test_empty_config_is_all_defaults():
    assert parse_experiment_text("") == DEFAULTS


@pytest.mark.parametrize("L", [13, 12])
def test_odd_and_even_sample_sizes_accepted(L):
    assert parse_experiment_text(f"L_list: [{L}]\n").L_list == (L,)


def test_unknown_key_reports_line():
    with pytest.raises(UnknownKey) as info:
        parse_experiment_text("model: haldane\nsigma_xy: 1\n")
    assert info.value.line == 2
    assert info.value.key == "sigma_xy"


@pytest.mark.parametrize("text,key", [
    ("N: -4\n", "N"),
    ("N: 4.5\n", "N"),
    ("L_list: [2]\n", "L_list"),
    ("eps_list: [0.1, 0]\n", "eps_list"),
    ("profiles: [tanh]\n", "profiles"),
    ("positions: orbital\n", "positions"),
    ("model: graphene\n", "model"),
    ("kind: plot\n", "kind"),
    ("origin: [1, 2, 3]\n", "origin"),
])
def test_bad_values(text, key):
    with pytest.raises(BadValue) as info:
        parse_experiment_text("seed: 1\n" + text)
    assert info.value.key == key
    assert info.value.line == 2


def test_invalid_yaml_reports_line():
    with pytest.raises(ParseError) as info:
        parse_experiment_text("N: 4\nL_list: [1, 2\n")
    assert info.value.line is not None


def test_top_level_must_be_mapping():
    with pytest.raises(ParseError):
        parse_experiment_text("- 1\n- 2\n")


def test_model_file_relative_to_config(tmp_path):
    dump_model_file(builtin_spec("haldane_trivial"), tmp_path / "m.yaml")
    (tmp_path / "c.yaml").write_text("model_file: m.yaml\nN: 12\n")
    cfg = parse_experiment_config(tmp_path / "c.yaml")
    assert resolve_model(cfg).name == "haldane_trivial"


def test_models_list(capsys):
    assert main(["models", "list"]) == 0
    out = capsys.readouterr().out
    assert "haldane:" in out and "kane_mele_rashba:" in out


def test_transport_run_writes_report(tmp_path, capsys):
    config = "kind: transport\nmodel: haldane\nN: 24\n"
    (tmp_path / "c.yaml").write_text(config)
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["run", str(tmp_path / "c.yaml"), "--out", str(out)]) == 0
    assert "PASS haldane: Hall conductivity" in capsys.readouterr().out
    report = (outs[0] / "report.txt").read_text()
    assert config in report
    assert "overall: PASS" in report
    for name in ("transport.csv", "verdicts.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_flag_overrides(tmp_path):
    (tmp_path / "c.yaml").write_text("kind: neass_residual\nmodel: haldane\n")
    assert main(["run", str(tmp_path / "c.yaml"), "--N", "16", "--eps", "0.1,0.01",
                 "--out", str(tmp_path / "o")]) == 0
    lines = (tmp_path / "o" / "residual.csv").read_text().splitlines()
    assert lines[0] == "model,N,eps,sup_residual,fd_error_estimate"
    assert [ln.split(",")[1:3] for ln in lines[1:]] == [["16", "0.1"], ["16", "0.01"]]


def test_cli_reports_errors(tmp_path, capsys):
    (tmp_path / "c.yaml").write_text("kind: transport\nmodel: square\n")
    assert main(["run", str(tmp_path / "c.yaml"), "--out", str(tmp_path / "o")]) == 2
    assert "transport on square" in capsys.readouterr().err


def test_torque_scan_has_torque_verdicts():
    cfg = parse_experiment_text("kind: torque_scan\nmodel: kane_mele_rashba\nN: 24\n")
    doc = run_experiment(cfg)
    names = [v.name for v in doc.verdicts]
    assert any("tau(i[H,S_z] Pi_1)" in n for n in names)
    assert doc.passed
    assert len(doc.tables["torque"].rows) == len(cfg.eps_list)


def test_errors_carry_experiment_context():
    cfg = parse_experiment_text("kind: transport\nmodel: haldane\nmu: 2.0\nN: 16\n")
    with pytest.raises(GapClosed, match=r"\[transport on haldane\]"):
        run_experiment(cfg)


def test_write_report_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    doc = ReportDocument("", "transport", "m")
    with pytest.raises(IoError):
        write_report(doc, blocker / "sub")


def test_report_formats_complex_free_rows(tmp_path):
    doc = ReportDocument("x: 1\n", "transport", "m")
    doc.tables["t"] = Table("t", ("a", "b", "flag"), [(1, np.float64(0.1), True)])
    write_report(doc, tmp_path)
    assert (tmp_path / "t.csv").read_text() == "a,b,flag\n1,0.1,1\n"
