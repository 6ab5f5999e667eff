import subprocess
import sys

import numpy as np
import pytest

from supercooled.cadlag import StepFunction, csv_body, read_columns
from supercooled.cli import EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_RESOURCE, main
from supercooled.config import KEYS, ConfigError, RunConfig, parse_lines

SMALL = ["--T", "1", "--n", "100", "--dx", "0.02"]


def run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path)])


def test_solve_without_feedback(tmp_path, capsys):
    assert run(tmp_path, "solve", "--alpha", "0", "--law", "point:1", *SMALL) == 0
    assert "converged after 1 iterations" in capsys.readouterr().out
    text = (tmp_path / "lambda.csv").read_text()
    assert text.startswith("# supercooled ")
    assert "# model.alpha = 0.0\n" in text and "# grid.n = 100\n" in text
    assert StepFunction.from_csv(tmp_path / "lambda.csv").values[-1] == pytest.approx(0.3173, abs=0.01)


def test_solve_records_iterates(tmp_path):
    assert run(tmp_path, "solve", "--alpha", "1", "--law", "point:0.4", *SMALL,
               "--set", "solve.record_iterates=true") == 0
    cols = read_columns(tmp_path / "iterates.csv")
    names = [c for c in cols if c.startswith("iter_")]
    last = cols[names[-1]]
    assert np.array_equal(last, StepFunction.from_csv(tmp_path / "lambda.csv").values)


def test_simulate_writes_loss_and_defaults(tmp_path, capsys):
    assert run(tmp_path, "simulate", "--N", "30", "--law", "uniform:0,1", "--seed", "4", *SMALL) == 0
    assert "wrote" in capsys.readouterr().out
    defaults = read_columns(tmp_path / "defaults.csv")
    assert defaults["particle_id"].size == 30


def test_stefan_writes_field_and_front(tmp_path):
    assert run(tmp_path, "stefan", "--alpha", "1", "--law", "point:0.4", *SMALL,
               "--set", "stefan.snapshots=10", "--set", "stefan.x_stride=2") == 0
    front = read_columns(tmp_path / "front.csv")
    assert np.all(np.diff(front["front"]) >= 0)
    field = read_columns(tmp_path / "field.csv")
    assert np.unique(field["t"]).size == 11
    assert np.all(field["u"] <= 0)


def test_stefan_needs_finite_differences(tmp_path, capsys):
    assert run(tmp_path, "stefan", "--backend", "mc") == EXIT_CONFIG
    assert "finite-difference" in capsys.readouterr().err


def test_converge_writes_report(tmp_path):
    assert run(tmp_path, "converge", "--alpha", "1", "--law", "exp:1", *SMALL,
               "--set", "experiment.Ns=10,40", "--set", "experiment.reps=2") == 0
    summary = read_columns(tmp_path / "summary.csv")
    assert summary["N"].tolist() == [10, 40]
    assert (tmp_path / "runs" / "N40_rep1.csv").exists()


def test_refine_table_and_resource_guard(tmp_path):
    assert run(tmp_path, "refine", "--alpha", "0.5", "--law", "uniform:0.5,1.5", *SMALL) == 0
    assert read_columns(tmp_path / "refine.csv")["dt"].size == 2
    assert run(tmp_path, "refine", *SMALL, "--set", "refine.max_cells=100") == EXIT_RESOURCE


@pytest.mark.parametrize("args,needle", [
    (["--alpha", "-1"], "model.alpha"),
    (["--set", "nonsense.key=1"], "unknown key"),
    (["--set", "grid.n"], "KEY=VALUE"),
    (["--n", "2.5"], "not an integer"),
    (["--law", "gamma:2"], "law"),
    (["--set", "experiment.Ns=100,10"], "strictly increasing"),
    (["--set", "backend.fd.x_max=0.5"], "x_max"),
])
def test_configuration_errors_exit_2(tmp_path, capsys, args, needle):
    assert run(tmp_path, "solve", *args) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "configuration error" in err and needle in err
    assert not (tmp_path / "lambda.csv").exists()


def test_config_file_and_override_precedence(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("# a comment\nmodel.alpha = 2.5\ngrid.n = 50  # trailing\n")
    cfg = RunConfig.from_sources(cfg_file, {"grid.n": "60"})
    assert cfg["model.alpha"] == 2.5 and cfg["grid.n"] == 60
    assert "model.alpha = 2.5" in cfg.header("solve").splitlines()


def test_config_file_errors_name_the_line():
    with pytest.raises(ConfigError, match=":2:"):
        parse_lines("model.alpha = 1\nnot a pair\n", "f.cfg")
    with pytest.raises(ConfigError, match="unknown key"):
        parse_lines("model.alpa = 1\n")


def test_header_lists_every_key():
    head = RunConfig.from_sources().header("verify").splitlines()
    assert len(head) == len(KEYS) + 1


def test_keys_command(capsys):
    assert main(["keys"]) == 0
    out = capsys.readouterr().out
    assert all(k in out for k in KEYS)


def test_verify_passes_and_is_worker_independent(tmp_path, capsys):
    one, four = tmp_path / "one", tmp_path / "four"
    assert main(["verify", "--set", "verify.seeds=2", "--workers", "1", "--out", str(one)]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 10
    assert main(["verify", "--set", "verify.seeds=2", "--workers", "4", "--out", str(four)]) == 0
    assert csv_body((one / "verify.csv").read_text()) == csv_body((four / "verify.csv").read_text())


def test_solve_mc_is_worker_independent(tmp_path):
    args = ["solve", "--backend", "mc", "--paths", "4000", "--alpha", "1", "--law", "point:0.4",
            "--T", "1", "--n", "100"]
    main([*args, "--workers", "1", "--out", str(tmp_path / "a")])
    main([*args, "--workers", "4", "--out", str(tmp_path / "b")])
    a = (tmp_path / "a" / "lambda.csv").read_text()
    b = (tmp_path / "b" / "lambda.csv").read_text()
    assert csv_body(a) == csv_body(b) and a != b  # headers record the worker count


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "supercooled", "keys"], capture_output=True, text=True)
    assert proc.returncode == 0 and "model.alpha" in proc.stdout


def test_failed_check_exit_code_is_distinct():
    assert len({0, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_RESOURCE}) == 4
