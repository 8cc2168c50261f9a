"""CLI behavior: parsing, config files, exit codes, small end-to-end runs."""

import json
import subprocess
import sys

import numpy as np
import pytest

from manifoldmc import cli, io
from manifoldmc.experiments import make_low_rank_dataset

FAST = ["--samples", "10", "--leapfrog", "3", "--accept-low", "0",
        "--accept-high", "1", "--step-size", "0.03"]


def write_continuous(path, n=12, d=4, k=1, seed=0):
    data, info = make_low_rank_dataset(n, d, k, 0.1, seed=seed)
    io.write_dataset(path, data)
    return data, info


class TestParsing:
    def test_help_exits_zero(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        for command in ("gen-bits", "fit", "reconstruct", "loo", "impute",
                        "cv", "diagnose"):
            assert command in out

    def test_no_command_is_usage_error(self, capsys):
        assert cli.main([]) == 1
        assert "error" in capsys.readouterr().err

    def test_unknown_flag_is_usage_error(self, capsys):
        assert cli.main(["gen-bits", "--wat", "1", "--out", "x"]) == 1

    def test_missing_required_flag(self, capsys):
        assert cli.main(["fit", "--model", "ppca", "--out", "x"]) == 1

    def test_window_flags_must_pair(self, tmp_path, capsys):
        rc = cli.main(["diagnose", "--chain", "c.csv", "--window-start", "2",
                       "--out", str(tmp_path)])
        assert rc == 1
        assert "go together" in capsys.readouterr().err

    def test_cv_needs_data_or_replications(self, tmp_path, capsys):
        assert cli.main(["cv", "--out", str(tmp_path)]) == 1
        assert "--data" in capsys.readouterr().err

    def test_bad_count_list(self, tmp_path, capsys):
        write_continuous(tmp_path / "d.csv")
        io.write_mean_covariance(tmp_path / "b.csv", np.zeros(4), np.eye(4))
        rc = cli.main(["loo", "--data", str(tmp_path / "d.csv"),
                       "--baseline", str(tmp_path / "b.csv"),
                       "--counts", "1,a", "--out", str(tmp_path / "o")])
        assert rc == 1

    def test_missing_data_file(self, tmp_path, capsys):
        rc = cli.main(["fit", "--data", str(tmp_path / "absent.csv"),
                       "--model", "ppca", "--out", str(tmp_path / "o")])
        assert rc == 1


class TestConfigFile:
    def test_defaults_applied_and_flags_override(self, tmp_path, capsys):
        write_continuous(tmp_path / "d.csv")
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# sampler\nsamples = 12\nleapfrog=3\n"
                       "accept-low=0\naccept-high=1\nk=1\n")
        out = tmp_path / "o1"
        rc = cli.main(["--config", str(cfg), "fit", "--data",
                       str(tmp_path / "d.csv"), "--model", "ppca",
                       "--out", str(out)])
        assert rc == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["hmc"]["num_samples"] == 12
        assert manifest["k"] == 1

        out2 = tmp_path / "o2"
        rc = cli.main([f"--config={cfg}", "fit", "--data",
                       str(tmp_path / "d.csv"), "--model", "ppca",
                       "--samples", "6", "--out", str(out2)])
        assert rc == 0
        manifest = json.loads((out2 / "manifest.json").read_text())
        assert manifest["hmc"]["num_samples"] == 6

    def test_config_can_supply_required_options(self, tmp_path):
        write_continuous(tmp_path / "d.csv")
        cfg = tmp_path / "run.cfg"
        cfg.write_text(f"data={tmp_path / 'd.csv'}\nmodel=ppca\nk=1\n"
                       f"samples=8\nleapfrog=3\naccept-low=0\naccept-high=1\n"
                       f"out={tmp_path / 'o'}\n")
        assert cli.main(["--config", str(cfg), "fit"]) == 0
        assert (tmp_path / "o" / "diagnostics.csv").exists()

    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("bogus=1\n")
        rc = cli.main(["--config", str(cfg), "gen-bits", "--out",
                       str(tmp_path / "o")])
        assert rc == 1
        assert "bogus" in capsys.readouterr().err

    def test_malformed_line_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("samples\n")
        assert cli.main(["--config", str(cfg), "gen-bits",
                         "--out", str(tmp_path / "o")]) == 1
        assert "key=value" in capsys.readouterr().err

    def test_config_without_subcommand(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("seed=1\n")
        assert cli.main(["--config", str(cfg)]) == 1

    def test_config_path_missing(self, tmp_path, capsys):
        assert cli.main(["--config", str(tmp_path / "nope.cfg"),
                         "gen-bits", "--out", str(tmp_path / "o")]) == 1


class TestEndToEnd:
    def test_gen_bits_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert cli.main(["gen-bits", "--seed", "4", "--out", str(a)]) == 0
        assert cli.main(["gen-bits", "--seed", "4", "--out", str(b)]) == 0
        for name in ("truth.csv", "data.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_fit_then_diagnose(self, tmp_path, capsys):
        write_continuous(tmp_path / "d.csv")
        fit_out = tmp_path / "fit"
        rc = cli.main(["fit", "--data", str(tmp_path / "d.csv"),
                       "--model", "ppca", "--k", "1",
                       "--record", "U,lam", *FAST, "--out", str(fit_out)])
        assert rc == 0
        assert (fit_out / "chain_U.csv").exists()
        assert (fit_out / "chain_lam.csv").exists()
        assert not (fit_out / "chain_mu.csv").exists()  # not recorded
        capsys.readouterr()

        diag_out = tmp_path / "diag"
        rc = cli.main(["diagnose", "--chain", str(fit_out / "chain_U.csv"),
                       "--diagnostics", str(fit_out / "diagnostics.csv"),
                       "--out", str(diag_out)])
        assert rc == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["block"] == "U"
        assert summary["samples"] == 10
        assert "acceptance_rate" in summary
        assert (diag_out / "pf_trace.csv").exists()

    def test_reconstruct_tiny(self, tmp_path, capsys):
        rc = cli.main(["reconstruct", "--k", "2", "--samples", "8",
                       "--leapfrog", "3", "--accept-low", "0",
                       "--accept-high", "1", "--window-start", "2",
                       "--window-stop", "6", "--out", str(tmp_path)])
        assert rc == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["window"] == [2, 6]
        assert (tmp_path / "reconstruction.csv").exists()

    def test_impute_tiny(self, tmp_path, capsys):
        write_continuous(tmp_path / "d.csv", n=10, d=4, k=1, seed=3)
        rc = cli.main(["impute", "--data", str(tmp_path / "d.csv"),
                       "--k", "1", "--fractions", "0.2", "--trials", "1",
                       "--burn-in", "2", *FAST, "--out", str(tmp_path / "o")])
        assert rc == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["0.2"]["trials"] == 1

    def test_loo_singular_baseline_is_numerical_abort(self, tmp_path, capsys):
        write_continuous(tmp_path / "d.csv", n=6, d=4)
        io.write_mean_covariance(tmp_path / "b.csv", np.zeros(4),
                                 np.ones((4, 4)))
        rc = cli.main(["loo", "--data", str(tmp_path / "d.csv"),
                       "--baseline", str(tmp_path / "b.csv"), "--k", "1",
                       "--assignments", "1", "--counts", "1", "--burn-in", "2",
                       *FAST, "--out", str(tmp_path / "o")])
        assert rc == 2
        assert "numerical abort" in capsys.readouterr().err


def test_console_script_installed():
    proc = subprocess.run([sys.executable, "-m", "manifoldmc.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "gen-bits" in proc.stdout
