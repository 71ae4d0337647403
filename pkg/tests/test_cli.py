"""CLI: config ingestion, CSV contract, exit codes, determinism."""

import numpy as np
import pytest

from qfeedback import cli
from qfeedback import atom_squash as at


def read_csv(path):
    header, rows = [], []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                header.append(line)
            else:
                rows.append(line.split(","))
    return header, rows[0], rows[1:]


class TestSpectraCsv:
    def test_column_contract_and_header(self, tmp_path):
        out = tmp_path / "s.csv"
        assert cli.run(["spectra", "--output", str(out)]) == 0
        header, cols, rows = read_csv(out)
        assert cols == ["omega", "s2x", "s3x", "s2y", "s3y"]
        assert header[0].startswith("# qfeedback ")
        assert "# subcommand: spectra" in header
        assert any(h.startswith("# seed:") for h in header)
        assert len(rows) == 512

    def test_effective_config_echo(self, tmp_path):
        out = tmp_path / "s.csv"
        cli.run(["spectra", "--g", "-2.5", "--output", str(out)])
        echo = (tmp_path / "s.csv.config").read_text()
        assert echo.startswith("[spectra]\n")
        assert "g = -2.5  ; flag" in echo
        assert "gamma = 1  ; default" in echo

    def test_seventeen_digit_roundtrip(self, tmp_path):
        out = tmp_path / "a.csv"
        assert cli.run(["atom", "--lambda-opt", "--output", str(out)]) == 0
        _, _, rows = read_csv(out)
        table = {name: float(val) for name, val in rows}
        p = at.AtomLoopParams.from_lambda(0.8, 0.95, -0.8 * 0.95)
        gx, gy, gz, c = at.decay_rates(p)
        assert table["gamma_x"] == gx          # exact bit-level round trip
        assert table["gamma_z"] == gz
        assert abs(table["gamma_x"] - 0.12) < 1e-12


class TestConfigFile:
    def write_ini(self, tmp_path, body):
        path = tmp_path / "cfg.ini"
        path.write_text(body)
        return str(path)

    def test_flag_wins_over_file(self, tmp_path):
        ini = self.write_ini(tmp_path, "[spectra]\ng = -3.0\ngamma = 2.0\n")
        out = tmp_path / "s.csv"
        assert cli.run(["spectra", "--config", ini, "--g", "-1.5",
                        "--output", str(out)]) == 0
        echo = (tmp_path / "s.csv.config").read_text()
        assert "g = -1.5  ; flag" in echo
        assert "gamma = 2  ; file" in echo
        assert "eta2 = 0.5  ; default" in echo

    def test_unknown_key_exits_2(self, tmp_path, capsys):
        ini = self.write_ini(tmp_path, "[spectra]\nbogus = 1\n")
        assert cli.run(["spectra", "--config", ini,
                        "--output", str(tmp_path / "s.csv")]) == 2
        assert "bogus" in capsys.readouterr().err

    def test_parse_error_exits_2(self, tmp_path):
        ini = self.write_ini(tmp_path, "not an ini line\n")
        assert cli.run(["spectra", "--config", ini,
                        "--output", str(tmp_path / "s.csv")]) == 2

    def test_missing_section_uses_defaults(self, tmp_path):
        ini = self.write_ini(tmp_path, "[other]\ng = 9\n")
        out = tmp_path / "s.csv"
        assert cli.run(["spectra", "--config", ini, "--output", str(out)]) == 0
        assert "g = -4  ; default" in (tmp_path / "s.csv.config").read_text()


class TestExitCodes:
    def test_invalid_parameters(self, tmp_path, capsys):
        code = cli.run(["spectra", "--eta2", "1.5",
                        "--output", str(tmp_path / "s.csv")])
        assert code == 2
        assert "invalid parameters" in capsys.readouterr().err

    def test_numerical_failure(self, tmp_path, capsys):
        code = cli.run(["spectra", "--g", "-10", "--T", "1.0",
                        "--output", str(tmp_path / "s.csv")])
        assert code == 3
        assert "numerical failure" in capsys.readouterr().err

    def test_atom_invalid_lambda(self, tmp_path):
        assert cli.run(["atom", "--lam", "-0.9",
                        "--output", str(tmp_path / "a.csv")]) == 2


class TestOutdirEnv:
    def test_env_var_controls_default_path(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.OUTDIR_ENV, str(tmp_path))
        assert cli.run(["stability"]) == 0
        assert (tmp_path / "stability.csv").exists()
        assert (tmp_path / "stability.csv.config").exists()


class TestTrajectorySubcommand:
    def test_deterministic_reruns_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        args = ["trajectory", "--preset", "atom-homodyne", "--n-traj", "8",
                "--steps", "100", "--snapshot-every", "50"]
        assert cli.run(args + ["--output", str(a)]) == 0
        assert cli.run(args + ["--output", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_worker_count_leaves_csv_identical(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        base = ["trajectory", "--preset", "atom-feedback", "--n-traj", "12",
                "--steps", "100", "--snapshot-every", "50"]
        assert cli.run(base + ["--workers", "1", "--output", str(a)]) == 0
        assert cli.run(base + ["--workers", "4", "--output", str(b)]) == 0
        ra = [ln for ln in a.read_text().splitlines()
              if not ln.startswith("#") and not ln.startswith("workers")]
        rb = [ln for ln in b.read_text().splitlines()
              if not ln.startswith("#") and not ln.startswith("workers")]
        assert ra == rb

    def test_counting_preset_runs(self, tmp_path):
        out = tmp_path / "t.csv"
        assert cli.run(["trajectory", "--preset", "damped-cavity",
                        "--n-traj", "16", "--steps", "200",
                        "--snapshot-every", "100", "--output", str(out)]) == 0
        _, cols, rows = read_csv(out)
        assert cols == ["time", "mean_n", "xbar_variance"]
        assert len(rows) == 2

    def test_unknown_preset(self, tmp_path):
        assert cli.run(["trajectory", "--preset", "nope",
                        "--output", str(tmp_path / "t.csv")]) == 2


class TestOtherSubcommands:
    def test_semiclassical_runs(self, tmp_path):
        out = tmp_path / "sc.csv"
        assert cli.run(["semiclassical", "--duration", "200", "--segments",
                        "16", "--output", str(out)]) == 0
        _, cols, rows = read_csv(out)
        assert cols[:3] == ["omega", "psd2", "psd2_err"]
        vals = np.array([[float(x) for x in r] for r in rows])
        assert np.all(np.isfinite(vals))

    def test_qnd_runs(self, tmp_path):
        out = tmp_path / "q.csv"
        assert cli.run(["qnd", "--g", "-0.5", "--output", str(out)]) == 0
        _, cols, _ = read_csv(out)
        assert cols == ["omega", "s_out_x", "s_out_y", "large_gain_floor"]

    def test_intracavity_sweep_and_series(self, tmp_path):
        for mode, first_col in (("sweep", "lam"), ("series", "t")):
            out = tmp_path / f"{mode}.csv"
            assert cli.run(["intracavity", "--mode", mode,
                            "--output", str(out)]) == 0
            _, cols, _ = read_csv(out)
            assert cols[0] == first_col

    def test_atom_compare(self, tmp_path):
        out = tmp_path / "a.csv"
        assert cli.run(["atom", "--lambda-opt", "--compare-l", "0.05",
                        "--output", str(out)]) == 0
        _, _, rows = read_csv(out)
        table = {name: float(val) for name, val in rows}
        assert abs(table["free_gamma_y"] - 8.1) < 1e-12
        assert abs(table["gamma_x"] - table["free_gamma_x"]) < 1e-12
