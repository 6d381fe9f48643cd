"""CLI tests: output formats, exit codes, config handling, reproducibility."""

from pathlib import Path

import pytest

from sampagg.cli import EXIT_BOT, EXIT_OK, EXIT_USAGE, main

REPO_ROOT = Path(__file__).resolve().parent.parent

BASE_CONFIG = """
[recipe]
task_id = cli-test
randomizer = rappor
alphabet_size = 20
eps0 = 4.0
batch_threshold = 10
sampling_rate = 0.5
window = 60

[population]
size = 100
distribution = uniform

[run]
seed = 7
"""


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestAcct:
    def test_amplify_line(self, capsys):
        code, out, _ = run_cli(
            capsys, "acct", "amplify", "--eps", "0.61", "--delta", "1e-10", "--gamma", "0.02"
        )
        assert code == EXIT_OK
        eps, delta = out.split()
        assert float(eps) == pytest.approx(0.016669, abs=1e-5)
        assert float(delta) == pytest.approx(2e-12, rel=1e-6)

    def test_gaussian_line(self, capsys):
        code, out, _ = run_cli(capsys, "acct", "gaussian", "--sigma", "7", "--delta", "1e-8")
        assert code == EXIT_OK
        assert out.startswith("0.872")

    def test_donation_line(self, capsys):
        code, out, _ = run_cli(
            capsys, "acct", "donation", "--eps", "1", "--delta", "1e-6", "--m", "100"
        )
        assert code == EXIT_OK
        eps, delta = out.split()
        assert float(eps) == pytest.approx(0.9101, abs=1e-3)
        assert float(delta) == pytest.approx(1.01e-4, rel=1e-9)

    def test_subsampled_and_compose(self, capsys):
        code, out, _ = run_cli(
            capsys, "acct", "subsampled", "--sigma", "5.1", "--q", "0.02", "--delta", "1e-8"
        )
        assert code == EXIT_OK and 0.030 <= float(out) <= 0.040
        code, out, _ = run_cli(
            capsys, "acct", "compose", "--sigma", "5.1", "--steps", "50", "--delta", "1e-8"
        )
        assert code == EXIT_OK and 7.0 <= float(out) <= 10.0

    def test_shuffle(self, capsys):
        code, out, _ = run_cli(
            capsys, "acct", "shuffle", "--eps0", "4.0", "--batch", "10000", "--delta", "1e-10"
        )
        assert code == EXIT_OK
        assert float(out) == pytest.approx(1.1087, abs=2e-3)

    def test_precision_flag(self, capsys):
        _, out6, _ = run_cli(capsys, "acct", "gaussian", "--sigma", "7", "--delta", "1e-8")
        _, out12, _ = run_cli(
            capsys, "acct", "gaussian", "--sigma", "7", "--delta", "1e-8", "--precision", "12"
        )
        assert len(out12.strip()) > len(out6.strip())
        assert float(out12) == pytest.approx(float(out6), abs=1e-6)

    def test_invalid_flag_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["acct", "gaussian", "--sigma", "7"])  # missing --delta
        assert exc.value.code == 2

    def test_invalid_value_exits_2(self, capsys):
        code, _, err = run_cli(capsys, "acct", "gaussian", "--sigma", "7", "--delta", "2.0")
        assert code == EXIT_USAGE
        assert "error" in err


class TestSim:
    def write_config(self, tmp_path, text=BASE_CONFIG):
        path = tmp_path / "run.ini"
        path.write_text(text)
        return str(path)

    def test_deterministic_summary(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path)
        code1, out1, _ = run_cli(capsys, "sim", "run", "--config", cfg)
        code2, out2, _ = run_cli(capsys, "sim", "run", "--config", cfg)
        assert code1 == code2 == EXIT_OK
        assert out1 == out2
        parts = out1.split()
        assert len(parts) == 5
        assert int(parts[1]) >= 10  # k above threshold

    def test_zero_rate_exits_3(self, tmp_path, capsys):
        cfg = self.write_config(
            tmp_path, BASE_CONFIG.replace("sampling_rate = 0.5", "sampling_rate = 0.0")
        )
        code, out, _ = run_cli(capsys, "sim", "run", "--config", cfg)
        assert code == EXIT_BOT
        assert out.split()[0] == "bot"

    def test_replay_count_in_summary(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path)
        code, out, _ = run_cli(capsys, "sim", "run", "--config", cfg, "--replays", "5")
        assert code == EXIT_OK
        assert out.split()[3] == "5"

    def test_transcript_written(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path)
        log = tmp_path / "t.log"
        run_cli(capsys, "sim", "run", "--config", cfg, "--transcript", str(log))
        lines = log.read_text().strip().split("\n")
        assert all(len(line.split(" ")) == 4 for line in lines)
        assert any(" release " in line for line in lines)

    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path, BASE_CONFIG + "\nbogus_key = 1\n")
        code, _, err = run_cli(capsys, "sim", "run", "--config", cfg)
        assert code == EXIT_USAGE
        assert "bogus_key" in err

    def test_unknown_section_rejected(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path, BASE_CONFIG + "\n[mystery]\nx = 1\n")
        code, _, err = run_cli(capsys, "sim", "run", "--config", cfg)
        assert code == EXIT_USAGE
        assert "mystery" in err

    def test_shipped_default_config_runs(self, capsys):
        cfg = str(REPO_ROOT / "configs" / "default.ini")
        code, out, _ = run_cli(capsys, "sim", "run", "--config", cfg)
        assert code == EXIT_OK
        assert len(out.split()) == 5

    def test_gaussian_recipe_config(self, tmp_path, capsys):
        text = """
[recipe]
randomizer = gaussian_vector
dim = 8
sigma = 0.5
batch = 20
batch_threshold = 20
sampling_rate = 1.0

[population]
size = 40
norm = 0.9
"""
        cfg = self.write_config(tmp_path, text)
        code, out, _ = run_cli(capsys, "sim", "run", "--config", cfg)
        assert code == EXIT_OK


class TestExp:
    def test_csv_header_and_filter(self, tmp_path, capsys):
        out_path = tmp_path / "h.csv"
        code, _, _ = run_cli(
            capsys, "exp", "histogram", "--out", str(out_path),
            "--k", "100", "--t", "1", "--m", "1000", "--n", "100000",
            "--methods", "nonpriv", "--trials", "0",
        )
        assert code == EXIT_OK
        lines = out_path.read_text().strip().split("\n")
        assert lines[0] == (
            "method,K,N,M,T,gamma,eps_total,delta_total,sigma,"
            "analytic_mse,mc_mse,mc_stderr,trials,seed"
        )
        assert len(lines) == 2
        assert lines[1].startswith("nonpriv,")

    def test_empty_methods(self, tmp_path, capsys):
        out_path = tmp_path / "e.csv"
        code, _, _ = run_cli(
            capsys, "exp", "histogram", "--out", str(out_path),
            "--k", "100", "--t", "1", "--m", "1000", "--n", "100000", "--methods",
        )
        assert code == EXIT_OK
        assert len(out_path.read_text().strip().split("\n")) == 1

    def test_seed_reproducibility(self, tmp_path, capsys):
        args = [
            "exp", "needles", "--k", "100", "--t", "1", "--m", "1000",
            "--n", "100000", "--gamma", "0.05", "--trials", "40", "--seed", "1",
        ]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run_cli(capsys, *args, "--out", str(a))
        run_cli(capsys, *args, "--out", str(b))
        assert a.read_bytes() == b.read_bytes()

    def test_unknown_method_exits_2(self, tmp_path, capsys):
        code, _, err = run_cli(
            capsys, "exp", "histogram", "--out", str(tmp_path / "x.csv"),
            "--k", "100", "--t", "1", "--m", "1000", "--n", "100000",
            "--methods", "sneaky",
        )
        assert code == EXIT_USAGE
        assert "sneaky" in err
