"""End-to-end tests for the nlkw command line"""

import json

import pytest

from nlkw_lab.adapters import cli
from nlkw_lab.repositories import config, log, path_store

SMALL_CONFIG = {
    "n_paths": 200,
    "n_steps": 8,
    "ladder": [4, 16],
    "ladder_paths": 200,
    "derivative_points": 10,
    "rho_sweep": [0.2, 0.8],
}


@pytest.fixture(autouse=True)
def isolated_environment(monkeypatch):
    # main() writes these variables; setting them first lets monkeypatch restore them.
    monkeypatch.setenv("NLKW_THREADS", "1")
    monkeypatch.setenv("NLKW_OUTPUT_DIR", "nlkw_output")
    monkeypatch.setenv("NLKW_ENABLE_FILE_LOGGING", "false")
    log.reset_logger()
    config.reset_settings()
    yield
    log.reset_logger()
    config.reset_settings()


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(SMALL_CONFIG), encoding="utf-8")
    return str(path)


def run(*argv):
    return cli.main(list(argv) + ["--quiet"])


class TestParseArgs:
    """Tests for argument parsing"""

    def test_common_flags(self):
        """Test that every subcommand takes the common flags"""
        args = cli.parse_args(["sweep-rho", "--seed", "7", "--paths", "500", "--family", "linear"])
        assert args.command == "sweep-rho"
        assert args.seed == 7
        assert args.paths == 500
        assert args.family == "linear"
        assert args.rho is None

    def test_requires_command(self):
        """Test that a subcommand is mandatory"""
        with pytest.raises(SystemExit):
            cli.parse_args([])

    def test_flags_override_config(self, config_file):
        """Test that flags take priority over the config file"""
        args = cli.parse_args(["optimize", "--config", config_file, "--rho", "0.9", "--steps", "16"])
        experiment = cli.build_experiment_config(args)
        assert experiment.rho == 0.9
        assert experiment.n_steps == 16
        assert experiment.n_paths == 200

    def test_reproduce_example_forces_payoff(self, tmp_path):
        """Test that reproduce-example always uses the example payoff"""
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"payoff": "terminal-w"}), encoding="utf-8")
        args = cli.parse_args(["reproduce-example", "--config", str(path)])
        assert cli.build_experiment_config(args).payoff == "example"


class TestCommands:
    """Tests for successful subcommands"""

    def test_reproduce_example(self, tmp_path, config_file, capsys):
        """Test the full pipeline and its output files"""
        out = tmp_path / "run"
        assert run("reproduce-example", "--config", config_file, "--out", str(out)) == 0
        assert "## Run: family `exp`, payoff `example`" in capsys.readouterr().out
        for name in ("summary.json", "nodes.csv", "ladder.csv", "ladder.svg"):
            assert (out / name).exists(), name
        summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
        assert summary["config"]["n_paths"] == 200
        assert summary["mode_counts"]["root"] + summary["mode_counts"]["stationary"] == 1600
        lines = (out / "nodes.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0] == "t,h,theta,mode,gap"
        assert len(lines) == 9
        assert (out / "ladder.csv").read_text(encoding="utf-8").splitlines()[0] == "N,rmse"

    def test_optimize_skips_ladder(self, tmp_path, config_file):
        """Test that optimize writes no representation ladder"""
        out = tmp_path / "opt"
        assert run("optimize", "--config", config_file, "--out", str(out)) == 0
        assert (out / "summary.json").exists()
        assert not (out / "ladder.csv").exists()

    def test_results_do_not_depend_on_threads(self, tmp_path, config_file, monkeypatch):
        """Test that the worker count leaves every output unchanged"""
        monkeypatch.setenv("NLKW_CHUNK_PATHS", "64")
        outputs = []
        for threads in ("1", "3"):
            out = tmp_path / f"threads-{threads}"
            code = run(
                "optimize", "--config", config_file, "--out", str(out), "--threads", threads
            )
            assert code == 0
            config.reset_settings()
            summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
            summary.pop("wall_clock_seconds")
            outputs.append((summary, (out / "nodes.csv").read_bytes()))
        assert outputs[0] == outputs[1]

    def test_sweep_rho(self, tmp_path, config_file):
        """Test sweep outputs"""
        out = tmp_path / "sweep"
        assert run("sweep-rho", "--config", config_file, "--out", str(out)) == 0
        report = json.loads((out / "sweep.json").read_text(encoding="utf-8"))
        assert [p["rho"] for p in report["points"]] == [0.2, 0.8]
        lines = (out / "residual.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0] == "rho,quantity,mean,stderr"
        assert len(lines) == 5
        assert 'id="series-floor"' in (out / "residual.svg").read_text(encoding="utf-8")

    def test_simulate(self, tmp_path, config_file):
        """Test the path dump and moments"""
        out = tmp_path / "sim"
        assert run("simulate", "--config", config_file, "--out", str(out)) == 0
        batch = path_store.load_batch(str(out / "paths.nlkw"))
        assert batch.w1.shape == (200, 9)
        moments = json.loads((out / "moments.json").read_text(encoding="utf-8"))
        assert "cov_w_T_w1_T" in moments["moments"]

    def test_verify_family(self, tmp_path, config_file):
        """Test family checks of the linear family"""
        out = tmp_path / "family"
        assert run("verify-family", "--config", config_file, "--out", str(out), "--family", "linear") == 0
        report = json.loads((out / "family.json").read_text(encoding="utf-8"))
        assert report["family"] == "linear"
        assert report["representation"]["converged"] is True
        assert report["holder"]["note"] == "derivative constant in x"

    def test_kw(self, tmp_path, config_file):
        """Test the KW report"""
        out = tmp_path / "kw"
        assert run("kw", "--config", config_file, "--out", str(out)) == 0
        report = json.loads((out / "kw.json").read_text(encoding="utf-8"))
        assert report["discrete_lambda_sq"] == pytest.approx(2.0 * 0.75 * (1 - 1 / 8) + 2.0 / 8)


class TestExitCodes:
    """Tests for failure exit codes and the stderr report"""

    def test_invalid_rho(self, tmp_path, capsys):
        """Test that an invalid flag value exits with 2 and names the key"""
        assert run("optimize", "--rho", "1.5", "--out", str(tmp_path)) == 2
        report = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert report["error"] == "ConfigError"
        assert report["key"] == "rho"
        assert report["stage"] is None

    def test_unknown_config_key(self, tmp_path, capsys):
        """Test that unknown config keys exit with 2"""
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"n_path": 100}), encoding="utf-8")
        assert run("kw", "--config", str(path)) == 2
        assert '"key": "n_path"' in capsys.readouterr().err

    def test_unwritable_output(self, config_file, capsys):
        """Test that writing to a system directory exits with 4"""
        assert run("simulate", "--config", config_file, "--out", "/etc/nlkw") == 4
        report = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert report["stage"] == "emit"
        assert report["error"] == "OutputError"
