import shutil
import subprocess

import numpy as np
import pytest

from source_traces import cli
from source_traces._io import read_csv_matrix
from source_traces.envs import EnvSpec, make_env
from source_traces.mrp import Mrp, exact_source_map, exact_value

SMALL = """\
name = tiny
env = random_mrp
gamma = 0.9
num_states = 8
out_degree = 3
batch = 2
seed = 1
horizon = 300
checkpoint_every = 100
targets = 2.0
learner = T td0 alpha=fixed:0.1,fixed:0.2
learner = S td_source_sr alpha=fixed:0.1
"""


def _run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


class TestGenEnvAndOracle:
    def test_gridworld_round_trip(self, tmp_path, capsys):
        path = tmp_path / "g.txt"
        code, out, _ = _run(capsys, "gen-env", "--kind", "gridworld3d", "--dims", "3,3,4", "--reward-states", "2",
                            "--gamma", "0.95", "--seed", "7", "--out", str(path))
        assert code == 0 and "36 states" in out
        loaded = Mrp.load(path)
        direct = make_env(EnvSpec("gridworld3d", 0.95, seed=7, dims=(3, 3, 4), num_reward_states=2))
        np.testing.assert_array_equal(loaded.transition, direct.transition)
        np.testing.assert_array_equal(loaded.reward, direct.reward)
        assert loaded.gamma == 0.95

    def test_oracles(self, tmp_path, capsys):
        env = tmp_path / "m.txt"
        assert _run(capsys, "gen-env", "--kind", "random_mrp", "--num-states", "15", "--out-degree", "4",
                    "--gamma", "0.9", "--seed", "3", "--out", str(env))[0] == 0
        mrp = Mrp.load(env)
        assert _run(capsys, "oracle", "--in", str(env), "--value", "--out", str(tmp_path / "v.csv"))[0] == 0
        assert _run(capsys, "oracle", "--in", str(env), "--source-map", "--out", str(tmp_path / "s.csv"))[0] == 0
        v = read_csv_matrix(tmp_path / "v.csv").ravel()
        S = read_csv_matrix(tmp_path / "s.csv")
        # independent route: solve the Bellman system directly
        v_direct = np.linalg.solve(np.eye(15) - 0.9 * mrp.transition, mrp.reward)
        np.testing.assert_allclose(v, v_direct, rtol=0, atol=1e-9)
        np.testing.assert_allclose(S @ mrp.reward, v_direct, rtol=0, atol=1e-9)
        np.testing.assert_array_equal(S, exact_source_map(mrp).matrix)
        np.testing.assert_array_equal(v, exact_value(mrp))


class TestExitCodes:
    def test_no_command(self, capsys):
        code, _, err = _run(capsys)
        assert code == 1 and "usage:" in err

    @pytest.mark.parametrize("argv", [
        ["bogus"],
        ["gen-env", "--kind", "maze", "--gamma", "0.9", "--out", "x"],
        ["gen-env", "--kind", "gridworld3d", "--dims", "3,3", "--gamma", "0.9", "--out", "x"],
        ["gen-env", "--kind", "gridworld3d", "--gamma", "1.5", "--out", "x"],
        ["run", "--config", "x.cfg"],
        ["run", "--config", "x.cfg", "--out", "o", "--workers", "0"],
        ["oracle", "--in", "x", "--value", "--source-map", "--out", "y"],
        ["reproduce", "fig99", "--out", "o"],
        ["check", "everything"],
    ])
    def test_invalid_input(self, argv, capsys, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        code, _, err = _run(capsys, *argv)
        assert code == 1
        assert "error:" in err

    def test_missing_files(self, tmp_path, capsys):
        assert _run(capsys, "run", "--config", str(tmp_path / "none.cfg"), "--out", str(tmp_path))[0] == 1
        assert _run(capsys, "oracle", "--in", str(tmp_path / "none"), "--value", "--out", str(tmp_path / "v"))[0] == 1

    def test_bad_config_contents(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("learner = a nonsense\n")
        code, _, err = _run(capsys, "run", "--config", str(cfg), "--out", str(tmp_path / "o"))
        assert code == 1 and "unknown algorithm" in err

    def test_bad_env_file(self, tmp_path, capsys):
        env = tmp_path / "m.txt"
        env.write_text("not an environment\n")
        assert _run(capsys, "oracle", "--in", str(env), "--value", "--out", str(tmp_path / "v"))[0] == 1

    def test_out_must_be_directory(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text(SMALL)
        assert _run(capsys, "run", "--config", str(cfg), "--out", str(cfg))[0] == 1

    def test_runtime_failure(self, tmp_path, capsys, monkeypatch):
        cfg = tmp_path / "c.cfg"
        cfg.write_text(SMALL)

        def boom(*a, **k):
            raise RuntimeError("disk on fire")

        monkeypatch.setattr(cli.harness, "run_experiment", boom)
        assert _run(capsys, "run", "--config", str(cfg), "--out", str(tmp_path / "o"))[0] == 2

    def test_interrupt_writes_partial_output(self, tmp_path, capsys, monkeypatch):
        cfg = tmp_path / "c.cfg"
        cfg.write_text(SMALL)
        real = cli.harness.run_experiment

        def interrupted(config, workers=None, on_env_done=None):
            def cb(i, recs):
                on_env_done(i, recs)
                raise KeyboardInterrupt
            return real(config, workers=1, on_env_done=cb)

        monkeypatch.setattr(cli.harness, "run_experiment", interrupted)
        code, _, err = _run(capsys, "run", "--config", str(cfg), "--out", str(tmp_path / "o"))
        assert code == 2 and "partial results for 1 environments" in err
        assert (tmp_path / "o" / "tiny_partial_runs.csv").exists()


class TestRun:
    def test_run_writes_outputs(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text(SMALL)
        code, out, _ = _run(capsys, "run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--workers", "2")
        assert code == 0 and out.startswith("T: best")
        names = sorted(p.name for p in (tmp_path / "o").iterdir())
        assert names == ["tiny.cfg", "tiny_aggregate.csv", "tiny_runs.csv", "tiny_steps_to_target.csv"]

    def test_overrides_and_worker_env(self, tmp_path, capsys, monkeypatch):
        cfg = tmp_path / "c.cfg"
        cfg.write_text(SMALL)
        monkeypatch.setenv("SOURCE_TRACES_WORKERS", "2")
        code, _, _ = _run(capsys, "run", "--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "9",
                          "--checkpoint-every", "150")
        assert code == 0
        text = (tmp_path / "a" / "tiny.cfg").read_text()
        assert "seed = 9" in text and "checkpoint_every = 150" in text
        monkeypatch.setenv("SOURCE_TRACES_WORKERS", "1")
        _run(capsys, "run", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "9",
             "--checkpoint-every", "150")
        assert (tmp_path / "a" / "tiny_runs.csv").read_text() == (tmp_path / "b" / "tiny_runs.csv").read_text()


class TestReproduceAndCheck:
    def test_reproduce_fig3_desk(self, tmp_path, capsys):
        code, out, _ = _run(capsys, "reproduce", "fig3", "--out", str(tmp_path), "--checkpoint-every", "1000")
        assert code == 0
        assert (tmp_path / "fig3_claims.txt").read_text().strip() == out.strip()
        assert all(line.startswith(("PASS", "FAIL", "INFO")) for line in out.splitlines() if line)

    def test_check_single_suite(self, capsys):
        code, out, _ = _run(capsys, "check", "replay", "--seed", "3")
        assert code == 0
        assert "[replay seed=3] PASS" in out and out.rstrip().endswith("all checks passed")


@pytest.mark.skipif(shutil.which("source-traces") is None, reason="console script not installed")
def test_console_script(tmp_path):
    proc = subprocess.run(["source-traces", "gen-env", "--kind", "gridworld3d", "--dims", "2,2,2",
                           "--reward-states", "1", "--gamma", "0.9", "--out", str(tmp_path / "e.txt")],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run(["source-traces", "nope"], capture_output=True, text=True, timeout=120)
    assert proc.returncode == 1 and "usage:" in proc.stderr
