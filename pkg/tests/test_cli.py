import json
from pathlib import Path

import numpy as np
import pytest

from drivesim.cli import EXIT_FORMAT, EXIT_OK, EXIT_USAGE, main
from drivesim.persist import load_checkpoint, read_trajectory_csv, write_json


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def fast_config(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "config.json"
    write_json({
        "schema": 1,
        "evolution": {"pop_size": 6, "elite_count": 1, "tournament_size": 2,
                      "generations": 2, "max_episode_ticks": 80, "seed": 3},
        "dqn": {"max_episodes": 4, "max_episode_ticks": 50,
                "replay_capacity": 300, "batch_size": 8, "seed": 3,
                "probe_size": 4},
        "evaluation": {"episodes": 2},
    }, p)
    return str(p)


class TestTrainEvo:
    def test_writes_outputs(self, tmp_path, fast_config):
        out = tmp_path / "evo"
        assert run_cli("train-evo", "straight_highway", "--config", fast_config,
                       "--out", str(out), "--traffic", "0") == EXIT_OK
        assert (out / "history.csv").exists()
        assert (out / "checkpoint.bin").exists()
        assert (out / "config.json").exists()
        meta = json.loads((out / "meta.json").read_text())
        assert meta["agent"] == "evo"
        # the config snapshot echoes every default
        snap = json.loads((out / "config.json").read_text())
        assert snap["evolution"]["mutation_sigma"] == 0.1
        assert snap["vehicle"]["wheelbase"] == 2.5

    def test_zero_generations_valid_empty_run(self, tmp_path, fast_config):
        out = tmp_path / "evo0"
        assert run_cli("train-evo", "straight_highway", "--config", fast_config,
                       "--out", str(out), "--traffic", "0",
                       "--generations", "0") == EXIT_OK
        lines = (out / "history.csv").read_text().splitlines()
        assert len(lines) == 2  # header + initial population row

    def test_same_seed_identical_history(self, tmp_path, fast_config):
        a = tmp_path / "a"
        b = tmp_path / "b"
        for out in (a, b):
            assert run_cli("train-evo", "straight_highway", "--config",
                           fast_config, "--out", str(out)) == EXIT_OK
        assert (a / "history.csv").read_bytes() == (b / "history.csv").read_bytes()
        assert (a / "checkpoint.bin").read_bytes() == (b / "checkpoint.bin").read_bytes()

    def test_resume_equals_uninterrupted(self, tmp_path, fast_config):
        straight = tmp_path / "straight"
        assert run_cli("train-evo", "straight_highway", "--config", fast_config,
                       "--out", str(straight), "--generations", "4") == EXIT_OK
        resumed = tmp_path / "resumed"
        assert run_cli("train-evo", "straight_highway", "--config", fast_config,
                       "--out", str(resumed), "--generations", "2") == EXIT_OK
        assert run_cli("train-evo", "--resume", str(resumed / "checkpoint.bin"),
                       "--out", str(resumed), "--generations", "4") == EXIT_OK
        assert (straight / "history.csv").read_bytes() == \
            (resumed / "history.csv").read_bytes()
        assert (straight / "checkpoint.bin").read_bytes() == \
            (resumed / "checkpoint.bin").read_bytes()


class TestTrainDqn:
    def test_writes_outputs_and_determinism(self, tmp_path, fast_config):
        a = tmp_path / "a"
        b = tmp_path / "b"
        for out in (a, b):
            assert run_cli("train-dqn", "straight_highway", "--config",
                           fast_config, "--out", str(out)) == EXIT_OK
        assert (a / "history.csv").read_bytes() == (b / "history.csv").read_bytes()

    def test_zero_episodes(self, tmp_path, fast_config):
        out = tmp_path / "dqn0"
        assert run_cli("train-dqn", "straight_highway", "--config", fast_config,
                       "--out", str(out), "--episodes", "0") == EXIT_OK
        lines = (out / "history.csv").read_text().splitlines()
        assert len(lines) == 1  # header only
        ckpt = load_checkpoint(out / "checkpoint.bin")
        assert ckpt.meta["episodes_done"] == 0

    def test_resume_equals_uninterrupted(self, tmp_path, fast_config):
        straight = tmp_path / "straight"
        assert run_cli("train-dqn", "straight_highway", "--config", fast_config,
                       "--out", str(straight), "--episodes", "6") == EXIT_OK
        # same 6-episode budget, interrupted after 3, then resumed
        resumed = tmp_path / "resumed"
        assert run_cli("train-dqn", "straight_highway", "--config", fast_config,
                       "--out", str(resumed), "--episodes", "6",
                       "--stop-after", "3") == EXIT_OK
        assert run_cli("train-dqn", "--resume", str(resumed / "checkpoint.bin"),
                       "--out", str(resumed)) == EXIT_OK
        assert (straight / "history.csv").read_bytes() == \
            (resumed / "history.csv").read_bytes()
        assert (straight / "checkpoint.bin").read_bytes() == \
            (resumed / "checkpoint.bin").read_bytes()


@pytest.fixture(scope="module")
def evo_ckpt(tmp_path_factory, fast_config):
    out = tmp_path_factory.mktemp("train") / "evo"
    assert run_cli("train-evo", "straight_highway", "--config", fast_config,
                   "--out", str(out)) == EXIT_OK
    return out / "checkpoint.bin"


class TestEval:
    def test_eval_without_reference(self, tmp_path, fast_config, evo_ckpt):
        out = tmp_path / "eval"
        assert run_cli("eval", str(evo_ckpt), "--config", fast_config,
                       "--out", str(out)) == EXIT_OK
        metrics = json.loads((out / "metrics.json").read_text())
        assert "velocity_error_pct" not in metrics
        assert metrics["episodes"] == 2
        assert (out / "episode_000.csv").exists()

    def test_eval_against_own_run_zero_error(self, tmp_path, fast_config, evo_ckpt):
        out1 = tmp_path / "eval1"
        assert run_cli("eval", str(evo_ckpt), "--config", fast_config,
                       "--out", str(out1), "--episodes", "1") == EXIT_OK
        out2 = tmp_path / "eval2"
        assert run_cli("eval", str(evo_ckpt), "--config", fast_config,
                       "--out", str(out2), "--episodes", "1", "--reference",
                       str(out1 / "episode_000.csv")) == EXIT_OK
        metrics = json.loads((out2 / "metrics.json").read_text())
        assert metrics["velocity_error_pct"] == 0.0
        assert metrics["e_vf_mean"] == 0.0
        assert metrics["e_delta_mean"] == 0.0

    def test_eval_determinism(self, tmp_path, fast_config, evo_ckpt):
        outs = []
        for name in ("m1", "m2"):
            out = tmp_path / name
            assert run_cli("eval", str(evo_ckpt), "--config", fast_config,
                           "--out", str(out), "--episodes", "2") == EXIT_OK
            outs.append(out)
        assert (outs[0] / "metrics.json").read_bytes() == \
            (outs[1] / "metrics.json").read_bytes()
        assert (outs[0] / "episode_001.csv").read_bytes() == \
            (outs[1] / "episode_001.csv").read_bytes()

    def test_scenario_mismatch_rejected(self, tmp_path, fast_config, evo_ckpt):
        out1 = tmp_path / "ref"
        assert run_cli("eval", str(evo_ckpt), "--config", fast_config,
                       "--out", str(out1), "--episodes", "1") == EXIT_OK
        ref = out1 / "episode_000.csv"
        text = ref.read_text().replace("scenario=straight_highway",
                                       "scenario=curved_road")
        bad_ref = tmp_path / "bad_ref.csv"
        bad_ref.write_text(text)
        assert run_cli("eval", str(evo_ckpt), "--config", fast_config,
                       "--out", str(tmp_path / "x"), "--reference",
                       str(bad_ref)) == EXIT_FORMAT


class TestReplay:
    def test_replay_check_round_trip(self, tmp_path, fast_config):
        out = tmp_path / "evo"
        assert run_cli("train-evo", "straight_highway", "--config", fast_config,
                       "--out", str(out)) == EXIT_OK
        ev = tmp_path / "eval"
        assert run_cli("eval", str(out / "checkpoint.bin"), "--config",
                       fast_config, "--out", str(ev), "--episodes", "1") == EXIT_OK
        assert run_cli("replay", str(ev / "episode_000.csv"), "--check") == EXIT_OK


class TestReport:
    def test_report_rows_and_regeneration(self, tmp_path, fast_config):
        evo_out = tmp_path / "evo"
        dqn_out = tmp_path / "dqn"
        assert run_cli("train-evo", "straight_highway", "--config", fast_config,
                       "--out", str(evo_out)) == EXIT_OK
        assert run_cli("train-dqn", "straight_highway", "--config", fast_config,
                       "--out", str(dqn_out)) == EXIT_OK
        r1 = tmp_path / "report1"
        r2 = tmp_path / "report2"
        for r in (r1, r2):
            assert run_cli("report", str(evo_out), str(dqn_out),
                           "--out", str(r)) == EXIT_OK
        assert (r1 / "report.csv").read_bytes() == (r2 / "report.csv").read_bytes()
        lines = (r1 / "report.csv").read_text().splitlines()
        assert len(lines) == 3  # header + evo + dqn
        assert lines[0].startswith("agent,scenario,velocity_error_pct,training_time_s")

    def test_missing_pairs_absent(self, tmp_path, fast_config):
        evo_out = tmp_path / "evo"
        assert run_cli("train-evo", "straight_highway", "--config", fast_config,
                       "--out", str(evo_out)) == EXIT_OK
        r = tmp_path / "report"
        assert run_cli("report", str(evo_out), "--out", str(r),
                       "--scenarios", "straight_highway,curved_road") == EXIT_OK
        lines = (r / "report.csv").read_text().splitlines()
        absent = [l for l in lines[1:] if l.endswith(",0")]
        assert len(absent) == 1 and "curved_road" in absent[0]


class TestScenarioCommand:
    def test_write_and_reuse(self, tmp_path, fast_config):
        sc_path = tmp_path / "track.json"
        assert run_cli("scenario", "seamless_a", "--out", str(sc_path)) == EXIT_OK
        out = tmp_path / "evo"
        assert run_cli("train-evo", str(sc_path), "--config", fast_config,
                       "--out", str(out), "--generations", "1") == EXIT_OK
        meta = json.loads((out / "meta.json").read_text())
        assert meta["scenario"] == "seamless_a"


class TestErrors:
    def test_unknown_scenario_usage_error(self, tmp_path):
        assert run_cli("train-evo", "mars_canyon", "--out",
                       str(tmp_path / "x"), "--generations", "0") == EXIT_USAGE

    def test_bad_config_reports_field_path(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"schema": 1, "dqn": {"gamma": "fast"}}')
        code = run_cli("train-dqn", "straight_highway", "--config", str(bad),
                       "--out", str(tmp_path / "x"))
        assert code == EXIT_FORMAT
        assert "dqn.gamma" in capsys.readouterr().err

    def test_bad_checkpoint_format_error(self, tmp_path):
        junk = tmp_path / "junk.bin"
        junk.write_bytes(b"garbage")
        assert run_cli("eval", str(junk), "--out", str(tmp_path / "x")) == EXIT_FORMAT

    def test_usage_error_no_command(self):
        assert run_cli() == EXIT_USAGE
