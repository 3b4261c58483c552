import json

import numpy as np
import pytest

from halosor.cli import build_parser, main


class TestParser:
    def test_grid_parsing(self):
        args = build_parser().parse_args(["solve", "--grid", "32x16"])
        assert args.grid == (32, 16)

    def test_bad_grid_rejected(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["solve", "--grid", "32"])

    def test_requires_subcommand(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])


class TestSolve:
    def test_manufactured_async_json(self, tmp_path, capsys):
        out = tmp_path / "report.json"
        rc = main(["solve", "--problem", "manufactured", "--grid", "32x16",
                   "--pes", "4", "--policy", "async", "--out", str(out)])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert doc["policy"] == "async"
        assert not doc["timed_out"]
        assert doc["final_rel_residual"] < 1e-8
        assert np.asarray(doc["solution"]).shape == (32, 16)

    def test_stdout_when_no_out(self, capsys):
        rc = main(["solve", "--problem", "manufactured", "--grid", "16x16",
                   "--pes", "2", "--policy", "sync"])
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["policy"] == "sync"

    def test_bubble_defaults_converge(self, tmp_path):
        # default problem is the 1000:1 bubble; stock flags must give a
        # converging run, so omega is capped for the high-contrast case
        out = tmp_path / "report.json"
        rc = main(["solve", "--pes", "4", "--policy", "async",
                   "--omega", "1.2", "--out", str(out)])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert not doc["timed_out"]
        assert doc["final_rel_residual"] < 1e-8

    def test_conv_log_written(self, tmp_path):
        log = tmp_path / "conv.jsonl"
        rc = main(["solve", "--problem", "manufactured", "--grid", "16x16",
                   "--pes", "4", "--policy", "async",
                   "--conv-log", str(log), "--out",
                   str(tmp_path / "r.json")])
        assert rc == 0
        events = [json.loads(line)
                  for line in log.read_text().splitlines()]
        assert events[-1]["event"] == "global"


class TestSweep:
    def test_small_sweep_csv(self, tmp_path, capsys):
        out = tmp_path / "sweep.csv"
        rc = main(["sweep", "--problem", "manufactured", "--grid", "16x16",
                   "--pes", "2", "--horizons", "100", "--decays", "0.8",
                   "--seeds", "0", "--warmup", "20", "--out", str(out)])
        assert rc == 0
        lines = out.read_text().strip().split("\n")
        assert lines[0].startswith("h,d,seed")
        assert len(lines) == 3   # async baseline + one (h, d) cell


class TestOracle:
    def test_oracle_diff_small(self, capsys):
        rc = main(["oracle", "--problem", "manufactured", "--grid", "16x16",
                   "--pes", "2"])
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["max_abs_diff_mean_subtracted"] < 1e-6
