import csv
import subprocess
import sys

import numpy as np
import pytest

from vpp import cli
from vpp.pipeline import NumericalError
from vpp.synth_video import format_scenario, SynthScenario, InstanceSpec


def run_cli(*args):
    return cli.main([str(a) for a in args])


def test_seed_is_mandatory(tmp_path, capsys):
    assert run_cli("flops", "--out", tmp_path / "f.csv") == 2
    assert run_cli("bogus") == 2


def test_help_exits_cleanly(capsys):
    assert run_cli("--help") == 0
    assert "scene-switch" in capsys.readouterr().out


def test_config_errors_exit_2(tmp_path, capsys):
    assert run_cli("flops", "--seed", 0, "--out", tmp_path / "f.csv", "--set", "colour=red") == 2
    assert run_cli("flops", "--seed", 0, "--out", tmp_path / "f.csv", "--set", "mapsm_index=5") == 2
    assert run_cli("flops", "--seed", 0, "--out", tmp_path / "f.csv", "--set", "layers=seven") == 2
    assert run_cli("flops", "--seed", 0, "--out", tmp_path / "f.csv", "--config", tmp_path / "missing.txt") == 2
    assert "config error" in capsys.readouterr().err


def test_numerical_failures_exit_3(tmp_path, monkeypatch, capsys):
    assert run_cli("gradcheck", "--seed", 0, "--out", tmp_path / "g.csv", "--instances", 1, "--tolerance", 0) == 3
    assert "gradient check failed" in capsys.readouterr().err

    def boom(args):
        raise NumericalError("loss became non-finite")

    monkeypatch.setattr(cli, "cmd_flops", boom)
    parser_fn = cli.build_parser
    monkeypatch.setattr(cli, "build_parser", lambda: _rebind(parser_fn(), "flops", boom))
    assert run_cli("flops", "--seed", 0, "--out", tmp_path / "f.csv") == 3


def _rebind(parser, name, fn):
    sub = next(a for a in parser._actions if a.dest == "command")
    sub.choices[name].set_defaults(fn=fn)
    return parser


def test_flops_report(tmp_path, capsys):
    assert run_cli("flops", "--seed", 0, "--out", tmp_path / "f.csv", "--preset", 0.40) == 0
    rows = {r["item"]: r for r in csv.DictReader(open(tmp_path / "f.csv"))}
    assert float(rows["reduction"]["total"]) > 0.3
    assert "reduction" in capsys.readouterr().out


def test_generate_from_scenario_file(tmp_path):
    sc = SynthScenario(seed=3, frames=2, instances=(InstanceSpec("rect", 0.1, (1.0, 0.0)),))
    (tmp_path / "s.txt").write_text(format_scenario(sc))
    assert run_cli("generate", "--seed", 0, "--out", tmp_path / "o", "--scenario", tmp_path / "s.txt") == 0
    names = sorted(p.name for p in (tmp_path / "o" / "scenario_00").iterdir())
    assert names == ["frame_000.pgm", "frame_001.pgm", "gt_000.pgm", "gt_001.pgm", "scenario.txt"]


def test_geometry_mismatch_is_config_error(tmp_path):
    (tmp_path / "s.txt").write_text(format_scenario(SynthScenario(seed=1, frames=2)))
    assert run_cli("run", "--seed", 0, "--out", tmp_path, "--scenario", tmp_path / "s.txt", "--set", "grid=8x8") == 2


def test_train_then_run_with_checkpoint(tmp_path):
    assert run_cli("train", "--seed", 1, "--out", tmp_path / "t", "--suite", 1, "--steps", 2) == 0
    curves = list(csv.DictReader(open(tmp_path / "t" / "curves.csv")))
    assert len(curves) == 2 and "pkr" in curves[0]
    assert run_cli("run", "--seed", 1, "--out", tmp_path / "r", "--suite", 1,
                   "--checkpoint", tmp_path / "t" / "checkpoint.vppw") == 0
    d = tmp_path / "r" / "scenario_00"
    masks = np.frombuffer((d / "masks.bin").read_bytes(), dtype=np.uint8).reshape(8, 13, 100)
    pkr = list(csv.DictReader(open(d / "pkr.csv")))
    assert float(pkr[-1]["density"]) == masks[:, :-1].mean()
    assert len(list((d / "masks").glob("mask_*.pgm"))) == 8
    ioi = {r["stratum"]: r for r in csv.DictReader(open(d / "ioi.csv"))}
    assert set(ioi) == {"all", "S", "M", "L", "random"}


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "vpp", "flops", "--seed", "0", "--out", str(tmp_path / "f.csv")],
                         capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("pruned")
