import json
import subprocess
import sys
import time

import pytest

from mfviton import cli
from mfviton.storage import read_manifest

from test_pipeline import same_tree

SMALL_CFG = "widths = 16,32,32\nctx_dim = 16\nn_sem = 2\nbatch_size = 4\nwarmup_steps = 10\nsample_steps = 4\ngen_chunk = 8\n"


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL_CFG)
    return path


def test_gen_world_is_byte_identical(tmp_path, capsys):
    for out in ("a", "b"):
        assert cli.main(["gen-world", "--workdir", str(tmp_path), "--n", "6", "--n-test", "3", "--out", out]) == 0
    assert same_tree(tmp_path / "a", tmp_path / "b")
    assert "test_maskfree" in capsys.readouterr().out
    assert len(read_manifest(tmp_path / "a" / "train.jsonl").samples) == 6


def test_evaluate_identical_lists(tmp_path, capsys):
    assert cli.main(["gen-world", "--workdir", str(tmp_path), "--n", "2", "--n-test", "3"]) == 0
    capsys.readouterr()
    args = ["evaluate", "--workdir", str(tmp_path), "--generated", "world/test.jsonl", "--targets", "world/test.jsonl"]
    assert cli.main(args + ["--paired", "--out", "report.json"]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["paired"]["SSIM"] == pytest.approx(1.0) and report["paired"]["LPIPS*"] == 0.0
    assert "unpaired" not in report


def test_usage_error_exit_code(capsys):
    assert cli.main([]) == 2
    assert cli.main(["gen-world", "--n", "many"]) == 2
    assert cli.main(["no-such-command"]) == 2


def test_io_error_exit_code(tmp_path, capsys):
    assert cli.main(["train-stage1", "--workdir", str(tmp_path)]) == 5
    assert cli.main(["infer", "--workdir", str(tmp_path), "--checkpoint", "missing.ckpt"]) == 5
    assert "error" in capsys.readouterr().err


def test_config_error_exit_codes(tmp_path, small_cfg, capsys):
    assert cli.main(["gen-world", "--workdir", str(tmp_path), "--set", "nonsense=1"]) == 3
    (tmp_path / "bad.cfg").write_text("seed = abc\n")
    assert cli.main(["gen-world", "--workdir", str(tmp_path), "--config", "bad.cfg"]) == 3
    base = ["--workdir", str(tmp_path), "--config", str(small_cfg)]
    assert cli.main(["gen-world", *base, "--n", "4", "--n-test", "2", "--out", "w1"]) == 0
    assert cli.main(["gen-world", *base, "--n", "4", "--n-test", "2", "--out", "w2", "--seed", "1"]) == 0
    gen = ["evaluate", "--workdir", str(tmp_path), "--generated", "w1/test.jsonl", "--targets", "w2/test.jsonl"]
    assert cli.main(gen) == 3
    assert cli.main(gen + ["--force"]) == 0
    assert cli.main(["train-stage1", *base, "--manifest", "w1/train.jsonl", "--steps", "2", "--out", "s1.ckpt"]) == 0
    # stage-I checkpoint against mask-free inputs, and against another world
    assert cli.main(["infer", *base, "--checkpoint", "s1.ckpt", "--manifest", "w1/test_maskfree.jsonl"]) == 3
    assert cli.main(["infer", *base, "--checkpoint", "s1.ckpt", "--manifest", "w2/test.jsonl"]) == 3
    assert cli.main(["build-mf-dataset", *base, "--checkpoint", "s1.ckpt", "--manifest", "w2/train.jsonl"]) == 3
    # topology mismatch between the run configuration and the init checkpoint
    assert cli.main(["train-stage2", "--workdir", str(tmp_path), "--manifest", "w1/test_maskfree.jsonl", "--init", "s1.ckpt"]) == 3


@pytest.mark.slow
def test_full_chain_smoke(tmp_path, small_cfg, capsys):
    start = time.time()
    base = ["--workdir", str(tmp_path), "--config", str(small_cfg)]
    steps = [
        ["gen-world", "--n", "24", "--n-test", "6", "--workers", "2"],
        ["train-stage1", "--steps", "200"],
        ["build-mf-dataset"],
        ["augment-wild"],
        ["train-stage2", "--steps", "200"],
        ["infer"],
        ["evaluate", "--out", "report.json"],
        ["demo-failures", "--checkpoint", "ckpt/stage1.ckpt", "--rows", "2"],
    ]
    for argv in steps:
        assert cli.main(argv + base) == 0, argv
    report = json.loads((tmp_path / "report.json").read_text())
    assert {"paired", "unpaired"} <= set(report)
    assert 0 <= report["paired"]["LPIPS*"] and report["unpaired"]["FID*"] >= 0
    assert report["lineage"]["checkpoint"]
    wild = read_manifest(tmp_path / "wild" / "manifest.jsonl")
    assert wild.counts()["background_altered"] == 5 and wild.lineage["ofi"] is True
    assert (tmp_path / "ckpt" / "stage2.config.txt").exists()
    assert (tmp_path / "demo_failures.png").stat().st_size > 0
    assert time.time() - start < 600


def test_console_entry_point_help():
    out = subprocess.run([sys.executable, "-m", "mfviton.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "train-stage2" in out.stdout
