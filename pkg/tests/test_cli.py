"""End-to-end command-line contract: outputs and the 0/1/2 exit-code matrix."""

import json
import subprocess
import sys

import pytest

from resnetkit import analyzer
from resnetkit.cli import main
from resnetkit.trainer import TrainConfig


@pytest.fixture(scope="module")
def arch_dir(tmp_path_factory):
    """Pre-built architecture files shared across the command tests."""
    root = tmp_path_factory.mktemp("archs")
    assert main([
        "build", "--family", "imagenet", "--variant", "iresnet", "--depth", "50",
        "--out", str(root / "iresnet50.arch.json"),
    ]) == 0
    assert main([
        "build", "--family", "cifar", "--variant", "iresnet", "--depth", "20",
        "--classes", "10", "--out", str(root / "cifar20.arch.json"),
    ]) == 0
    assert main([
        "build", "--family", "video3d", "--variant", "baseline", "--depth", "50",
        "--classes", "400", "--out", str(root / "video50.arch.json"),
    ]) == 0
    return root


class TestBuild:
    def test_reports_params_line(self, tmp_path, capsys):
        out = tmp_path / "net.arch.json"
        code = main([
            "build", "--family", "imagenet", "--variant", "iresnet", "--depth", "50",
            "--out", str(out),
        ])
        assert code == 0
        stdout = capsys.readouterr().out
        assert "params=25.56M" in stdout
        assert out.exists()

    def test_invalid_depth_exits_2(self, tmp_path, capsys):
        code = main([
            "build", "--family", "imagenet", "--variant", "iresnet", "--depth", "51",
            "--out", str(tmp_path / "x.arch.json"),
        ])
        assert code == 2
        assert "unsupported imagenet depth" in capsys.readouterr().err

    def test_invalid_variant_exits_2(self, tmp_path):
        assert main([
            "build", "--family", "cifar", "--variant", "resgroup", "--depth", "20",
            "--out", str(tmp_path / "x.arch.json"),
        ]) == 2

    def test_usage_error_exits_2(self):
        assert main(["build", "--family", "imagenet"]) == 2
        assert main(["no-such-command"]) == 2

    def test_help_exits_0(self):
        assert main(["--help"]) == 0


class TestSummarize:
    def test_round_trip_consistent(self, arch_dir, capsys):
        assert main(["summarize", "--arch", str(arch_dir / "iresnet50.arch.json")]) == 0
        stdout = capsys.readouterr().out
        assert "variant=iresnet" in stdout
        assert "params=25557032 (25.56M)" in stdout
        assert "main_path_relus=4" in stdout
        assert "weighted_layers=50" in stdout

    def test_missing_file_exits_2(self, tmp_path):
        assert main(["summarize", "--arch", str(tmp_path / "nope.arch.json")]) == 2


class TestCount:
    def parse_gflops(self, stdout):
        line = next(ln for ln in stdout.splitlines() if ln.startswith("flops="))
        return float(line.split("(")[1].split("G")[0])

    def test_iresnet50_at_224(self, arch_dir, capsys):
        assert main(["count", "--arch", str(arch_dir / "iresnet50.arch.json"), "--input", "3x224x224"]) == 0
        gflops = self.parse_gflops(capsys.readouterr().out)
        assert abs(gflops - 4.18) / 4.18 <= 0.02

    def test_iresnet50_at_320(self, arch_dir, capsys):
        assert main(["count", "--arch", str(arch_dir / "iresnet50.arch.json"), "--input", "3x320x320"]) == 0
        gflops = self.parse_gflops(capsys.readouterr().out)
        assert abs(gflops - 8.53) / 8.53 <= 0.02

    def test_video_graph_counts(self, arch_dir, capsys):
        assert main(["count", "--arch", str(arch_dir / "video50.arch.json"), "--input", "3x16x224x224"]) == 0
        gflops = self.parse_gflops(capsys.readouterr().out)
        assert abs(gflops - 93.26) / 93.26 <= 0.02

    def test_csv_lists_every_node(self, arch_dir, capsys):
        assert main([
            "count", "--arch", str(arch_dir / "cifar20.arch.json"),
            "--input", "3x32x32", "--format", "csv",
        ]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        from resnetkit.networks import load_arch
        graph = load_arch(arch_dir / "cifar20.arch.json")
        real_nodes = sum(1 for n in graph.nodes.values() if n.kind not in ("input", "output"))
        assert lines[0] == "node,params,flops"
        assert len(lines) == real_nodes + 2  # header + nodes + total

    def test_malformed_file_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.arch.json"
        bad.write_text('{"format": "resnetkit-arch", "version": 1, "nodes": [')
        assert main(["count", "--arch", str(bad), "--input", "3x32x32"]) == 2
        assert "line" in capsys.readouterr().err

    def test_bad_shape_exits_2(self, arch_dir):
        assert main(["count", "--arch", str(arch_dir / "cifar20.arch.json"), "--input", "32zz"]) == 2


class TestVerifyTables:
    def test_clean_tree_exits_0(self, capsys):
        assert main(["verify-tables"]) == 0
        assert "0 failed" in capsys.readouterr().out

    def test_corrupted_constant_exits_1(self, monkeypatch, capsys):
        row = analyzer.PARAM_CELLS[0]
        corrupted = [row[:4] + (99.99, row[5])] + analyzer.PARAM_CELLS[1:]
        monkeypatch.setattr(analyzer, "PARAM_CELLS", corrupted)
        assert main(["verify-tables"]) == 1
        assert "FAIL" in capsys.readouterr().out

    def test_csv_row_count(self, tmp_path, capsys):
        out = tmp_path / "tables.csv"
        assert main(["verify-tables", "--csv", str(out)]) == 0
        rows = out.read_text().strip().splitlines()
        assert len(rows) == 1 + len(analyzer.PARAM_CELLS) + len(analyzer.FLOP_CELLS)


@pytest.fixture(scope="module")
def train_run(tmp_path_factory, arch_dir):
    root = tmp_path_factory.mktemp("train")
    config = TrainConfig(
        variant="iresnet", depth=20, classes=10, epochs=2, batch_size=32,
        dataset="synthetic", train_subset=96, val_subset=64,
        lr_milestones=(1,), seed=4,
    )
    cfg_path = root / "config.json"
    cfg_path.write_text(config.to_json())
    out_dir = root / "run1"
    assert main(["train", "--config", str(cfg_path), "--out-dir", str(out_dir)]) == 0
    return root, cfg_path, out_dir


class TestTrainCommand:
    def test_writes_history_and_checkpoints(self, train_run):
        _, _, out_dir = train_run
        assert (out_dir / "history.csv").exists()
        assert (out_dir / "last.irnf").exists()
        assert (out_dir / "best.irnf").exists()

    def test_rerun_is_bit_identical(self, train_run):
        root, cfg_path, out_dir = train_run
        second = root / "run2"
        assert main(["train", "--config", str(cfg_path), "--out-dir", str(second)]) == 0
        assert (second / "history.csv").read_bytes() == (out_dir / "history.csv").read_bytes()

    def test_missing_config_exits_2(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "none.json")]) == 2

    def test_flag_overrides_file(self, train_run, tmp_path, capsys):
        _, cfg_path, _ = train_run
        out = tmp_path / "short"
        assert main(["train", "--config", str(cfg_path), "--out-dir", str(out), "--epochs", "0"]) == 0
        assert "0 epochs" in capsys.readouterr().out

    def test_bad_config_value_exits_2(self, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"batch_size": 1}))
        assert main(["train", "--config", str(cfg)]) == 2


class TestEvalCommand:
    def test_checkpoint_evaluation(self, arch_dir, train_run, capsys):
        _, _, out_dir = train_run
        code = main([
            "eval", "--arch", str(arch_dir / "cifar20.arch.json"),
            "--checkpoint", str(out_dir / "last.irnf"),
            "--dataset", "synthetic", "--subset", "64", "--seed", "4",
        ])
        assert code == 0
        stdout = capsys.readouterr().out
        assert "top1_err=" in stdout and "top5_err=" in stdout

    def test_missing_checkpoint_exits_2(self, arch_dir, tmp_path):
        assert main([
            "eval", "--arch", str(arch_dir / "cifar20.arch.json"),
            "--checkpoint", str(tmp_path / "none.irnf"),
        ]) == 2


class TestGradcheckCommand:
    def test_passes_on_clean_model(self, arch_dir, capsys):
        code = main([
            "gradcheck", "--arch", str(arch_dir / "cifar20.arch.json"),
            "--samples", "6", "--seed", "1",
        ])
        assert code == 0
        assert "worst_rel_error" in capsys.readouterr().out

    def test_impossible_threshold_exits_1(self, arch_dir):
        assert main([
            "gradcheck", "--arch", str(arch_dir / "cifar20.arch.json"),
            "--samples", "2", "--threshold", "1e-15",
        ]) == 1

    def test_video_arch_exits_2(self, arch_dir):
        assert main(["gradcheck", "--arch", str(arch_dir / "video50.arch.json")]) == 2


def test_console_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "resnetkit.cli", "verify-tables"],
        capture_output=True, text=True, timeout=300,
    )
    assert proc.returncode == 0
    assert "0 failed" in proc.stdout
