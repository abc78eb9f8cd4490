"""Tests for the command-line interface."""

import numpy as np
import pytest
from typer.testing import CliRunner

from adverseg import __version__
from adverseg.cli import app
from adverseg.core.gradcheck import CHECKS
from adverseg.data.manifest import write_dataset
from adverseg.data.models import Sample
from adverseg.utils.config import SEED_ENV

runner = CliRunner()

TINY_CONFIG = """\
steps = 2
batch_size = 4
eval_every = 1
lr = 0.001
encoder_channels = [4, 8]
disc_channels = [4, 8]
"""


@pytest.fixture(autouse=True)
def no_env_seed(monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)


@pytest.fixture
def data_dir(tmp_path):
    out = tmp_path / "data"
    result = runner.invoke(
        app, ["gen-data", "--out", str(out), "--count", "6", "--size", "16", "--seed", "1"]
    )
    assert result.exit_code == 0, result.output
    return out


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY_CONFIG)
    return path


@pytest.fixture
def run_dir(tmp_path, data_dir, config_path):
    out = tmp_path / "run"
    result = runner.invoke(
        app,
        ["train", "--data", str(data_dir / "manifest.txt"), "--config", str(config_path),
         "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    return out


def _tree(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestRoot:
    def test_version(self):
        result = runner.invoke(app, ["--version"])
        assert result.exit_code == 0
        assert __version__ in result.output


class TestGenData:
    """Tests for gen-data."""

    def test_writes_dataset(self, data_dir):
        assert (data_dir / "manifest.txt").read_text().startswith("C=3 H=16 W=16 CIN=1")
        assert len(list((data_dir / "images").glob("*.tsr"))) == 6

    def test_deterministic(self, tmp_path, data_dir):
        again = tmp_path / "again"
        runner.invoke(
            app, ["gen-data", "--out", str(again), "--count", "6", "--size", "16", "--seed", "1"]
        )
        assert _tree(again) == _tree(data_dir)

    def test_env_seed(self, tmp_path, data_dir, monkeypatch):
        monkeypatch.setenv(SEED_ENV, "1")
        out = tmp_path / "env"
        runner.invoke(app, ["gen-data", "--out", str(out), "--count", "6", "--size", "16"])
        assert _tree(out) == _tree(data_dir)

    def test_indivisible_size(self, tmp_path):
        result = runner.invoke(app, ["gen-data", "--out", str(tmp_path / "x"), "--size", "60"])
        assert result.exit_code == 2
        assert "divisible" in result.output

    def test_zero_count(self, tmp_path):
        result = runner.invoke(app, ["gen-data", "--out", str(tmp_path / "x"), "--count", "0"])
        assert result.exit_code == 2


class TestTrain:
    """Tests for train."""

    def test_outputs(self, run_dir):
        for name in ("final.ckpt", "best.ckpt", "history.txt", "report.txt", "config.toml"):
            assert (run_dir / name).is_file()
        assert "steps = 2" in (run_dir / "config.toml").read_text()

    def test_flags_override_config(self, tmp_path, data_dir, config_path):
        out = tmp_path / "run1"
        result = runner.invoke(
            app,
            ["train", "--data", str(data_dir / "manifest.txt"), "--config", str(config_path),
             "--out", str(out), "--steps", "1", "--no-adversarial", "--lambda", "2"],
        )
        assert result.exit_code == 0, result.output
        lines = (out / "history.txt").read_text().splitlines()
        assert len(lines) == 1
        assert "adv_d=0.0" in lines[0]

    def test_deterministic(self, tmp_path, data_dir, config_path, run_dir):
        out = tmp_path / "run2"
        runner.invoke(
            app,
            ["train", "--data", str(data_dir / "manifest.txt"), "--config", str(config_path),
             "--out", str(out)],
        )
        for name in ("history.txt", "final.ckpt"):
            assert (out / name).read_bytes() == (run_dir / name).read_bytes()

    def test_unknown_config_key(self, tmp_path, data_dir):
        path = tmp_path / "bad.toml"
        path.write_text("epochs = 3\n")
        result = runner.invoke(
            app,
            ["train", "--data", str(data_dir / "manifest.txt"), "--config", str(path),
             "--out", str(tmp_path / "run")],
        )
        assert result.exit_code == 2
        assert "epochs" in result.output

    def test_missing_manifest(self, tmp_path):
        result = runner.invoke(
            app, ["train", "--data", str(tmp_path / "none.txt"), "--out", str(tmp_path / "run")]
        )
        assert result.exit_code == 2

    def test_non_finite_aborts(self, tmp_path, config_path):
        samples = [
            Sample(np.full((1, 16, 16), np.nan, dtype=np.float32), np.zeros((16, 16), np.uint8))
            for _ in range(4)
        ]
        write_dataset(samples, tmp_path / "nan", 3)
        out = tmp_path / "run"
        result = runner.invoke(
            app,
            ["train", "--data", str(tmp_path / "nan" / "manifest.txt"), "--config",
             str(config_path), "--out", str(out)],
        )
        assert result.exit_code == 3
        assert (out / "partial.ckpt").is_file()


class TestEvalAndReport:
    """Tests for eval and report."""

    def test_eval_run_dir(self, tmp_path, data_dir, run_dir):
        report_path = tmp_path / "ours.txt"
        result = runner.invoke(
            app,
            ["eval", "--data", str(data_dir / "manifest.txt"), "--checkpoint", str(run_dir),
             "--out", str(report_path), "--name", "Tiny"],
        )
        assert result.exit_code == 0, result.output
        assert report_path.read_text().startswith("model=Tiny pa=")

    def test_eval_missing_checkpoint(self, tmp_path, data_dir):
        empty = tmp_path / "empty"
        empty.mkdir()
        result = runner.invoke(
            app, ["eval", "--data", str(data_dir / "manifest.txt"), "--checkpoint", str(empty)]
        )
        assert result.exit_code == 2

    def test_report_reference_rows(self, tmp_path):
        stored = tmp_path / "stored.txt"
        stored.write_text("model=Ours pa=0.5821 recall=0.5523 iou=0.2859 dice=0.4433\n")
        result = runner.invoke(app, ["report", "--in", str(stored), "--columns", "pa,recall"])
        assert result.exit_code == 0
        assert "Ours" in result.output
        assert "0.5821  0.5523" in result.output

        result = runner.invoke(app, ["report", "--in", str(stored), "--columns", "iou,dice"])
        assert "0.2859  0.4433" in result.output

    def test_report_reference_table(self, tmp_path):
        stored = tmp_path / "stored.txt"
        stored.write_text(
            "model=FCNs pa=0.5321 recall=0.5231 iou=0.2591 dice=0.4119\n"
            "model=SegNet pa=0.5411 recall=0.5351 iou=0.2673 dice=0.4212\n"
            "model=U-Net pa=0.5531 recall=0.5399 iou=0.2787 dice=0.4355\n"
            "model='DeepLab V1' pa=0.5622 recall=0.5431 iou=0.2829 dice=0.4397\n"
            "model='DeepLab V2' pa=0.5732 recall=0.5478 iou=0.2855 dice=0.4412\n"
            "model=Ours pa=0.5821 recall=0.5523 iou=0.2859 dice=0.4433\n"
        )
        result = runner.invoke(app, ["report", "--in", str(stored), "--columns", "iou,dice"])
        assert result.exit_code == 0
        lines = [line for line in result.output.splitlines() if line.strip()]
        assert len(lines) == 8
        assert len({len(line.rstrip()) for line in lines}) == 1
        assert lines[5].split() == ["DeepLab", "V1", "0.2829", "0.4397"]
        assert lines[-1].split() == ["Ours", "0.2859", "0.4433"]

    def test_report_multiple_inputs(self, tmp_path):
        a = tmp_path / "a.txt"
        b = tmp_path / "b.txt"
        a.write_text("model=A pa=0.1 recall=0.2 iou=0.3 dice=0.4\n")
        b.write_text("model=B pa=0.5 recall=0.6 iou=0.7 dice=0.8\n")
        result = runner.invoke(app, ["report", "--in", str(a), "--in", str(b)])
        assert result.exit_code == 0
        rows = [line.split()[0] for line in result.output.splitlines()[2:] if line.strip()]
        assert rows == ["A", "B"]

    def test_report_unknown_column(self, tmp_path):
        stored = tmp_path / "stored.txt"
        stored.write_text("model=Ours pa=0.5821 recall=0.5523 iou=0.2859 dice=0.4433\n")
        result = runner.invoke(app, ["report", "--in", str(stored), "--columns", "pa,f1"])
        assert result.exit_code == 2
        assert "valid" in result.output


class TestGradcheck:
    """Tests for gradcheck."""

    def test_all_pass(self):
        result = runner.invoke(app, ["gradcheck"])
        assert result.exit_code == 0, result.output
        lines = [line for line in result.output.splitlines() if line.strip()]
        assert len(lines) == len(CHECKS)
        assert all(line.startswith("OK") for line in lines)

    def test_single_layer(self):
        result = runner.invoke(app, ["gradcheck", "--layer", "conv2d"])
        assert result.exit_code == 0
        lines = [line for line in result.output.splitlines() if line.strip()]
        assert len(lines) == 1 and "conv2d" in lines[0]

    def test_corrupted_backward(self):
        result = runner.invoke(
            app, ["gradcheck", "--layer", "conv2d", "--corrupt-backward", "conv2d"]
        )
        assert result.exit_code == 1
        assert "FAIL" in result.output

    def test_unknown_layer(self):
        result = runner.invoke(app, ["gradcheck", "--layer", "dense"])
        assert result.exit_code == 2


class TestHistoryAndConfig:
    """Tests for history and config."""

    def test_history(self, run_dir):
        result = runner.invoke(app, ["history", str(run_dir)])
        assert result.exit_code == 0
        assert "Training History" in result.output

    def test_history_missing(self, tmp_path):
        result = runner.invoke(app, ["history", str(tmp_path / "nope.txt")])
        assert result.exit_code == 2

    def test_config_show(self, config_path):
        result = runner.invoke(app, ["config", "--config", str(config_path)])
        assert result.exit_code == 0
        assert "steps = 2" in result.output

    def test_config_write(self, tmp_path):
        target = tmp_path / "effective.toml"
        result = runner.invoke(app, ["config", "--write", str(target)])
        assert result.exit_code == 0
        assert "lambda_rec = 10.0" in target.read_text()
