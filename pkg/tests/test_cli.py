import numpy as np
import pytest
import torch

from conftest import structured_image
from rdrn.analysis import count_params
from rdrn.checkpoint import save_checkpoint
from rdrn.cli import main
from rdrn.images import read_image, write_image
from rdrn.model import RDRN, RDRNConfig


@pytest.fixture
def dataset(tmp_path):
    rng = np.random.default_rng(0)
    root = tmp_path / "ds"
    for i in range(2):
        write_image(root / "HR" / f"img{i}.png", rng.random((32, 32, 3)))
    return root


@pytest.fixture
def checkpoint(tmp_path):
    path = tmp_path / "ckpt"
    save_checkpoint(path, RDRN(RDRNConfig(depth=0, channels=8, scale=2)))
    return path


class TestAnalyzeCommand:
    def test_params_passthrough(self, capsys):
        rc = main(["analyze", "--depth", "0", "--channels", "8"])
        assert rc == 0
        out = capsys.readouterr().out
        expected = count_params(RDRNConfig(depth=0, channels=8, scale=4))
        assert f"params: {expected:,}" in out

    def test_sweep_ratio_column_in_band(self, capsys):
        rc = main(["analyze", "--depth", "5", "--channels", "64",
                   "--scale", "4", "--sweep", "3..5"])
        assert rc == 0
        out = capsys.readouterr().out
        ratios = []
        for line in out.splitlines():
            parts = line.split()
            if parts and parts[0] in ("4", "5") and len(parts) >= 5:
                ratios.extend([float(parts[3]), float(parts[4])])
        assert ratios and all(1.90 <= r <= 2.05 for r in ratios)

    def test_invalid_scale_is_usage_error(self):
        with pytest.raises(SystemExit) as err:
            main(["analyze", "--depth", "1", "--channels", "8", "--scale", "5"])
        assert err.value.code == 2

    def test_csv_report(self, tmp_path, capsys):
        csv_path = tmp_path / "cost.csv"
        rc = main(["analyze", "--depth", "1", "--channels", "8",
                   "--scale", "2", "--csv", str(csv_path)])
        assert rc == 0
        lines = csv_path.read_text().splitlines()
        assert lines[0] == "entry,params,flops"
        assert len(lines) == 1 + 3 + 3  # header, total/shallow/head, 3 nodes


class TestDegradeCommand:
    def test_dataset_cache(self, dataset, capsys):
        rc = main(["degrade", "--dataset-root", str(dataset),
                   "--degradation", "BD", "--scale", "2",
                   "--blur-sigma", "1.2"])
        assert rc == 0
        assert (dataset / "LR_BD_x2" / "img0.png").is_file()

    def test_needs_input(self):
        rc = main(["degrade", "--degradation", "BI"])
        assert rc == 2


class TestSRCommand:
    def test_roundtrip(self, dataset, checkpoint, tmp_path, capsys):
        out = tmp_path / "sr.png"
        rc = main(["sr", "--input", str(dataset / "HR" / "img0.png"),
                   "--output", str(out), "--checkpoint", str(checkpoint)])
        assert rc == 0
        assert read_image(out).shape == (64, 64, 3)

    def test_missing_checkpoint_runtime_error(self, dataset, tmp_path):
        rc = main(["sr", "--input", str(dataset / "HR" / "img0.png"),
                   "--output", str(tmp_path / "x.png"),
                   "--checkpoint", str(tmp_path / "missing")])
        assert rc == 1

    def test_missing_flags_usage_error(self):
        rc = main(["sr", "--input", "a.png"])
        assert rc == 2


class TestEvalCommand:
    def test_row_count_and_csv(self, dataset, tmp_path, capsys):
        csv_path = tmp_path / "r.csv"
        rc = main(["eval", "--dataset-root", str(dataset),
                   "--method", "bicubic", "--degradation", "BI",
                   "--scale", "2", "--csv", str(csv_path)])
        assert rc == 0
        out = capsys.readouterr().out
        table_lines = [l for l in out.splitlines()
                       if l.startswith(("img", "mean"))]
        assert len(table_lines) == 2 + 1  # per image + summary
        assert len(csv_path.read_text().splitlines()) == 1 + 2 + 1

    def test_identity_prints_inf(self, dataset, capsys):
        rc = main(["eval", "--dataset-root", str(dataset),
                   "--method", "identity", "--degradation", "BI",
                   "--scale", "2"])
        assert rc == 0
        assert "inf" in capsys.readouterr().out


class TestTrainCommand:
    def test_config_file_drives_run(self, tmp_path, capsys):
        root = tmp_path / "ds"
        write_image(root / "HR" / "a.png", structured_image(32))
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "# tiny smoke config\n"
            "depth = 0\n"
            "channels = 8\n"
            "scale = 2\n"
            "degradation = BI\n"
            "total_steps = 2\n"
            "batch_size = 2\n"
            "lr_patch_size = 8\n"
            f"data_root = {root}\n"
            f"out_dir = {tmp_path / 'run'}\n")
        rc = main(["train", "--config", str(cfg)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "effective config:" in out
        assert (tmp_path / "run" / "final" / "manifest.json").is_file()

    def test_flag_overrides_file(self, tmp_path, capsys):
        root = tmp_path / "ds"
        write_image(root / "HR" / "a.png", structured_image(32))
        cfg = tmp_path / "run.cfg"
        cfg.write_text("depth = 3\nchannels = 8\nscale = 2\n"
                       "degradation = BI\ntotal_steps = 1\nbatch_size = 1\n"
                       "lr_patch_size = 8\n")
        rc = main(["train", "--config", str(cfg), "--depth", "0",
                   "--data-root", str(root),
                   "--out-dir", str(tmp_path / "run2")])
        assert rc == 0
        assert '"depth": 0' in capsys.readouterr().out

    def test_finetune_requires_init(self, tmp_path):
        rc = main(["finetune", "--data-root", str(tmp_path),
                   "--out-dir", str(tmp_path / "o")])
        assert rc == 2
