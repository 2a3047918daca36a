"""End-to-end command-line behavior, including exit-code contracts."""

import os
import subprocess
import sys

import numpy as np
import pytest

from mtscs.cli import main
from mtscs.config import RunConfig, save_config
from mtscs.data import load_image, save_image
from mtscs.serialization import save_checkpoint
from mtscs.training import build_model


def tiny_config(**overrides) -> RunConfig:
    base = dict(
        crop_size=12,
        channels=3,
        cr=0.4,
        encoder_windows=[2, 4],
        refine_windows=[2, 4],
        encoder_terms=2,
        refine_terms=2,
        num_blocks=1,
        steps=3,
        batch=1,
        seed=0,
    )
    base.update(overrides)
    return RunConfig(**base)


def make_checkpoint(path: str, cfg: RunConfig) -> None:
    save_checkpoint(path, build_model(cfg), cfg)


def make_identity_checkpoint(path: str, size: int = 8) -> RunConfig:
    """Full-rate single-scale model with orthonormal factors: encode followed
    by decode reproduces the input up to rounding."""
    cfg = RunConfig(
        crop_size=size,
        channels=3,
        cr=1.0,
        encoder_windows=[size],
        refine_windows=[size],
        encoder_terms=1,
        refine_terms=1,
        num_blocks=0,
        activation="identity",
        steps=1,
    )
    model = build_model(cfg)
    rng = np.random.default_rng(42)
    params = model.params()
    for mode, n in enumerate((size, size, 3)):
        q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        params[f"enc.s0.t0.m{mode}"] = q
    model.set_params(params)
    save_checkpoint(path, model, cfg)
    return cfg


class TestEncodeDecode:
    def test_round_trip_through_files(self, tmp_path, capsys):
        ckpt = str(tmp_path / "model.ckpt")
        make_identity_checkpoint(ckpt, size=12)
        img = np.random.default_rng(0).random((12, 12, 3))
        img_path = str(tmp_path / "input.png")
        save_image(img_path, img)
        quantized = load_image(img_path)

        meas_path = str(tmp_path / "input.meas")
        assert main(["encode", "--checkpoint", ckpt, "--image", img_path, "--out", meas_path]) == 0
        assert os.path.isfile(meas_path)

        recon_path = str(tmp_path / "recon.npy")
        assert main([
            "decode", "--checkpoint", ckpt, "--measurements", meas_path,
            "--out", recon_path, "--reference", img_path,
        ]) == 0
        recon = np.load(recon_path)
        assert recon.shape == (12, 12, 3)
        assert float(np.max(np.abs(recon - quantized))) < 1e-5
        out = capsys.readouterr().out
        assert "psnr" in out

    def test_decode_to_png(self, tmp_path):
        ckpt = str(tmp_path / "model.ckpt")
        make_identity_checkpoint(ckpt)
        img_path = str(tmp_path / "input.png")
        save_image(img_path, np.random.default_rng(1).random((8, 8, 3)))
        meas_path = str(tmp_path / "input.meas")
        main(["encode", "--checkpoint", ckpt, "--image", img_path, "--out", meas_path])
        out_path = str(tmp_path / "recon.png")
        assert main(["decode", "--checkpoint", ckpt, "--measurements", meas_path, "--out", out_path]) == 0
        round_tripped = load_image(out_path)
        original = load_image(img_path)
        # one quantization step each way
        assert float(np.max(np.abs(round_tripped - original))) <= 2.5 / 255

    def test_encode_trained_checkpoint_on_larger_image(self, tmp_path):
        cfg = tiny_config()
        ckpt = str(tmp_path / "model.ckpt")
        make_checkpoint(ckpt, cfg)
        img_path = str(tmp_path / "big.png")
        save_image(img_path, np.random.default_rng(2).random((24, 24, 3)))
        meas_path = str(tmp_path / "big.meas")
        assert main(["encode", "--checkpoint", ckpt, "--image", img_path, "--out", meas_path]) == 0
        recon_path = str(tmp_path / "big.npy")
        assert main(["decode", "--checkpoint", ckpt, "--measurements", meas_path, "--out", recon_path]) == 0
        assert np.load(recon_path).shape == (24, 24, 3)


class TestEval:
    def test_csv_and_figures(self, tmp_path, capsys):
        cfg = tiny_config()
        ckpt = str(tmp_path / "model.ckpt")
        make_checkpoint(ckpt, cfg)
        data_dir = tmp_path / "imgs"
        data_dir.mkdir()
        rng = np.random.default_rng(3)
        for i in range(3):
            save_image(str(data_dir / f"img_{i}.png"), rng.random((12, 12, 3)))
        out_dir = tmp_path / "report"
        assert main([
            "eval", "--checkpoint", ckpt, "--data-dir", str(data_dir),
            "--out-dir", str(out_dir),
        ]) == 0
        with open(out_dir / "metrics.csv", encoding="utf-8") as fh:
            lines = fh.read().strip().splitlines()
        assert len(lines) == 4  # header + one row per image
        assert lines[0] == "image,psnr_db,ssim,proxy_psnr_db,proxy_ssim"
        assert (out_dir / "psnr_bars.png").is_file()
        assert (out_dir / "examples.png").is_file()
        assert "mean_psnr" in capsys.readouterr().out


class TestTrain:
    def test_synthetic_smoke(self, tmp_path, capsys):
        cfg = tiny_config(crop_size=8, steps=3)
        cfg_path = str(tmp_path / "run.yaml")
        save_config(cfg_path, cfg)
        out_dir = str(tmp_path / "run")
        code = main([
            "train", "--config", cfg_path, "--out-dir", out_dir, "--synthetic", "2",
        ])
        assert code == 0
        assert os.path.isfile(os.path.join(out_dir, "model.ckpt"))
        assert os.path.isfile(os.path.join(out_dir, "train_log.jsonl"))
        assert os.path.isfile(os.path.join(out_dir, "loss_curve.png"))
        assert "final loss" in capsys.readouterr().out

    def test_no_data_is_config_error(self, tmp_path):
        cfg_path = str(tmp_path / "run.yaml")
        save_config(cfg_path, tiny_config())
        assert main(["train", "--config", cfg_path]) == 2


class TestSmallCommands:
    def test_selftest_quick(self, capsys):
        assert main(["selftest"]) == 0
        out = capsys.readouterr().out
        assert "checks passed" in out

    def test_paramcount(self, tmp_path, capsys):
        cfg_path = str(tmp_path / "run.yaml")
        save_config(cfg_path, tiny_config())
        assert main(["paramcount", "--config", cfg_path]) == 0
        out = capsys.readouterr().out
        assert "total" in out
        assert "parameter/input ratio" in out

    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "mtscs", "--version"],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert proc.stdout.startswith("mtscs ")


class TestExitCodes:
    def test_missing_config_file_is_3(self, tmp_path, capsys):
        assert main(["train", "--config", str(tmp_path / "absent.yaml")]) == 3
        assert capsys.readouterr().err.startswith("error:")

    def test_bad_config_is_2(self, tmp_path, capsys):
        cfg_path = tmp_path / "bad.yaml"
        cfg_path.write_text("schema_version: 1\nnot_a_field: 5\n")
        assert main(["paramcount", "--config", str(cfg_path)]) == 2
        err = capsys.readouterr().err
        assert err.startswith("error:") and "\n" not in err.strip()

    def test_malformed_measurements_is_4(self, tmp_path, capsys):
        ckpt = str(tmp_path / "model.ckpt")
        make_identity_checkpoint(ckpt)
        bogus = tmp_path / "bogus.meas"
        bogus.write_bytes(b"JUNKJUNK" + b"\x00" * 16)
        code = main([
            "decode", "--checkpoint", ckpt, "--measurements", str(bogus),
            "--out", str(tmp_path / "x.npy"),
        ])
        assert code == 4
        assert "not a measurement" in capsys.readouterr().err

    def test_channel_mismatch_is_5(self, tmp_path, capsys):
        cfg = tiny_config(channels=2, crop_size=8)
        ckpt = str(tmp_path / "model.ckpt")
        make_checkpoint(ckpt, cfg)
        img_path = str(tmp_path / "rgb.png")
        save_image(img_path, np.random.default_rng(4).random((8, 8, 3)))
        code = main(["encode", "--checkpoint", ckpt, "--image", img_path, "--out", str(tmp_path / "x.meas")])
        assert code == 5
        assert "channels" in capsys.readouterr().err

    def test_unsupported_output_extension_is_2(self, tmp_path):
        ckpt = str(tmp_path / "model.ckpt")
        make_identity_checkpoint(ckpt)
        img_path = str(tmp_path / "input.png")
        save_image(img_path, np.random.default_rng(5).random((8, 8, 3)))
        meas_path = str(tmp_path / "x.meas")
        main(["encode", "--checkpoint", ckpt, "--image", img_path, "--out", meas_path])
        code = main([
            "decode", "--checkpoint", ckpt, "--measurements", meas_path,
            "--out", str(tmp_path / "recon.tiff"),
        ])
        assert code == 2
