"""Optimizer math, schedule values, and the training loop's contracts."""

import json
import math
import os

import numpy as np
import pytest

from mtscs.config import RunConfig
from mtscs.data import synthetic_textures
from mtscs.errors import ConfigError, TrainingError
from mtscs.training import (
    TrainState,
    adam_step,
    build_model,
    cosine_restart_lr,
    smoothed_loss,
    train,
)


def small_config(**overrides) -> RunConfig:
    base = dict(
        crop_size=8,
        channels=3,
        cr=0.4,
        encoder_windows=[2, 4],
        refine_windows=[2, 4],
        encoder_terms=2,
        refine_terms=2,
        num_blocks=1,
        steps=5,
        batch=1,
        lr=1e-3,
        cycle_steps=100,
        seed=0,
    )
    base.update(overrides)
    return RunConfig(**base)


class TestAdam:
    def test_zero_gradient_leaves_params_bitwise_unchanged(self):
        rng = np.random.default_rng(0)
        params = {"a": rng.standard_normal((3, 4)), "b": rng.standard_normal(5)}
        grads = {k: np.zeros_like(v) for k, v in params.items()}
        state = TrainState.for_params(params)
        out = adam_step(params, grads, state, lr=0.1)
        for k in params:
            assert np.array_equal(out[k], params[k])

    def test_first_step_is_signed_lr(self):
        # bias correction makes step one exactly -lr * g/(|g| + eps')
        params = {"a": np.array([1.0, -2.0])}
        grads = {"a": np.array([0.5, -0.25])}
        state = TrainState.for_params(params)
        out = adam_step(params, grads, state, lr=0.01)
        expected = params["a"] - 0.01 * np.sign(grads["a"])
        np.testing.assert_allclose(out["a"], expected, atol=1e-6)

    def test_constant_gradient_moves_at_lr_per_step(self):
        params = {"a": np.array([0.0])}
        grads = {"a": np.array([3.0])}
        state = TrainState.for_params(params)
        for _ in range(50):
            params = adam_step(params, grads, state, lr=0.01)
        # every step is ~ -lr * sign(g) once moments saturate
        assert params["a"][0] == pytest.approx(-0.5, rel=1e-4)

    def test_moments_match_hand_rolled_recurrence(self):
        rng = np.random.default_rng(1)
        p = rng.standard_normal(4)
        params = {"p": p.copy()}
        state = TrainState.for_params(params)
        m = np.zeros(4)
        v = np.zeros(4)
        q = p.copy()
        for t in range(1, 6):
            g = rng.standard_normal(4)
            params = adam_step(params, {"p": g}, state, lr=2e-3)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            q = q - 2e-3 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
            np.testing.assert_allclose(params["p"], q, atol=1e-14)

    def test_nan_gradient_aborts_with_parameter_name(self):
        params = {"weights": np.ones(3)}
        grads = {"weights": np.array([1.0, math.nan, 0.0])}
        state = TrainState.for_params(params)
        with pytest.raises(TrainingError, match="weights"):
            adam_step(params, grads, state, lr=0.1)

    def test_inf_gradient_aborts(self):
        params = {"w": np.ones(2)}
        grads = {"w": np.array([math.inf, 0.0])}
        state = TrainState.for_params(params)
        with pytest.raises(TrainingError):
            adam_step(params, grads, state, lr=0.1)


class TestSchedule:
    def test_starts_at_base(self):
        assert cosine_restart_lr(0, 1e-3, cycle_steps=100) == pytest.approx(1e-3)

    def test_half_cycle_is_half_base(self):
        assert cosine_restart_lr(50, 1e-3, cycle_steps=100) == pytest.approx(5e-4)

    def test_end_of_cycle_approaches_zero(self):
        lr = cosine_restart_lr(99, 1e-3, cycle_steps=100)
        assert 0.0 < lr < 1e-3 * 0.001

    def test_restart_snaps_back_to_base(self):
        assert cosine_restart_lr(100, 1e-3, cycle_steps=100) == pytest.approx(1e-3)
        assert cosine_restart_lr(200, 1e-3, cycle_steps=100) == pytest.approx(1e-3)

    def test_cycle_mult_stretches_cycles(self):
        # lengths 10, 20, 40: restarts at steps 10 and 30
        assert cosine_restart_lr(10, 1.0, cycle_steps=10, cycle_mult=2.0) == pytest.approx(1.0)
        assert cosine_restart_lr(30, 1.0, cycle_steps=10, cycle_mult=2.0) == pytest.approx(1.0)
        # step 20 is halfway through the second cycle
        assert cosine_restart_lr(20, 1.0, cycle_steps=10, cycle_mult=2.0) == pytest.approx(0.5)

    def test_monotone_within_cycle(self):
        values = [cosine_restart_lr(s, 1.0, cycle_steps=50) for s in range(50)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_bad_cycle_steps_rejected(self):
        with pytest.raises(ConfigError):
            cosine_restart_lr(0, 1.0, cycle_steps=0)


class TestBuildModel:
    def test_dimensions_follow_config(self):
        cfg = small_config(num_blocks=2)
        model = build_model(cfg)
        assert model.in_shape == (8, 8, 3)
        assert len(model.blocks) == 2
        assert model.encoder.requested_cr == pytest.approx(0.4)

    def test_precision_float32(self):
        cfg = small_config(precision="float32")
        model = build_model(cfg)
        assert all(v.dtype == np.float32 for v in model.params().values())

    def test_same_seed_same_params(self):
        a = build_model(small_config()).params()
        b = build_model(small_config()).params()
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_different_seed_different_params(self):
        a = build_model(small_config(seed=0)).params()
        b = build_model(small_config(seed=1)).params()
        assert any(not np.array_equal(a[k], b[k]) for k in a)


class TestTrainLoop:
    def test_deterministic_across_runs(self):
        cfg = small_config(steps=4)
        images = synthetic_textures(2, size=8, seed=3)
        r1 = train(cfg, images)
        r2 = train(cfg, images)
        assert r1.losses == r2.losses
        p1, p2 = r1.model.params(), r2.model.params()
        assert all(np.array_equal(p1[k], p2[k]) for k in p1)

    def test_records_carry_step_lr_loss(self):
        cfg = small_config(steps=3)
        images = synthetic_textures(1, size=8, seed=4)
        result = train(cfg, images)
        assert [r["step"] for r in result.records] == [0, 1, 2]
        for record in result.records:
            assert set(record) >= {"step", "lr", "loss"}
            assert record["lr"] == pytest.approx(
                cosine_restart_lr(record["step"], cfg.lr, cfg.cycle_steps)
            )

    def test_loss_drops_on_tiny_problem(self):
        cfg = small_config(steps=60, lr=5e-3, batch=1)
        images = synthetic_textures(1, size=8, seed=5)
        result = train(cfg, images)
        early = float(np.mean(result.losses[:5]))
        late = float(np.mean(result.losses[-5:]))
        assert late < 0.5 * early

    def test_eval_hook_fires(self):
        cfg = small_config(steps=4, eval_every=2)
        images = synthetic_textures(1, size=12, seed=6)
        result = train(cfg, images, eval_images=images)
        assert len(result.eval_reports) == 2
        tagged = [r for r in result.records if "eval_psnr_db" in r]
        assert [r["step"] for r in tagged] == [1, 3]

    def test_artifacts_written(self, tmp_path):
        cfg = small_config(steps=3)
        images = synthetic_textures(1, size=8, seed=7)
        result = train(cfg, images, out_dir=str(tmp_path))
        assert result.checkpoint_path == str(tmp_path / "model.ckpt")
        assert os.path.isfile(tmp_path / "model.ckpt")
        assert os.path.isfile(tmp_path / "loss_curve.png")
        with open(tmp_path / "train_log.jsonl", encoding="utf-8") as fh:
            lines = [json.loads(line) for line in fh]
        assert len(lines) == 3
        assert lines[0]["step"] == 0

    def test_no_images_rejected(self):
        with pytest.raises(ConfigError):
            train(small_config(), [])


class TestSmoothedLoss:
    def test_trailing_window_mean(self):
        losses = [float(v) for v in range(1, 21)]
        assert smoothed_loss(losses, 20, window=10) == pytest.approx(15.5)
        assert smoothed_loss(losses, 5, window=10) == pytest.approx(3.0)

    def test_out_of_range_rejected(self):
        with pytest.raises(ConfigError):
            smoothed_loss([1.0], 2)
