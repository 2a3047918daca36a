"""Training loop: Adam with bias correction, cosine schedule with warm
restarts, deterministic batching, and per-step records.

The objective per crop is
``mse(reconstruction, crop) + proxy_loss_weight * mse(proxy, crop)``; the
auxiliary term keeps the sensing/back-projection pair useful on its own.
Everything is driven by one seeded generator, so identical configs produce
identical loss curves and identical checkpoints.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig, config_hash
from .data import random_crop
from .errors import ConfigError, TrainingError
from .metrics import EvalReport, evaluate
from .model import CsModel


def build_model(cfg: RunConfig, rng: np.random.Generator | None = None) -> CsModel:
    """Instantiate the pipeline a config describes (untrained)."""
    cfg.validate()
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    dtype = np.float32 if cfg.precision == "float32" else np.float64
    return CsModel.build(
        (cfg.crop_size, cfg.crop_size, cfg.channels),
        cr=cfg.cr,
        encoder_windows=cfg.encoder_windows,
        refine_windows=cfg.refine_windows,
        encoder_terms=cfg.encoder_terms,
        refine_terms=cfg.refine_terms,
        num_blocks=cfg.num_blocks,
        activation=cfg.activation,
        block_activation=cfg.block_activation,
        hidden_channels=cfg.hidden_channels,
        window_rule=cfg.window_rule,
        rng=rng,
        dtype=dtype,
    )


def cosine_restart_lr(
    step: int, base_lr: float, cycle_steps: int = 10000, cycle_mult: float = 1.0
) -> float:
    """Learning rate at ``step``: half-cosine decay from ``base_lr`` to 0 over
    each cycle, snapping back to ``base_lr`` at every restart.  ``cycle_mult``
    stretches successive cycle lengths."""
    if cycle_steps < 1:
        raise ConfigError(f"cycle_steps must be >= 1, got {cycle_steps}")
    remaining = int(step)
    length = int(cycle_steps)
    while remaining >= length:
        remaining -= length
        length = max(1, int(round(length * cycle_mult)))
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * remaining / length))


@dataclass
class TrainState:
    """Adam moment accumulators plus the global step counter."""

    step: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict) -> "TrainState":
        return cls(
            step=0,
            first_moment={k: np.zeros_like(v) for k, v in params.items()},
            second_moment={k: np.zeros_like(v) for k, v in params.items()},
        )


def adam_step(
    params: dict,
    grads: dict,
    state: TrainState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> dict:
    """One bias-corrected Adam update; returns the new parameter dict.

    Zero gradients leave parameters bit-for-bit unchanged; any non-finite
    gradient aborts, naming the offending parameter.
    """
    state.step += 1
    t = state.step
    new_params = {}
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingError(
                f"non-finite gradient in parameter {name!r} at step {t}"
            )
        m = state.first_moment[name]
        v = state.second_moment[name]
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_params


@dataclass
class TrainResult:
    model: CsModel
    losses: list[float]
    lrs: list[float]
    records: list[dict]
    eval_reports: list[EvalReport]
    checkpoint_path: str | None = None


def train(
    cfg: RunConfig,
    images: list[np.ndarray],
    eval_images: list[np.ndarray] | None = None,
    out_dir: str | None = None,
    progress=None,
) -> TrainResult:
    """Train a model described by ``cfg`` on in-memory images.

    ``images`` are [0, 1] float arrays at least ``crop_size`` on each side;
    each step samples ``cfg.batch`` random crops.  When ``out_dir`` is given,
    the checkpoint, an append-only line-delimited log, and a loss-curve
    figure are written there.
    """
    cfg.validate()
    if not images:
        raise ConfigError("training needs at least one image")
    rng = np.random.default_rng(cfg.seed)
    model = build_model(cfg, rng)
    state = TrainState.for_params(model.params())

    losses: list[float] = []
    lrs: list[float] = []
    records: list[dict] = []
    eval_reports: list[EvalReport] = []
    digest = config_hash(cfg)

    for step in range(cfg.steps):
        lr = cosine_restart_lr(step, cfg.lr, cfg.cycle_steps, cfg.cycle_mult)
        batch_loss = 0.0
        batch_grads: dict | None = None
        for _ in range(cfg.batch):
            img = images[int(rng.integers(len(images)))]
            patch = random_crop(img, cfg.crop_size, rng)
            loss, grads, _ = model.backward(
                patch, patch, proxy_weight=cfg.proxy_loss_weight
            )
            batch_loss += loss
            if batch_grads is None:
                batch_grads = grads
            else:
                for k in batch_grads:
                    batch_grads[k] = batch_grads[k] + grads[k]
        batch_loss /= cfg.batch
        assert batch_grads is not None
        for k in batch_grads:
            batch_grads[k] = batch_grads[k] / cfg.batch

        model.set_params(adam_step(model.params(), batch_grads, state, lr))

        record = {"step": step, "lr": lr, "loss": batch_loss}
        if (
            eval_images
            and cfg.eval_every > 0
            and (step + 1) % cfg.eval_every == 0
        ):
            report = evaluate(model, eval_images, config_digest=digest)
            eval_reports.append(report)
            record["eval_psnr_db"] = report.mean_psnr
            record["eval_ssim"] = report.mean_ssim
        losses.append(batch_loss)
        lrs.append(lr)
        records.append(record)
        if progress is not None:
            progress(record)

    checkpoint_path = None
    if out_dir is not None:
        from .report import save_loss_curve
        from .serialization import save_checkpoint

        os.makedirs(out_dir, exist_ok=True)
        checkpoint_path = os.path.join(out_dir, "model.ckpt")
        save_checkpoint(checkpoint_path, model, cfg)
        log_path = os.path.join(out_dir, "train_log.jsonl")
        with open(log_path, "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record) + "\n")
        save_loss_curve(os.path.join(out_dir, "loss_curve.png"), losses, lrs)

    return TrainResult(
        model=model,
        losses=losses,
        lrs=lrs,
        records=records,
        eval_reports=eval_reports,
        checkpoint_path=checkpoint_path,
    )


def smoothed_loss(losses: list[float], step: int, window: int = 10) -> float:
    """Trailing-window mean of the loss curve at ``step`` (1-based steps)."""
    if step < 1 or step > len(losses):
        raise ConfigError(f"step {step} outside recorded range 1..{len(losses)}")
    lo = max(0, step - window)
    return float(np.mean(losses[lo:step]))
