"""Quick built-in health checks, exposed through the CLI.

Each check is small enough to run in seconds and covers one structural
guarantee: operator/adjoint agreement against a materialized matrix,
adjointness, gradient accuracy against finite differences, measurement
accounting, and a checkpoint round trip.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

from .config import RunConfig
from .model import CsModel
from .operators import MtsOperator


def _check_materialize() -> tuple[bool, str]:
    rng = np.random.default_rng(7)
    op = MtsOperator.build((8, 8, 2), [2, 4], cr=0.4, num_terms=2, rng=rng)
    x = rng.standard_normal((8, 8, 2))
    dense = op.materialize()
    direct = op.forward(x).ravel()
    via_matrix = dense @ x.ravel()
    err = float(np.max(np.abs(direct - via_matrix)))
    return err < 1e-10, f"max deviation {err:.3e}"


def _check_adjoint() -> tuple[bool, str]:
    rng = np.random.default_rng(11)
    op = MtsOperator.build((8, 8, 2), [2, 4], cr=0.4, num_terms=2, rng=rng)
    x = rng.standard_normal((8, 8, 2))
    y = rng.standard_normal(op.out_shape)
    lhs = float(np.sum(op.forward(x) * y))
    rhs = float(np.sum(x * op.adjoint(y)))
    err = abs(lhs - rhs) / max(abs(lhs), 1e-12)
    return err < 1e-10, f"relative pairing error {err:.3e}"


def _check_gradients() -> tuple[bool, str]:
    rng = np.random.default_rng(3)
    model = CsModel.build(
        (8, 8, 2),
        cr=0.4,
        encoder_windows=[2, 4],
        refine_windows=[2, 4],
        encoder_terms=2,
        refine_terms=2,
        num_blocks=1,
        rng=rng,
    )
    x = rng.random((8, 8, 2))
    _, grads, _ = model.backward(x, x)
    params = model.params()
    # the first couple of names sit behind the zero-initialized output
    # factor and have exactly zero gradient; probe the largest one instead
    name = max(params, key=lambda k: float(np.max(np.abs(grads[k]))))
    flat = params[name].ravel()
    idx = int(np.argmax(np.abs(grads[name])))
    h = 1e-6
    orig = flat[idx]
    flat[idx] = orig + h
    model.set_params(params)
    up = model.loss(x, x)
    flat[idx] = orig - h
    model.set_params(params)
    down = model.loss(x, x)
    flat[idx] = orig
    model.set_params(params)
    fd = (up - down) / (2 * h)
    an = float(grads[name].ravel()[idx])
    err = abs(fd - an) / max(abs(fd), abs(an), 1e-12)
    return err < 1e-5, f"finite-difference relative error {err:.3e}"


def _check_measurement_count() -> tuple[bool, str]:
    rng = np.random.default_rng(0)
    op = MtsOperator.build((64, 64, 3), [4, 8, 16], cr=0.25, num_terms=1, rng=rng)
    achieved = op.achieved_cr()
    off = abs(achieved - 0.25) / 0.25
    return off <= 0.05, f"requested 0.25, achieved {achieved:.4f}"


def _check_checkpoint_roundtrip() -> tuple[bool, str]:
    from .serialization import load_checkpoint, save_checkpoint
    from .training import build_model

    cfg = RunConfig(
        crop_size=8,
        channels=2,
        cr=0.4,
        encoder_windows=[2, 4],
        refine_windows=[2, 4],
        encoder_terms=2,
        refine_terms=2,
        num_blocks=1,
        steps=1,
    )
    model = build_model(cfg)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.ckpt")
        save_checkpoint(path, model, cfg)
        loaded, _ = load_checkpoint(path)
    before = model.params()
    after = loaded.params()
    same = set(before) == set(after) and all(
        np.array_equal(before[k], after[k]) for k in before
    )
    return same, f"{len(before)} parameter tensors compared"


def _check_training_step() -> tuple[bool, str]:
    from .data import synthetic_textures
    from .training import train

    cfg = RunConfig(
        crop_size=8,
        channels=2,
        cr=0.4,
        encoder_windows=[2, 4],
        refine_windows=[2, 4],
        encoder_terms=2,
        refine_terms=2,
        num_blocks=1,
        steps=5,
        batch=1,
        cycle_steps=5,
    )
    images = synthetic_textures(2, size=8, channels=2, seed=1)
    result = train(cfg, images)
    finite = all(np.isfinite(loss) for loss in result.losses)
    return finite, f"5 steps, final loss {result.losses[-1]:.3e}"


_QUICK_CHECKS = [
    ("operator_matches_materialized_matrix", _check_materialize),
    ("forward_adjoint_pairing", _check_adjoint),
    ("measurement_count_within_5_percent", _check_measurement_count),
    ("checkpoint_roundtrip_bit_exact", _check_checkpoint_roundtrip),
]

_FULL_CHECKS = [
    ("gradient_matches_finite_difference", _check_gradients),
    ("training_loop_finite", _check_training_step),
]


def run_selftest(full: bool = False) -> list[tuple[str, bool, str]]:
    """Run the health checks; returns (name, passed, detail) triples."""
    checks = list(_QUICK_CHECKS)
    if full:
        checks += _FULL_CHECKS
    results = []
    for name, fn in checks:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failure, not an abort
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, ok, detail))
    return results
