"""Shared builders for test models."""

import numpy as np

from mtscs.activations import make_activation
from mtscs.model import CsModel
from mtscs.operators import GtsOperator, MtsOperator, ScaleSpec


def orthonormal_model(size: int, channels: int = 3, seed: int = 0) -> CsModel:
    """Single-scale, full-window, single-term model whose factors are
    orthonormal, so sensing is invertible and the adjoint is the inverse."""
    rng = np.random.default_rng(seed)
    qs = []
    for n in (size, size, channels):
        q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        qs.append(q)
    gts = GtsOperator([qs], (size, size, channels), (size, size, channels))
    encoder = MtsOperator(
        (size, size, channels), [ScaleSpec(size, size, size, gts)], requested_cr=1.0
    )
    return CsModel(encoder, make_activation("identity", channels), [])


def tiny_model(
    activation: str = "mhg",
    seed: int = 0,
    num_blocks: int = 1,
    size: int = 8,
) -> CsModel:
    """Small but fully featured pipeline: two scales, two terms, refinement."""
    return CsModel.build(
        (size, size, 3),
        cr=0.25,
        encoder_windows=[2, 4],
        refine_windows=[2, 4],
        encoder_terms=2,
        refine_terms=2,
        num_blocks=num_blocks,
        activation=activation,
        block_activation=activation,
        rng=np.random.default_rng(seed),
    )
