"""Reconstruction quality metrics and dataset evaluation.

PSNR is ``10 log10(peak^2 / mse)`` with ``inf`` for identical inputs.  The
structural similarity uses the standard 11-tap Gaussian window
(sigma = 1.5), population (biased) covariances, constants
``(0.01 peak)^2`` and ``(0.03 peak)^2``, the mean taken over the valid
(boundary-free) region, and channel averaging.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

_SSIM_RADIUS = 5
_SSIM_WINDOW = 2 * _SSIM_RADIUS + 1
_SSIM_SIGMA = 1.5


def psnr(ref: np.ndarray, test: np.ndarray, peak: float = 1.0) -> float:
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.shape != test.shape:
        raise ShapeError(f"psnr: shapes {ref.shape} and {test.shape} differ")
    err = float(np.mean((ref - test) ** 2))
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def _gaussian_kernel() -> np.ndarray:
    x = np.arange(-_SSIM_RADIUS, _SSIM_RADIUS + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / _SSIM_SIGMA) ** 2)
    return k / k.sum()


def _valid_gaussian_filter(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    rows = sliding_window_view(img, _SSIM_WINDOW, axis=0) @ kernel
    return sliding_window_view(rows, _SSIM_WINDOW, axis=1) @ kernel


def ssim(ref: np.ndarray, test: np.ndarray, peak: float = 1.0) -> float:
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.shape != test.shape:
        raise ShapeError(f"ssim: shapes {ref.shape} and {test.shape} differ")
    if ref.ndim == 2:
        ref = ref[:, :, None]
        test = test[:, :, None]
    if ref.ndim != 3:
        raise ShapeError(f"ssim expects 2-D or 3-D images, got shape {ref.shape}")
    h, w, channels = ref.shape
    if h < _SSIM_WINDOW or w < _SSIM_WINDOW:
        raise ShapeError(
            f"ssim needs at least {_SSIM_WINDOW}x{_SSIM_WINDOW} pixels, got {h}x{w}"
        )
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    kernel = _gaussian_kernel()
    scores = []
    for c in range(channels):
        x = ref[:, :, c]
        y = test[:, :, c]
        ux = _valid_gaussian_filter(x, kernel)
        uy = _valid_gaussian_filter(y, kernel)
        vx = _valid_gaussian_filter(x * x, kernel) - ux * ux
        vy = _valid_gaussian_filter(y * y, kernel) - uy * uy
        vxy = _valid_gaussian_filter(x * y, kernel) - ux * uy
        s = ((2.0 * ux * uy + c1) * (2.0 * vxy + c2)) / (
            (ux * ux + uy * uy + c1) * (vx + vy + c2)
        )
        scores.append(float(s.mean()))
    return float(np.mean(scores))


@dataclass
class EvalReport:
    """Per-image and mean reconstruction metrics for one model/dataset pair."""

    rows: list[dict] = field(default_factory=list)
    mean_psnr: float = math.nan
    mean_ssim: float = math.nan
    mean_proxy_psnr: float = math.nan
    mean_proxy_ssim: float = math.nan
    requested_cr: float = math.nan
    achieved_cr: float = math.nan
    config_digest: str = ""

    @property
    def count(self) -> int:
        return len(self.rows)


def evaluate(model, images, names=None, config_digest: str = "") -> EvalReport:
    """Run sense -> proxy -> refine per image and collect PSNR/SSIM for both
    the proxy and the final reconstruction."""
    if names is None:
        names = [f"image_{i:03d}" for i in range(len(images))]
    if len(names) != len(images):
        raise ShapeError("names and images differ in length")
    report = EvalReport(config_digest=config_digest)
    report.requested_cr = model.encoder.requested_cr
    for name, img in zip(names, images):
        img = np.asarray(img, dtype=model.dtype)
        m = model
        if img.shape != model.in_shape:
            m = model.with_in_shape(img.shape[:2])
        _, prox, recon = m.forward(img)
        report.rows.append(
            {
                "image": name,
                "psnr_db": psnr(img, recon),
                "ssim": ssim(img, recon),
                "proxy_psnr_db": psnr(img, prox),
                "proxy_ssim": ssim(img, prox),
            }
        )
    report.achieved_cr = model.encoder.achieved_cr()
    report.mean_psnr = float(np.mean([r["psnr_db"] for r in report.rows]))
    report.mean_ssim = float(np.mean([r["ssim"] for r in report.rows]))
    report.mean_proxy_psnr = float(np.mean([r["proxy_psnr_db"] for r in report.rows]))
    report.mean_proxy_ssim = float(np.mean([r["proxy_ssim"] for r in report.rows]))
    return report
