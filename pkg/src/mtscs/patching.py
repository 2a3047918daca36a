"""Bijective patch embedding and its exact inverse.

An ``H x W x C`` image whose spatial sides are multiples of the window is
rearranged into a ``B x wh x ww x C`` stack of non-overlapping patches,
scanned row-major over the patch grid.  Both directions are pure
reshape/transpose, so ``inverse_embed(embed(x)) == x`` bit for bit and the
two maps are mutual adjoints (they are permutations of coordinates).

Mirror padding (edge-inclusive reflection, extending bottom/right) and its
adjoint are provided for inputs that do not divide a window.  Padding is a
0/1 linear gather, so its adjoint is the matching scatter-add, implemented
from the same index map to keep the pair exactly adjoint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


def _check_image(x: np.ndarray, name: str = "image") -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeError(f"{name} must be H x W x C, got shape {x.shape}")
    return x


def embed(x: np.ndarray, window_h: int, window_w: int | None = None) -> np.ndarray:
    """Split an image into non-overlapping ``window_h x window_w`` patches.

    Returns a ``B x window_h x window_w x C`` tensor with patches ordered
    row-major over the patch grid.
    """
    x = _check_image(x)
    if window_w is None:
        window_w = window_h
    h, w, c = x.shape
    if window_h < 1 or window_w < 1:
        raise ShapeError(f"window must be positive, got {(window_h, window_w)}")
    if h % window_h or w % window_w:
        raise ShapeError(
            f"image {h}x{w} is not divisible by window {window_h}x{window_w}"
        )
    gh, gw = h // window_h, w // window_w
    return (
        x.reshape(gh, window_h, gw, window_w, c)
        .transpose(0, 2, 1, 3, 4)
        .reshape(gh * gw, window_h, window_w, c)
    )


def inverse_embed(p: np.ndarray, grid_h: int, grid_w: int) -> np.ndarray:
    """Reassemble patches produced by :func:`embed` into an image.

    ``grid_h * grid_w`` must equal the number of patches.
    """
    p = np.asarray(p)
    if p.ndim != 4:
        raise ShapeError(f"patches must be B x wh x ww x C, got shape {p.shape}")
    b, wh, ww, c = p.shape
    if grid_h < 1 or grid_w < 1 or grid_h * grid_w != b:
        raise ShapeError(
            f"patch grid {grid_h}x{grid_w} does not account for {b} patches"
        )
    return (
        p.reshape(grid_h, grid_w, wh, ww, c)
        .transpose(0, 2, 1, 3, 4)
        .reshape(grid_h * wh, grid_w * ww, c)
    )


@dataclass(frozen=True)
class PatchConfig:
    """Validated square-window patch layout for a fixed image shape."""

    window: int
    in_height: int
    in_width: int
    channels: int

    def __post_init__(self) -> None:
        for field in ("window", "in_height", "in_width", "channels"):
            if getattr(self, field) < 1:
                raise ShapeError(f"PatchConfig.{field} must be positive")
        if self.in_height % self.window or self.in_width % self.window:
            raise ShapeError(
                f"image {self.in_height}x{self.in_width} is not divisible by "
                f"window {self.window}"
            )

    @property
    def grid_h(self) -> int:
        return self.in_height // self.window

    @property
    def grid_w(self) -> int:
        return self.in_width // self.window

    @property
    def patch_count(self) -> int:
        return self.grid_h * self.grid_w

    def embed(self, x: np.ndarray) -> np.ndarray:
        x = _check_image(x)
        if x.shape != (self.in_height, self.in_width, self.channels):
            raise ShapeError(
                f"image shape {x.shape} does not match configured "
                f"{(self.in_height, self.in_width, self.channels)}"
            )
        return embed(x, self.window)

    def inverse(self, p: np.ndarray) -> np.ndarray:
        return inverse_embed(p, self.grid_h, self.grid_w)


def mirror_index(n: int, total: int) -> np.ndarray:
    """Source indices that extend a length-``n`` axis to ``total`` samples by
    edge-inclusive reflection (period ``2n``): 0,1,...,n-1,n-1,...,1,0,0,1,...
    """
    if n < 1 or total < n:
        raise ShapeError(f"cannot mirror a length-{n} axis to {total} samples")
    k = np.arange(total) % (2 * n)
    return np.where(k < n, k, 2 * n - 1 - k)


def mirror_pad(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Extend an image to ``out_h x out_w`` by mirror reflection at the bottom
    and right edges."""
    x = _check_image(x)
    h, w, _ = x.shape
    return x[mirror_index(h, out_h)][:, mirror_index(w, out_w)]


def mirror_pad_adjoint(g: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
    """Exact adjoint of :func:`mirror_pad`: scatter-add padded rows/columns
    back onto their source pixels."""
    g = _check_image(g, "gradient")
    out_h, out_w, c = g.shape
    rows = np.zeros((in_h, out_w, c), dtype=g.dtype)
    np.add.at(rows, mirror_index(in_h, out_h), g)
    cols = np.zeros((in_w, in_h, c), dtype=g.dtype)
    np.add.at(cols, mirror_index(in_w, out_w), rows.swapaxes(0, 1))
    return cols.swapaxes(0, 1)


def crop(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Keep the top-left ``out_h x out_w`` region."""
    x = _check_image(x)
    h, w, _ = x.shape
    if out_h > h or out_w > w:
        raise ShapeError(f"cannot crop {h}x{w} to larger {out_h}x{out_w}")
    return x[:out_h, :out_w]


def crop_adjoint(g: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
    """Exact adjoint of :func:`crop`: zero-pad back to ``in_h x in_w``."""
    g = _check_image(g, "gradient")
    h, w, c = g.shape
    if h > in_h or w > in_w:
        raise ShapeError(f"cropped shape {g.shape[:2]} exceeds original {in_h}x{in_w}")
    out = np.zeros((in_h, in_w, c), dtype=g.dtype)
    out[:h, :w] = g
    return out
