"""Structured linear sensing operators built from sums of mode products.

Two layers:

* :class:`GtsOperator` -- a sum of ``num_terms`` separable terms, each a
  chain of per-mode matrix products.  Its vectorized matrix is the sum of
  the Kronecker products of the per-term factors (row-major ``vectorize``
  convention, factors in mode order).
* :class:`MtsOperator` -- applies an independent :class:`GtsOperator` per
  spatial scale to a non-overlapping patch decomposition of the image and
  sums the per-scale results.  Each scale mirror-pads the input to its own
  window multiple, maps every ``w x w x C_in`` patch to an
  ``out_h x out_w x C_out`` patch, reassembles, and crops to the common
  measurement shape, so the vectorized operator is a sum over scales of
  (permutation x block-diagonal Kronecker x permutation) matrices.

``materialize`` builds that dense matrix from index arithmetic and explicit
Kronecker products, deliberately not reusing the tensor evaluation path, so
the two routes can check each other.

Output window sizes realizing a requested compression ratio come from
:func:`plan_output_windows`; see its docstring for the three rules.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError, ShapeError
from .patching import (
    crop,
    crop_adjoint,
    embed,
    inverse_embed,
    mirror_index,
    mirror_pad,
    mirror_pad_adjoint,
)
from .tensorcore import kron_all, mode_product, unfold


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _sum_terms(terms: list[list[np.ndarray]], x: np.ndarray, first_mode: int) -> np.ndarray:
    """Sum over terms of ``x`` multiplied along consecutive modes starting at
    ``first_mode`` by that term's factor matrices."""
    acc = None
    for mats in terms:
        r = x
        for j, m in enumerate(mats):
            r = mode_product(r, m, first_mode + j)
        acc = r if acc is None else acc + r
    return acc


def _term_factor_grads(
    mats: list[np.ndarray], x: np.ndarray, g: np.ndarray, first_mode: int
) -> list[np.ndarray]:
    """Gradient of ``sum(g * term(x))`` with respect to each factor of one
    separable term.

    For factor ``j``, apply every other factor to ``x`` first; the gradient
    is then the mode-``j`` unfolding of ``g`` times the transposed unfolding
    of that partial product.
    """
    grads = []
    for j in range(len(mats)):
        z = x
        for k, m in enumerate(mats):
            if k != j:
                z = mode_product(z, m, first_mode + k)
        gu = unfold(g, first_mode + j)
        zu = unfold(z, first_mode + j)
        grads.append(gu @ zu.T)
    return grads


class GtsOperator:
    """Sum of separable multi-mode linear maps on a fixed tensor shape.

    ``terms`` is a list of factor lists; term ``t`` maps an
    ``input_shape`` tensor to an ``output_shape`` tensor by multiplying
    mode ``j`` with ``terms[t][j]`` (shape ``output_shape[j] x input_shape[j]``).
    """

    def __init__(
        self,
        terms: list[list[np.ndarray]],
        input_shape: tuple[int, ...],
        output_shape: tuple[int, ...],
    ):
        input_shape = tuple(int(s) for s in input_shape)
        output_shape = tuple(int(s) for s in output_shape)
        if len(input_shape) != len(output_shape):
            raise ShapeError(
                f"input shape {input_shape} and output shape {output_shape} "
                f"must have the same number of modes"
            )
        if any(s < 1 for s in input_shape + output_shape):
            raise ShapeError("all mode sizes must be positive")
        if not terms:
            raise ShapeError("operator needs at least one term")
        j = len(input_shape)
        for t, mats in enumerate(terms):
            if len(mats) != j:
                raise ShapeError(f"term {t} has {len(mats)} factors, expected {j}")
            for k, m in enumerate(mats):
                want = (output_shape[k], input_shape[k])
                if m.ndim != 2 or m.shape != want:
                    raise ShapeError(
                        f"term {t} mode {k} factor has shape {m.shape}, expected {want}"
                    )
        self.terms = [list(mats) for mats in terms]
        self.input_shape = input_shape
        self.output_shape = output_shape

    @classmethod
    def random(
        cls,
        input_shape: tuple[int, ...],
        output_shape: tuple[int, ...],
        num_terms: int,
        rng: np.random.Generator,
        dtype=np.float64,
    ) -> "GtsOperator":
        """Draw every factor i.i.d. Gaussian with standard deviation
        ``1/sqrt(input_shape[j])`` for mode ``j``."""
        if num_terms < 1:
            raise ConfigError(f"num_terms must be >= 1, got {num_terms}")
        terms = []
        for _ in range(num_terms):
            mats = []
            for mj, nj in zip(output_shape, input_shape):
                mats.append(
                    (rng.standard_normal((mj, nj)) / math.sqrt(nj)).astype(dtype)
                )
            terms.append(mats)
        return cls(terms, input_shape, output_shape)

    @property
    def num_terms(self) -> int:
        return len(self.terms)

    @property
    def dtype(self):
        return self.terms[0][0].dtype

    def forward(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s)
        if s.shape != self.input_shape:
            raise ShapeError(f"input shape {s.shape} != operator {self.input_shape}")
        return _sum_terms(self.terms, s, 0)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y)
        if y.shape != self.output_shape:
            raise ShapeError(f"input shape {y.shape} != operator {self.output_shape}")
        return _sum_terms([[m.T for m in mats] for mats in self.terms], y, 0)

    def materialize(self) -> np.ndarray:
        """Dense matrix ``sum_t kron(factors of term t)`` acting on
        row-major-vectorized tensors."""
        return sum(kron_all(mats) for mats in self.terms)

    def param_count(self) -> int:
        return sum(m.size for mats in self.terms for m in mats)

    def vjp_params(self, s: np.ndarray, g: np.ndarray) -> list[list[np.ndarray]]:
        """Per-term, per-mode factor gradients of ``sum(g * forward(s))``."""
        return [_term_factor_grads(mats, s, g, 0) for mats in self.terms]

    def __repr__(self) -> str:
        return (
            f"GtsOperator({self.input_shape} -> {self.output_shape}, "
            f"terms={self.num_terms})"
        )


class ScaleSpec:
    """One scale of a multiscale operator: a window size plus the per-patch
    tensor-summation map ``(window, window, C_in) -> (out_h, out_w, C_out)``."""

    def __init__(self, window: int, out_h: int, out_w: int, gts: GtsOperator):
        window = int(window)
        out_h, out_w = int(out_h), int(out_w)
        if window < 1 or out_h < 1 or out_w < 1:
            raise ShapeError("window and output window sizes must be positive")
        if len(gts.input_shape) != 3:
            raise ShapeError("per-scale operator must act on 3-mode patches")
        if gts.input_shape[:2] != (window, window):
            raise ShapeError(
                f"per-scale operator input {gts.input_shape} does not match "
                f"window {window}"
            )
        if gts.output_shape[:2] != (out_h, out_w):
            raise ShapeError(
                f"per-scale operator output {gts.output_shape} does not match "
                f"output window {(out_h, out_w)}"
            )
        self.window = window
        self.out_h = out_h
        self.out_w = out_w
        self.gts = gts

    @property
    def in_channels(self) -> int:
        return self.gts.input_shape[2]

    @property
    def out_channels(self) -> int:
        return self.gts.output_shape[2]

    def __repr__(self) -> str:
        return (
            f"ScaleSpec(window={self.window}, out={self.out_h}x{self.out_w}, "
            f"terms={self.gts.num_terms})"
        )


def plan_output_windows(
    windows: list[int],
    cr: float,
    rule: str = "per_mode",
    slack: float = 0.05,
) -> list[tuple[int, int]]:
    """Choose per-scale output window sizes realizing compression ratio ``cr``.

    All rules keep the output/input ratio identical across scales so the
    per-scale measurement grids line up; candidates violating that
    integrality are rejected.  Writing ``w1`` for the smallest window:

    * ``per_mode`` (default): take the square rounding
      ``s = round(w1 * sqrt(cr))`` when its ratio ``s^2/w1^2`` is within
      ``slack`` (relative) of ``cr``; otherwise search integer pairs
      ``(a, b)`` in ``[1, w1]^2`` minimizing ``|a*b/w1^2 - cr|`` with ties
      broken toward square, so e.g. ``cr=0.10`` at ``w1=20`` yields the
      exact ``5 x 8`` instead of the 10%-off ``6 x 6``.
    * ``square``: always the square rounding, whatever ratio results.
    * ``literal``: per-scale ``round(sqrt(w * cr))``; fails loudly when the
      resulting ratios differ across scales (they usually do for more than
      one scale), kept only for compatibility.
    """
    windows = [int(w) for w in windows]
    if not windows or any(w < 1 for w in windows):
        raise ConfigError(f"windows must be positive integers, got {windows}")
    if any(a >= b for a, b in zip(windows, windows[1:])):
        raise ConfigError(f"windows must be strictly increasing, got {windows}")
    if not 0 < cr <= 1:
        raise ConfigError(f"compression ratio must be in (0, 1], got {cr}")
    w1 = windows[0]

    def consistent(v: int) -> bool:
        return all((w * v) % w1 == 0 for w in windows)

    def pairs(a: int, b: int) -> list[tuple[int, int]]:
        return [(w * a // w1, w * b // w1) for w in windows]

    if rule == "literal":
        outs = [max(1, _round_half_up(math.sqrt(w * cr))) for w in windows]
        for w, o in zip(windows, outs):
            if o * w1 != outs[0] * w:
                raise ConfigError(
                    f"literal window rule gives ratio {o}/{w} at window {w} but "
                    f"{outs[0]}/{w1} at window {w1}; scales cannot be summed"
                )
        return [(o, o) for o in outs]

    if rule not in ("per_mode", "square"):
        raise ConfigError(f"unknown window rule {rule!r}")

    s = min(w1, max(1, _round_half_up(w1 * math.sqrt(cr))))
    if rule == "square":
        if not consistent(s):
            raise ConfigError(
                f"square output window {s} is not an integer multiple across "
                f"windows {windows}"
            )
        return pairs(s, s)

    if consistent(s) and abs(s * s / (w1 * w1) - cr) <= slack * cr:
        return pairs(s, s)
    cands = [v for v in range(1, w1 + 1) if consistent(v)]
    if not cands:
        raise ConfigError(f"no feasible output window for windows {windows}")
    best = min(
        ((a, b) for a in cands for b in cands),
        key=lambda ab: (abs(ab[0] * ab[1] / (w1 * w1) - cr), abs(ab[0] - ab[1]), ab),
    )
    return pairs(*best)


class MtsOperator:
    """Multiscale sum of patch-wise tensor-summation maps on an image.

    Every scale independently mirror-pads the ``in_shape`` image up to a
    multiple of its window, maps each patch through its own
    :class:`GtsOperator`, reassembles the per-patch outputs, and crops to the
    common measurement shape; the scales' contributions are summed.  The
    measurement spatial size is ``round(side * out_window / window)`` of the
    original (not padded) side, so the achieved compression ratio tracks the
    requested one as closely as the window arithmetic allows.
    """

    def __init__(
        self,
        in_shape: tuple[int, int, int],
        scales: list[ScaleSpec],
        requested_cr: float = 1.0,
        window_rule: str = "per_mode",
    ):
        in_shape = tuple(int(s) for s in in_shape)
        if len(in_shape) != 3 or any(s < 1 for s in in_shape):
            raise ShapeError(f"in_shape must be (H, W, C) positive, got {in_shape}")
        if not scales:
            raise ConfigError("operator needs at least one scale")
        wins = [sp.window for sp in scales]
        if any(a >= b for a, b in zip(wins, wins[1:])):
            raise ConfigError(f"scale windows must be strictly increasing, got {wins}")
        c_in = in_shape[2]
        c_out = scales[0].out_channels
        w1, oh1, ow1 = scales[0].window, scales[0].out_h, scales[0].out_w
        for sp in scales:
            if sp.in_channels != c_in:
                raise ShapeError(
                    f"scale window {sp.window} expects {sp.in_channels} input "
                    f"channels, image has {c_in}"
                )
            if sp.out_channels != c_out:
                raise ShapeError("all scales must share the output channel count")
            if sp.out_h * w1 != oh1 * sp.window or sp.out_w * w1 != ow1 * sp.window:
                raise ConfigError(
                    f"scale window {sp.window} output {sp.out_h}x{sp.out_w} does "
                    f"not preserve the base ratio {oh1}/{w1} x {ow1}/{w1}"
                )
        h, w = in_shape[:2]
        self.in_shape = in_shape
        self.scales = list(scales)
        self.requested_cr = float(requested_cr)
        self.window_rule = window_rule
        self.out_channels = c_out
        self._m_h = max(1, _round_half_up(h * oh1 / w1))
        self._m_w = max(1, _round_half_up(w * ow1 / w1))
        for sp in scales:
            gh, gw = self._grid(sp)
            if gh * sp.out_h < self._m_h or gw * sp.out_w < self._m_w:
                raise ShapeError(
                    f"scale window {sp.window} produces a "
                    f"{gh * sp.out_h}x{gw * sp.out_w} grid, smaller than the "
                    f"measurement size {self._m_h}x{self._m_w}"
                )

    @classmethod
    def build(
        cls,
        in_shape: tuple[int, int, int],
        windows: list[int],
        *,
        cr: float = 1.0,
        num_terms: int = 1,
        out_channels: int | None = None,
        rng: np.random.Generator | None = None,
        window_rule: str = "per_mode",
        dtype=np.float64,
    ) -> "MtsOperator":
        """Construct with randomly initialized factors (deterministic for a
        seeded ``rng``; factors are drawn scale-major, term-major, mode-major)."""
        in_shape = tuple(int(s) for s in in_shape)
        if len(in_shape) != 3:
            raise ShapeError(f"in_shape must be (H, W, C), got {in_shape}")
        if rng is None:
            rng = np.random.default_rng()
        c_out = in_shape[2] if out_channels is None else int(out_channels)
        pairs = plan_output_windows(windows, cr, window_rule)
        scales = []
        for w, (oh, ow) in zip(windows, pairs):
            gts = GtsOperator.random(
                (w, w, in_shape[2]), (oh, ow, c_out), num_terms, rng, dtype
            )
            scales.append(ScaleSpec(w, oh, ow, gts))
        return cls(in_shape, scales, requested_cr=cr, window_rule=window_rule)

    def with_in_shape(self, spatial: tuple[int, int]) -> "MtsOperator":
        """Same factors rebound to a new image height/width (factor arrays are
        shared, not copied)."""
        h, w = int(spatial[0]), int(spatial[1])
        return MtsOperator(
            (h, w, self.in_shape[2]),
            self.scales,
            requested_cr=self.requested_cr,
            window_rule=self.window_rule,
        )

    # -- geometry -----------------------------------------------------------

    def _padded(self, sp: ScaleSpec) -> tuple[int, int]:
        h, w = self.in_shape[:2]
        return (-(-h // sp.window) * sp.window, -(-w // sp.window) * sp.window)

    def _grid(self, sp: ScaleSpec) -> tuple[int, int]:
        hp, wp = self._padded(sp)
        return hp // sp.window, wp // sp.window

    @property
    def out_shape(self) -> tuple[int, int, int]:
        return (self._m_h, self._m_w, self.out_channels)

    @property
    def dtype(self):
        return self.scales[0].gts.dtype

    def measurement_count(self) -> int:
        return self._m_h * self._m_w * self.out_channels

    def input_size(self) -> int:
        h, w, c = self.in_shape
        return h * w * c

    def achieved_cr(self) -> float:
        return self.measurement_count() / self.input_size()

    def per_scale_cr(self) -> float:
        sp = self.scales[0]
        return (sp.out_h * sp.out_w) / (sp.window * sp.window)

    def param_count(self) -> int:
        return sum(sp.gts.param_count() for sp in self.scales)

    # -- evaluation ---------------------------------------------------------

    def _patches_in(self, sp: ScaleSpec, x: np.ndarray) -> np.ndarray:
        """Mirror-pad to this scale's multiple and split into patches."""
        h, w = self.in_shape[:2]
        hp, wp = self._padded(sp)
        if (hp, wp) != (h, w):
            x = mirror_pad(x, hp, wp)
        return embed(x, sp.window, sp.window)

    def _patches_in_adjoint(self, sp: ScaleSpec, p: np.ndarray) -> np.ndarray:
        gh, gw = self._grid(sp)
        img = inverse_embed(p, gh, gw)
        h, w = self.in_shape[:2]
        if img.shape[:2] != (h, w):
            img = mirror_pad_adjoint(img, h, w)
        return img

    def _patches_out(self, sp: ScaleSpec, y: np.ndarray) -> np.ndarray:
        """Zero-extend a measurement tensor to this scale's full grid and
        split into output-window patches (adjoint of reassemble-and-crop)."""
        gh, gw = self._grid(sp)
        full = crop_adjoint(y, gh * sp.out_h, gw * sp.out_w)
        return embed(full, sp.out_h, sp.out_w)

    def _patches_out_adjoint(self, sp: ScaleSpec, q: np.ndarray) -> np.ndarray:
        gh, gw = self._grid(sp)
        img = inverse_embed(q, gh, gw)
        return crop(img, self._m_h, self._m_w)

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.shape != self.in_shape:
            raise ShapeError(f"input shape {x.shape} != operator {self.in_shape}")
        acc = None
        for sp in self.scales:
            p = self._patches_in(sp, x)
            q = _sum_terms(sp.gts.terms, p, 1)
            y = self._patches_out_adjoint(sp, q)
            acc = y if acc is None else acc + y
        return np.ascontiguousarray(acc)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y)
        if y.shape != self.out_shape:
            raise ShapeError(f"input shape {y.shape} != operator output {self.out_shape}")
        acc = None
        for sp in self.scales:
            q = self._patches_out(sp, y)
            terms_t = [[m.T for m in mats] for mats in sp.gts.terms]
            p = _sum_terms(terms_t, q, 1)
            img = self._patches_in_adjoint(sp, p)
            acc = img if acc is None else acc + img
        return np.ascontiguousarray(acc)

    # -- parameter gradients --------------------------------------------------

    def vjp_params_forward(self, x: np.ndarray, g: np.ndarray) -> list[list[list[np.ndarray]]]:
        """Factor gradients of ``sum(g * forward(x))``, nested as
        ``[scale][term][mode]``."""
        x = np.asarray(x)
        g = np.asarray(g)
        if x.shape != self.in_shape or g.shape != self.out_shape:
            raise ShapeError(
                f"vjp shapes {x.shape}, {g.shape} do not match operator "
                f"{self.in_shape} -> {self.out_shape}"
            )
        out = []
        for sp in self.scales:
            p = self._patches_in(sp, x)
            gq = self._patches_out(sp, g)
            out.append([_term_factor_grads(mats, p, gq, 1) for mats in sp.gts.terms])
        return out

    def vjp_params_adjoint(self, y: np.ndarray, g: np.ndarray) -> list[list[list[np.ndarray]]]:
        """Factor gradients of ``sum(g * adjoint(y))``, nested as
        ``[scale][term][mode]``."""
        y = np.asarray(y)
        g = np.asarray(g)
        if y.shape != self.out_shape or g.shape != self.in_shape:
            raise ShapeError(
                f"vjp shapes {y.shape}, {g.shape} do not match operator adjoint "
                f"{self.out_shape} -> {self.in_shape}"
            )
        out = []
        for sp in self.scales:
            q = self._patches_out(sp, y)
            gp = self._patches_in(sp, g)
            scale_grads = []
            for mats in sp.gts.terms:
                tg = _term_factor_grads([m.T for m in mats], q, gp, 1)
                scale_grads.append([t.T for t in tg])
            out.append(scale_grads)
        return out

    # -- dense oracle ---------------------------------------------------------

    MATERIALIZE_LIMIT = 4096

    def materialize(self) -> np.ndarray:
        """Dense measurement matrix acting on the row-major-vectorized image.

        Built from index arithmetic plus per-scale Kronecker blocks rather
        than the patch/tensor evaluation path, so it serves as an independent
        reference:  for each scale, each patch contributes its summed
        Kronecker factor matrix, with columns gathered through the mirror-pad
        index map and rows kept only where the patch grid survives the final
        crop.
        """
        h, w, c = self.in_shape
        n = h * w * c
        if n > self.MATERIALIZE_LIMIT:
            raise ShapeError(
                f"refusing to materialize: input dimension {n} exceeds "
                f"{self.MATERIALIZE_LIMIT}"
            )
        m_h, m_w, co = self.out_shape
        p = np.zeros((self.measurement_count(), n), dtype=self.dtype)
        for sp in self.scales:
            win, oh, ow = sp.window, sp.out_h, sp.out_w
            hp, wp = self._padded(sp)
            gh, gw = hp // win, wp // win
            ridx = mirror_index(h, hp)
            cidx = mirror_index(w, wp)
            k = sum(kron_all(mats) for mats in sp.gts.terms)
            ii, jj, cc = np.meshgrid(
                np.arange(win), np.arange(win), np.arange(c), indexing="ij"
            )
            uu, vv, oo = np.meshgrid(
                np.arange(oh), np.arange(ow), np.arange(co), indexing="ij"
            )
            for gy in range(gh):
                for gx in range(gw):
                    cols = (
                        (ridx[gy * win + ii] * w + cidx[gx * win + jj]) * c + cc
                    ).reshape(-1)
                    gu = gy * oh + uu
                    gv = gx * ow + vv
                    keep = ((gu < m_h) & (gv < m_w)).reshape(-1)
                    if not keep.any():
                        continue
                    rows = ((gu * m_w + gv) * co + oo).reshape(-1)
                    np.add.at(p, (rows[keep][:, None], cols[None, :]), k[keep, :])
        return p

    def __repr__(self) -> str:
        return (
            f"MtsOperator({self.in_shape} -> {self.out_shape}, "
            f"windows={[sp.window for sp in self.scales]}, "
            f"terms={self.scales[0].gts.num_terms}, "
            f"cr={self.achieved_cr():.4f})"
        )
