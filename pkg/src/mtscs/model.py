"""Compressive-sensing pipeline: learned sensing, back-projection, refinement.

``CsModel`` chains three stages, all built from the same operator family:

* ``sense``: a multiscale tensor-summation operator maps the image to a
  small measurement tensor.
* ``proxy``: measurements pass through a pointwise activation and then the
  exact adjoint of the sensing operator, giving a rough image-domain
  estimate.  The sensing factors are reused here, so they receive gradient
  from both stages.
* ``refine``: a stack of residual blocks, each four shape-preserving
  multiscale operators with activations after the first three.  The last
  layer of every block starts with zeroed channel factors, so each block is
  exactly the identity at initialization.

``backward`` implements reverse-mode differentiation of
``recon_weight * mse(recon, target) + proxy_weight * mse(proxy, target)``
by hand, returning a flat name-to-array gradient dict aligned with
``params()``.
"""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .activations import Activation, make_activation
from .errors import ConfigError, ShapeError
from .operators import MtsOperator


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes {a.shape} and {b.shape} differ")
    return float(np.mean((a - b) ** 2))


def _op_slots(prefix: str, op: MtsOperator):
    """Yield (name, container, key) for every factor matrix of an operator."""
    for si, sp in enumerate(op.scales):
        for ti, mats in enumerate(sp.gts.terms):
            for mi in range(len(mats)):
                yield f"{prefix}.s{si}.t{ti}.m{mi}", mats, mi


def _act_slots(prefix: str, act: Activation):
    for pname in sorted(act.params):
        yield f"{prefix}.{pname}", act.params, pname


def _op_grad_items(prefix: str, nested):
    for si, per_scale in enumerate(nested):
        for ti, per_term in enumerate(per_scale):
            for mi, g in enumerate(per_term):
                yield f"{prefix}.s{si}.t{ti}.m{mi}", g


def _add_nested(a, b):
    return [
        [[ga + gb for ga, gb in zip(ta, tb)] for ta, tb in zip(sa, sb)]
        for sa, sb in zip(a, b)
    ]


class MtsBlock:
    """Residual refinement block of four shape-preserving multiscale layers."""

    def __init__(self, layers: list[MtsOperator], acts: list[Activation]):
        if len(layers) != 4 or len(acts) != 3:
            raise ConfigError("a refinement block has 4 layers and 3 activations")
        for i in range(3):
            if layers[i].out_shape != layers[i + 1].in_shape:
                raise ShapeError(
                    f"block layer {i} output {layers[i].out_shape} does not feed "
                    f"layer {i + 1} input {layers[i + 1].in_shape}"
                )
            if acts[i].channels != layers[i].out_shape[2]:
                raise ShapeError(
                    f"block activation {i} has {acts[i].channels} channels, layer "
                    f"emits {layers[i].out_shape[2]}"
                )
        if layers[3].out_shape != layers[0].in_shape:
            raise ShapeError(
                f"block output {layers[3].out_shape} does not match its input "
                f"{layers[0].in_shape}; the residual sum needs equal shapes"
            )
        self.layers = layers
        self.acts = acts

    @classmethod
    def build(
        cls,
        in_shape: tuple[int, int, int],
        windows: list[int],
        *,
        num_terms: int = 1,
        hidden_channels: int | None = None,
        act_kind: str = "mhg",
        rng: np.random.Generator | None = None,
        dtype=np.float64,
    ) -> "MtsBlock":
        if rng is None:
            rng = np.random.default_rng()
        h, w, c = in_shape
        hidden = c if hidden_channels is None else int(hidden_channels)
        widths = [c, hidden, hidden, hidden, c]
        layers = []
        for i in range(4):
            layers.append(
                MtsOperator.build(
                    (h, w, widths[i]),
                    windows,
                    cr=1.0,
                    num_terms=num_terms,
                    out_channels=widths[i + 1],
                    rng=rng,
                    dtype=dtype,
                )
            )
        # Zero only the channel-mode factor of the last layer: the block then
        # contributes exactly nothing at initialization, while the spatial
        # factors keep nonzero values so gradients can flow from step one
        # (zeroing every factor would pin all of them at zero gradient).
        for sp in layers[3].scales:
            for mats in sp.gts.terms:
                mats[2] = np.zeros_like(mats[2])
        acts = [make_activation(act_kind, widths[i + 1], dtype) for i in range(3)]
        return cls(layers, acts)

    @property
    def in_shape(self) -> tuple[int, int, int]:
        return self.layers[0].in_shape

    def forward(self, x: np.ndarray, cache: list | None = None) -> np.ndarray:
        x = np.asarray(x)
        if x.shape != self.in_shape:
            raise ShapeError(f"block input {x.shape} != expected {self.in_shape}")
        h = x
        for i, layer in enumerate(self.layers):
            y = layer.forward(h)
            if cache is not None:
                cache.append((h, y))
            h = self.acts[i](y) if i < 3 else y
        return x + h

    def vjp(self, cache: list, g: np.ndarray):
        """Backpropagate through the block given the forward cache.

        Returns ``(grad_input, layer_factor_grads, act_param_grads)``.
        """
        g_h = np.asarray(g)
        layer_grads: list = [None] * 4
        act_grads: list = [None] * 3
        for i in reversed(range(4)):
            x_in, y = cache[i]
            if i < 3:
                g_y, ag = self.acts[i].vjp(y, g_h)
                act_grads[i] = ag
            else:
                g_y = g_h
            layer_grads[i] = self.layers[i].vjp_params_forward(x_in, g_y)
            g_h = self.layers[i].adjoint(g_y)
        return g + g_h, layer_grads, act_grads

    def with_in_shape(self, spatial: tuple[int, int]) -> "MtsBlock":
        return MtsBlock([la.with_in_shape(spatial) for la in self.layers], self.acts)

    def param_count(self) -> int:
        n = sum(layer.param_count() for layer in self.layers)
        n += sum(p.size for act in self.acts for p in act.params.values())
        return n


class CsModel:
    """Full sensing / back-projection / refinement pipeline for one image shape."""

    def __init__(self, encoder: MtsOperator, preact: Activation, blocks: list[MtsBlock]):
        if preact.channels != encoder.out_shape[2]:
            raise ShapeError(
                f"pre-adjoint activation has {preact.channels} channels, "
                f"measurements have {encoder.out_shape[2]}"
            )
        for i, blk in enumerate(blocks):
            if blk.in_shape != encoder.in_shape:
                raise ShapeError(
                    f"block {i} expects {blk.in_shape}, encoder input is "
                    f"{encoder.in_shape}"
                )
        self.encoder = encoder
        self.preact = preact
        self.blocks = list(blocks)

    @classmethod
    def build(
        cls,
        in_shape: tuple[int, int, int],
        *,
        cr: float,
        encoder_windows: list[int],
        refine_windows: list[int],
        encoder_terms: int = 1,
        refine_terms: int = 1,
        num_blocks: int = 0,
        activation: str = "mhg",
        block_activation: str = "mhg",
        hidden_channels: int | None = None,
        window_rule: str = "per_mode",
        rng: np.random.Generator | None = None,
        dtype=np.float64,
    ) -> "CsModel":
        if rng is None:
            rng = np.random.default_rng()
        if num_blocks < 0:
            raise ConfigError(f"num_blocks must be >= 0, got {num_blocks}")
        c = in_shape[2]
        encoder = MtsOperator.build(
            in_shape,
            encoder_windows,
            cr=cr,
            num_terms=encoder_terms,
            out_channels=c,
            rng=rng,
            window_rule=window_rule,
            dtype=dtype,
        )
        preact = make_activation(activation, c, dtype)
        blocks = [
            MtsBlock.build(
                in_shape,
                refine_windows,
                num_terms=refine_terms,
                hidden_channels=hidden_channels,
                act_kind=block_activation,
                rng=rng,
                dtype=dtype,
            )
            for _ in range(num_blocks)
        ]
        return cls(encoder, preact, blocks)

    # -- stages --------------------------------------------------------------

    @property
    def in_shape(self) -> tuple[int, int, int]:
        return self.encoder.in_shape

    @property
    def dtype(self):
        return self.encoder.dtype

    def sense(self, image: np.ndarray) -> np.ndarray:
        return self.encoder.forward(image)

    def proxy(self, measurements: np.ndarray) -> np.ndarray:
        return self.encoder.adjoint(self.preact(measurements))

    def refine(self, estimate: np.ndarray) -> np.ndarray:
        r = estimate
        for blk in self.blocks:
            r = blk.forward(r)
        return r

    def forward(self, image: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Returns ``(measurements, proxy, reconstruction)``."""
        meas = self.sense(image)
        prox = self.proxy(meas)
        return meas, prox, self.refine(prox)

    def with_in_shape(self, spatial: tuple[int, int]) -> "CsModel":
        """Rebind the pipeline to a new image height/width, sharing all
        parameter arrays."""
        return CsModel(
            self.encoder.with_in_shape(spatial),
            self.preact,
            [blk.with_in_shape(spatial) for blk in self.blocks],
        )

    # -- parameters ------------------------------------------------------------

    def _slots(self):
        yield from _op_slots("enc", self.encoder)
        yield from _act_slots("preact", self.preact)
        for bi, blk in enumerate(self.blocks):
            for li, layer in enumerate(blk.layers):
                yield from _op_slots(f"blk{bi}.l{li}", layer)
            for ai, act in enumerate(blk.acts):
                yield from _act_slots(f"blk{bi}.a{ai}", act)

    def params(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, cont[key]) for name, cont, key in self._slots())

    def set_params(self, values: dict[str, np.ndarray]) -> None:
        slots = list(self._slots())
        unknown = set(values) - {name for name, _, _ in slots}
        if unknown:
            raise ShapeError(f"unknown parameter names: {sorted(unknown)}")
        for name, cont, key in slots:
            try:
                new = values[name]
            except KeyError:
                raise ShapeError(f"missing parameter {name!r}") from None
            if new.shape != cont[key].shape:
                raise ShapeError(
                    f"parameter {name!r} has shape {new.shape}, expected "
                    f"{cont[key].shape}"
                )
            cont[key] = np.asarray(new, dtype=cont[key].dtype)

    def param_count(self) -> int:
        return sum(p.size for p in self.params().values())

    def param_summary(self) -> "OrderedDict[str, int]":
        out: OrderedDict[str, int] = OrderedDict()
        out["encoder"] = self.encoder.param_count()
        out["preact"] = sum(p.size for p in self.preact.params.values())
        for bi, blk in enumerate(self.blocks):
            out[f"block_{bi}"] = blk.param_count()
        out["total"] = self.param_count()
        return out

    # -- training loss and gradients -------------------------------------------

    def loss(
        self,
        image: np.ndarray,
        target: np.ndarray,
        *,
        proxy_weight: float = 0.1,
        recon_weight: float = 1.0,
    ) -> float:
        _, prox, recon = self.forward(image)
        return recon_weight * mse(recon, target) + proxy_weight * mse(prox, target)

    def backward(
        self,
        image: np.ndarray,
        target: np.ndarray,
        *,
        proxy_weight: float = 0.1,
        recon_weight: float = 1.0,
    ):
        """Loss plus exact gradients for every learnable parameter.

        Returns ``(loss, grads, outputs)`` where ``grads`` maps parameter
        names (as in :meth:`params`) to arrays and ``outputs`` is the
        ``(measurements, proxy, reconstruction)`` triple of the forward pass.
        """
        image = np.asarray(image, dtype=self.dtype)
        target = np.asarray(target, dtype=self.dtype)
        if target.shape != self.in_shape:
            raise ShapeError(
                f"target shape {target.shape} != model input {self.in_shape}"
            )

        meas = self.encoder.forward(image)
        z = self.preact(meas)
        prox = self.encoder.adjoint(z)
        caches = []
        r = prox
        for blk in self.blocks:
            cache: list = []
            r = blk.forward(r, cache)
            caches.append(cache)
        recon = r

        diff_r = recon - target
        diff_p = prox - target
        loss = recon_weight * float(np.mean(diff_r**2)) + proxy_weight * float(
            np.mean(diff_p**2)
        )

        grads: dict[str, np.ndarray] = {}
        g = (2.0 * recon_weight / diff_r.size) * diff_r
        for bi in reversed(range(len(self.blocks))):
            g, layer_grads, act_grads = self.blocks[bi].vjp(caches[bi], g)
            for li, nested in enumerate(layer_grads):
                grads.update(_op_grad_items(f"blk{bi}.l{li}", nested))
            for ai, ag in enumerate(act_grads):
                for pname, pg in ag.items():
                    grads[f"blk{bi}.a{ai}.{pname}"] = pg

        g_proxy = g + (2.0 * proxy_weight / diff_p.size) * diff_p
        enc_grads = self.encoder.vjp_params_adjoint(z, g_proxy)
        g_z = self.encoder.forward(g_proxy)
        g_meas, preact_grads = self.preact.vjp(meas, g_z)
        enc_grads = _add_nested(enc_grads, self.encoder.vjp_params_forward(image, g_meas))
        grads.update(_op_grad_items("enc", enc_grads))
        for pname, pg in preact_grads.items():
            grads[f"preact.{pname}"] = pg

        return loss, grads, (meas, prox, recon)
