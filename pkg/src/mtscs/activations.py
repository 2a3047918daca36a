"""Pointwise activations with hand-written derivatives.

Each activation owns its (possibly empty) parameter dict and reports exact
input/parameter gradients through ``vjp``, so the training loop never needs
numeric differentiation.  New kinds plug in through ``ACTIVATIONS``; the
shipped ``mhg`` entry is a per-channel learnable gated unit
``x * sigmoid(scale * x + shift)`` acting along the last tensor mode, a
registry slot meant to be swappable for richer modulation functions.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Activation:
    """Base interface: a pointwise map with named learnable parameters."""

    kind = "base"

    def __init__(self, channels: int, dtype=np.float64):
        self.channels = int(channels)
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim < 1 or x.shape[-1] != self.channels:
            raise ShapeError(
                f"{self.kind} activation expects {self.channels} channels in the "
                f"last mode, got shape {x.shape}"
            )
        return x

    def __call__(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def vjp(self, x: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        """Gradient of ``sum(g * self(x))`` with respect to ``x`` and to each
        parameter, evaluated at the forward input ``x``."""
        raise NotImplementedError


class Identity(Activation):
    kind = "identity"

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self._check(x)

    def vjp(self, x, g):
        self._check(x)
        return np.asarray(g), {}


class Relu(Activation):
    kind = "relu"

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(self._check(x), 0.0)

    def vjp(self, x, g):
        x = self._check(x)
        return np.asarray(g) * (x > 0), {}


class GatedUnit(Activation):
    """Learnable gate ``x * sigmoid(scale * x + shift)`` per channel.

    ``scale`` starts at 1 and ``shift`` at 0, so the initial map is the
    sigmoid-weighted identity (a smooth, monotone squashing); both vectors
    are trained along with the operator factors.
    """

    kind = "mhg"

    def __init__(self, channels: int, dtype=np.float64):
        super().__init__(channels, dtype)
        self.params = {
            "scale": np.ones(channels, dtype=dtype),
            "shift": np.zeros(channels, dtype=dtype),
        }

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = self._check(x)
        u = self.params["scale"] * x + self.params["shift"]
        return x * _sigmoid(u)

    def vjp(self, x, g):
        x = self._check(x)
        g = np.asarray(g)
        a = self.params["scale"]
        u = a * x + self.params["shift"]
        s = _sigmoid(u)
        ds = s * (1.0 - s)
        gx = g * (s + x * ds * a)
        reduce_axes = tuple(range(x.ndim - 1))
        grad_scale = np.sum(g * x * x * ds, axis=reduce_axes)
        grad_shift = np.sum(g * x * ds, axis=reduce_axes)
        return gx, {"scale": grad_scale, "shift": grad_shift}


ACTIVATIONS = {
    "identity": Identity,
    "relu": Relu,
    "mhg": GatedUnit,
}


def make_activation(kind: str, channels: int, dtype=np.float64) -> Activation:
    try:
        cls = ACTIVATIONS[kind]
    except KeyError:
        raise ConfigError(
            f"unknown activation {kind!r}; available: {sorted(ACTIVATIONS)}"
        ) from None
    return cls(channels, dtype)
