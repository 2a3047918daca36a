"""Dense tensor arithmetic used by the sensing operators.

Conventions, fixed package-wide:

* Tensors are plain ``numpy.ndarray`` values in row-major (C) layout.
* ``vectorize`` flattens in row-major order.  Under that convention

      vectorize(x ×_0 A_0 ×_1 A_1 ... ×_{J-1} A_{J-1})
          == kron(A_0, A_1, ..., A_{J-1}) @ vectorize(x)

  with the Kronecker factors in mode order.  Every materialization oracle
  in the operator layer relies on exactly this identity.
* No implicit broadcasting: shape mismatches raise :class:`ShapeError`
  rather than being silently stretched.
"""

from __future__ import annotations

from functools import reduce

import numpy as np

from .errors import ShapeError


def _check_tensor(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    if not isinstance(x, np.ndarray):
        x = np.asarray(x)
    if x.ndim == 0:
        raise ShapeError(f"{name} must have at least one mode, got a scalar")
    return x


def _check_matrix(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    if not isinstance(m, np.ndarray):
        m = np.asarray(m)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-dimensional, got shape {m.shape}")
    return m


def unfold(x: np.ndarray, mode: int) -> np.ndarray:
    """Matricize ``x`` along ``mode``.

    Row ``i`` of the result holds the slice ``x[..., i, ...]`` flattened in
    row-major order with the remaining modes kept in their original relative
    order.  ``fold`` is the exact inverse.
    """
    x = _check_tensor(x)
    if not 0 <= mode < x.ndim:
        raise ShapeError(f"mode {mode} out of range for a {x.ndim}-mode tensor")
    return np.moveaxis(x, mode, 0).reshape(x.shape[mode], -1)


def fold(mat: np.ndarray, mode: int, shape: tuple[int, ...]) -> np.ndarray:
    """Inverse of :func:`unfold`: rebuild a tensor of ``shape`` from its
    mode-``mode`` matricization."""
    mat = _check_matrix(mat)
    if not 0 <= mode < len(shape):
        raise ShapeError(f"mode {mode} out of range for shape {shape}")
    rest = tuple(s for i, s in enumerate(shape) if i != mode)
    expected = (shape[mode], int(np.prod(rest, dtype=np.int64)) if rest else 1)
    if mat.shape != expected:
        raise ShapeError(
            f"cannot fold matrix of shape {mat.shape} into shape {shape} "
            f"along mode {mode}; expected {expected}"
        )
    return np.moveaxis(mat.reshape((shape[mode],) + rest), 0, mode)


def mode_product(x: np.ndarray, m: np.ndarray, mode: int) -> np.ndarray:
    """Multiply tensor ``x`` by matrix ``m`` along ``mode``.

    Equals ``fold(m @ unfold(x, mode), mode, new_shape)`` where ``new_shape``
    replaces ``x.shape[mode]`` by ``m.shape[0]``.
    """
    x = _check_tensor(x)
    m = _check_matrix(m)
    if not 0 <= mode < x.ndim:
        raise ShapeError(f"mode {mode} out of range for a {x.ndim}-mode tensor")
    if m.shape[1] != x.shape[mode]:
        raise ShapeError(
            f"mode {mode} product: matrix has {m.shape[1]} columns but the "
            f"tensor mode has size {x.shape[mode]}"
        )
    return np.moveaxis(np.tensordot(m, x, axes=(1, mode)), 0, mode)


def vectorize(x: np.ndarray) -> np.ndarray:
    """Flatten ``x`` to a vector in row-major order."""
    return _check_tensor(x).reshape(-1)


def devectorize(v: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Inverse of :func:`vectorize` for the given shape."""
    v = np.asarray(v)
    if v.ndim != 1:
        raise ShapeError(f"expected a vector, got shape {v.shape}")
    n = int(np.prod(shape, dtype=np.int64))
    if v.size != n:
        raise ShapeError(f"vector of length {v.size} does not fill shape {shape}")
    return v.reshape(shape)


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product of two matrices."""
    return np.kron(_check_matrix(a, "a"), _check_matrix(b, "b"))


def kron_all(mats: list[np.ndarray]) -> np.ndarray:
    """Left-to-right Kronecker product of a list of matrices."""
    if not mats:
        raise ShapeError("kron_all needs at least one matrix")
    return reduce(kron, [_check_matrix(m) for m in mats])


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = _check_matrix(a, "a")
    b = _check_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ ({a.shape} @ {b.shape})")
    return a @ b


def transpose(m: np.ndarray) -> np.ndarray:
    return _check_matrix(m).T


def add(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Elementwise sum; the shapes must match exactly (no broadcasting)."""
    x = _check_tensor(x, "x")
    y = _check_tensor(y, "y")
    if x.shape != y.shape:
        raise ShapeError(f"add: shapes {x.shape} and {y.shape} differ")
    return x + y


def scale(x: np.ndarray, alpha: float) -> np.ndarray:
    return _check_tensor(x) * float(alpha)


def dot(x: np.ndarray, y: np.ndarray) -> float:
    """Euclidean inner product of two equally shaped tensors."""
    x = _check_tensor(x, "x")
    y = _check_tensor(y, "y")
    if x.shape != y.shape:
        raise ShapeError(f"dot: shapes {x.shape} and {y.shape} differ")
    return float(np.vdot(x, y).real)


def frobenius_norm(x: np.ndarray) -> float:
    return float(np.linalg.norm(_check_tensor(x).reshape(-1)))
