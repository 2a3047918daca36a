"""Hand-written gradients verified against central finite differences and a
closed-form dense-matrix derivative."""

import numpy as np
import pytest
from conftest import tiny_model

from mtscs.activations import make_activation
from mtscs.model import CsModel
from mtscs.operators import GtsOperator, MtsOperator, ScaleSpec


def finite_difference(fn, arr, h=1e-6):
    """Central-difference gradient of scalar ``fn()`` with respect to ``arr``,
    perturbing the array in place."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn()
        flat[i] = orig - h
        fm = fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_rel_err(a, b, floor=1e-8):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max())


class TestOperatorVjps:
    def test_forward_factor_gradients_match_finite_differences(self):
        rng = np.random.default_rng(0)
        op = MtsOperator.build(
            (6, 6, 2), [2, 3], cr=0.25, num_terms=2, out_channels=2, rng=rng
        )
        x = rng.standard_normal(op.in_shape)
        g = rng.standard_normal(op.out_shape)
        analytic = op.vjp_params_forward(x, g)
        for si, sp in enumerate(op.scales):
            for ti, mats in enumerate(sp.gts.terms):
                for mi, mat in enumerate(mats):
                    fd = finite_difference(lambda: float(np.sum(g * op.forward(x))), mat)
                    assert max_rel_err(analytic[si][ti][mi], fd) < 1e-6

    def test_adjoint_factor_gradients_match_finite_differences(self):
        rng = np.random.default_rng(1)
        op = MtsOperator.build(
            (6, 6, 2), [2, 3], cr=0.25, num_terms=2, out_channels=2, rng=rng
        )
        y = rng.standard_normal(op.out_shape)
        g = rng.standard_normal(op.in_shape)
        analytic = op.vjp_params_adjoint(y, g)
        for si, sp in enumerate(op.scales):
            for ti, mats in enumerate(sp.gts.terms):
                for mi, mat in enumerate(mats):
                    fd = finite_difference(lambda: float(np.sum(g * op.adjoint(y))), mat)
                    assert max_rel_err(analytic[si][ti][mi], fd) < 1e-6

    def test_gts_vjp_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        op = GtsOperator.random((3, 4, 2), (2, 3, 2), 2, rng)
        s = rng.standard_normal((3, 4, 2))
        g = rng.standard_normal((2, 3, 2))
        analytic = op.vjp_params(s, g)
        for ti, mats in enumerate(op.terms):
            for mi, mat in enumerate(mats):
                fd = finite_difference(lambda: float(np.sum(g * op.forward(s))), mat)
                assert max_rel_err(analytic[ti][mi], fd) < 1e-7


class TestModelGradients:
    @pytest.mark.parametrize("kind", ["identity", "relu", "mhg"])
    def test_every_parameter_matches_finite_differences(self, kind):
        model = tiny_model(kind, seed=3)
        rng = np.random.default_rng(4)
        x = rng.uniform(0.0, 1.0, size=(8, 8, 3))
        target = rng.uniform(0.0, 1.0, size=(8, 8, 3))
        if kind == "relu":
            # keep measurements away from the kink so central differences are
            # valid; the margin is far larger than the perturbation h
            margin = float(np.abs(model.sense(x)).min())
            assert margin > 1e-3

        _, grads, _ = model.backward(x, target)
        params = model.params()
        assert set(grads) == set(params)

        worst = 0.0
        for name, arr in params.items():
            fd = finite_difference(lambda: model.loss(x, target), arr)
            err = max_rel_err(grads[name], fd)
            worst = max(worst, err)
            assert err < 1e-5, f"{kind}/{name}: rel err {err:.2e}"
        assert worst < 1e-5

    def test_block_gradients_are_exactly_zero_under_proxy_only_loss(self):
        # Refinement blocks are not ancestors of the proxy output, so a loss
        # with the reconstruction term disabled must give them zero gradient.
        model = tiny_model("mhg", seed=5)
        rng = np.random.default_rng(6)
        x = rng.uniform(0.0, 1.0, size=(8, 8, 3))
        target = rng.uniform(0.0, 1.0, size=(8, 8, 3))
        _, grads, _ = model.backward(x, target, recon_weight=0.0, proxy_weight=1.0)
        for name, g in grads.items():
            if name.startswith("blk"):
                assert not np.any(g), f"{name} received nonzero gradient"

    def test_zero_proxy_weight_matches_reconstruction_only_loss(self):
        model = tiny_model("mhg", seed=7)
        rng = np.random.default_rng(8)
        x = rng.uniform(0.0, 1.0, size=(8, 8, 3))
        target = rng.uniform(0.0, 1.0, size=(8, 8, 3))
        loss, grads, _ = model.backward(x, target, proxy_weight=0.0)
        _, _, recon = model.forward(x)
        assert loss == pytest.approx(float(np.mean((recon - target) ** 2)), rel=1e-12)
        fd = finite_difference(
            lambda: model.loss(x, target, proxy_weight=0.0),
            model.params()["enc.s0.t0.m0"],
        )
        assert max_rel_err(grads["enc.s0.t0.m0"], fd) < 1e-5

    def test_gradients_match_closed_form_from_materialized_matrix(self):
        # Linear pipeline (identity activation, no blocks), loss
        # mean((P^T P x - x)^2).  Because the dense matrix P is linear in each
        # factor entry, dP/dtheta is the matrix built with that factor
        # replaced by a unit indicator and every other term zeroed; the chain
        # rule then gives the gradient entirely through dense algebra.
        rng = np.random.default_rng(9)
        op = MtsOperator.build((6, 6, 1), [2, 3], cr=0.25, num_terms=2, rng=rng)
        model = CsModel(op, make_activation("identity", 1), [])
        x = rng.standard_normal((6, 6, 1))
        n = x.size
        p = op.materialize()
        xv = x.reshape(-1)
        r = p.T @ (p @ xv) - xv

        _, grads, _ = model.backward(x, x, recon_weight=0.0, proxy_weight=1.0)

        def unit_operator(si, ti, mi, row, col):
            scales = []
            for sj, sp in enumerate(op.scales):
                terms = []
                for tj, mats in enumerate(sp.gts.terms):
                    new = []
                    for mj, m in enumerate(mats):
                        if sj == si and tj == ti:
                            if mj == mi:
                                e = np.zeros_like(m)
                                e[row, col] = 1.0
                                new.append(e)
                            else:
                                new.append(m)
                        else:
                            new.append(np.zeros_like(m))
                    terms.append(new)
                gts = GtsOperator(terms, sp.gts.input_shape, sp.gts.output_shape)
                scales.append(ScaleSpec(sp.window, sp.out_h, sp.out_w, gts))
            return MtsOperator(op.in_shape, scales)

        for si, sp in enumerate(op.scales):
            for ti, mats in enumerate(sp.gts.terms):
                for mi, m in enumerate(mats):
                    name = f"enc.s{si}.t{ti}.m{mi}"
                    closed = np.zeros_like(m)
                    for row in range(m.shape[0]):
                        for col in range(m.shape[1]):
                            dp = unit_operator(si, ti, mi, row, col).materialize()
                            dproxy = dp.T @ (p @ xv) + p.T @ (dp @ xv)
                            closed[row, col] = (2.0 / n) * float(r @ dproxy)
                    assert max_rel_err(grads[name], closed) < 1e-9, name

    def test_backward_outputs_match_forward(self):
        model = tiny_model("mhg", seed=10)
        rng = np.random.default_rng(11)
        x = rng.uniform(0.0, 1.0, size=(8, 8, 3))
        target = rng.uniform(0.0, 1.0, size=(8, 8, 3))
        _, _, (meas, prox, recon) = model.backward(x, target)
        m2, p2, r2 = model.forward(x)
        np.testing.assert_array_equal(meas, m2)
        np.testing.assert_array_equal(prox, p2)
        np.testing.assert_array_equal(recon, r2)
