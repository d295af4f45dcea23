import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wsinfer.chain import LatentPosterior
from wsinfer.errors import SettingMismatch, ShapeMismatch
from wsinfer.losses import (
    BaseLoss,
    em_q_identity_check,
    kl_divergence,
    q_function,
    smoothing_grad,
    smoothing_loss,
    total_loss,
    ure_grad,
    ure_loss,
)

LN2 = np.log(2.0)


def fd(fun, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g[idx] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


class TestURE:
    def test_exact_label_is_supervised(self):
        f = np.array([[0.8]])
        np.testing.assert_allclose(ure_loss(np.array([[1.0]]), f), -np.log(0.8), atol=1e-15)
        np.testing.assert_allclose(ure_loss(np.array([[0.0]]), f), -np.log(0.2), atol=1e-15)

    def test_uniform(self):
        np.testing.assert_allclose(ure_loss(np.array([[0.5]]), np.array([[0.5]])), LN2, atol=1e-15)

    def test_multiins_bag(self):
        P = np.full((3, 1), 4 / 7)
        np.testing.assert_allclose(ure_loss(P, np.full((3, 1), 0.5)), LN2, atol=1e-15)

    def test_accepts_latent_posterior(self):
        lp = LatentPosterior(np.full((2, 1), 0.5), np.zeros(1))
        np.testing.assert_allclose(ure_loss(lp, np.full((2, 1), 0.5)), LN2, atol=1e-15)

    def test_shape(self):
        with pytest.raises(ShapeMismatch):
            ure_loss(np.zeros((2, 1)), np.zeros((3, 1)))

    def test_unknown_base(self):
        with pytest.raises(SettingMismatch):
            ure_loss(np.zeros((1, 1)), np.full((1, 1), 0.5), "hinge")

    def test_clamp(self):
        assert np.isfinite(ure_loss(np.array([[1.0]]), np.array([[0.0]])))

    def test_mae_binary(self):
        P, f = np.array([[0.7]]), np.array([[0.4]])
        np.testing.assert_allclose(ure_loss(P, f, "MAE"), 0.7 * 0.6 + 0.3 * 0.4, atol=1e-15)

    def test_exclusive_ce(self):
        P = np.array([[0.2, 0.8]])
        f = np.array([[0.5, 0.5]])
        np.testing.assert_allclose(ure_loss(P, f, "CE", exclusive=True), LN2, atol=1e-15)

    @pytest.mark.parametrize("base", ["BCE", "CE", "MAE"])
    @pytest.mark.parametrize("exclusive", [False, True])
    def test_gradient(self, base, exclusive):
        rng = np.random.default_rng(0)
        P = rng.dirichlet(np.ones(3), size=4) if exclusive else rng.uniform(size=(4, 3))
        f = rng.uniform(0.1, 0.9, size=(4, 3))
        g = ure_grad(P, f, base, exclusive)
        np.testing.assert_allclose(g, fd(lambda x: ure_loss(P, x, base, exclusive), f), rtol=1e-6, atol=1e-8)


class TestSmoothing:
    def test_one_hot(self):
        assert smoothing_loss(np.array([[1.0], [0.0]])) == 0.0

    def test_uniform(self):
        np.testing.assert_allclose(smoothing_loss(np.array([[0.5]])), -LN2, atol=1e-15)

    def test_skewed(self):
        np.testing.assert_allclose(smoothing_loss(np.array([[0.9]])), 0.9 * np.log(0.9) + 0.1 * np.log(0.1), atol=1e-15)
        np.testing.assert_allclose(smoothing_loss(np.array([[0.9]])), -0.325083, atol=1e-6)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (4, 3), elements=st.floats(0.0, 1.0)), st.booleans())
    def test_bounds(self, P, exclusive):
        if exclusive:
            P = P + 1e-3
            P = P / P.sum(axis=1, keepdims=True)
        v = smoothing_loss(P, exclusive)
        lo = -np.log(3) / 3 if exclusive else -LN2
        assert lo - 1e-12 <= v <= 1e-15

    @pytest.mark.parametrize("exclusive", [False, True])
    def test_gradient(self, exclusive):
        rng = np.random.default_rng(1)
        P = rng.uniform(0.1, 0.9, size=(3, 2))
        g = smoothing_grad(P, exclusive)
        np.testing.assert_allclose(g, fd(lambda x: smoothing_loss(x, exclusive), P), rtol=1e-6, atol=1e-9)


class TestTotal:
    def test_zero_lambda(self):
        P, f = np.array([[0.3]]), np.array([[0.6]])
        lb = total_loss(P, f, lam=0.0)
        assert lb.total == lb.ure

    def test_kl_identical(self):
        P = np.array([[0.3], [0.9]])
        np.testing.assert_allclose(total_loss(P, P, lam=1.0).total, 0.0, atol=1e-12)

    def test_kl_example(self):
        lb = total_loss(np.array([[0.8]]), np.array([[0.5]]), lam=1.0)
        ref = 0.8 * np.log(0.8 / 0.5) + 0.2 * np.log(0.2 / 0.5)
        np.testing.assert_allclose(lb.total, ref, atol=1e-15)
        np.testing.assert_allclose(lb.total, 0.192745, atol=1e-6)
        np.testing.assert_allclose(kl_divergence(np.array([[0.8]]), np.array([[0.5]])), ref, atol=1e-15)

    def test_kl_single_class(self):
        rng = np.random.default_rng(2)
        P, f = rng.uniform(size=(6, 1)), rng.uniform(0.05, 0.95, size=(6, 1))
        np.testing.assert_allclose(total_loss(P, f, lam=1.0).total, kl_divergence(P, f), atol=1e-12)

    def test_linear_in_lambda(self):
        rng = np.random.default_rng(3)
        P, f = rng.uniform(size=(5, 2)), rng.uniform(0.05, 0.95, size=(5, 2))
        a, b = total_loss(P, f, lam=0.7), total_loss(P, f, lam=1.9)
        np.testing.assert_allclose(a.total + b.total - a.ure, total_loss(P, f, lam=2.6).total, atol=1e-12)
        np.testing.assert_allclose(a.total, a.ure + 0.7 * a.smoothing, atol=1e-12)

    def test_negative_lambda(self):
        with pytest.raises(SettingMismatch):
            total_loss(np.zeros((1, 1)), np.full((1, 1), 0.5), lam=-1.0)


class TestEMIdentity:
    def test_random(self):
        rng = np.random.default_rng(4)
        worst = 0.0
        for _ in range(100):
            K, C = int(rng.integers(1, 9)), int(rng.integers(1, 6))
            exclusive = bool(rng.integers(2))
            if exclusive:
                P, f = rng.dirichlet(np.ones(C), size=K), rng.dirichlet(np.ones(C), size=K)
            else:
                P, f = rng.uniform(size=(K, C)), rng.uniform(0.01, 0.99, size=(K, C))
            worst = max(worst, em_q_identity_check(P, f, exclusive))
        assert worst <= 1e-12

    def test_one_hot(self):
        P = np.array([[0.0, 1.0, 0.0]])
        f = np.array([[0.2, 0.5, 0.3]])
        assert em_q_identity_check(P, f, exclusive=True) <= 1e-12
        np.testing.assert_allclose(ure_loss(P, f, BaseLoss.CE, exclusive=True), -np.log(0.5), atol=1e-15)
        np.testing.assert_allclose(q_function(P, f, exclusive=True), np.log(0.5), atol=1e-15)
