import math

import numpy as np
import pytest

from oracles import central_difference, rel_error
from subdistill.errors import DegenerateError, DimensionError, InputError
from subdistill.losses import (
    Adapter,
    LayerBinding,
    LossReport,
    WbAdapter,
    alpha_l_normalizer,
    cross_entropy,
    orthogonality_penalty,
    output_kl,
    subdistill_layer_loss,
    wb_layer_loss,
)
from subdistill.numerics import qr_orthonormalize
from subdistill.subspace import Subspace, random_subspace


def _binding(d=6, k=3, seed=0, policy="batch_mean"):
    rng = np.random.default_rng(seed)
    sub = random_subspace(d, k, seed, rng.standard_normal(d))
    v = qr_orthonormalize(rng.standard_normal((k, k)))
    return LayerBinding(2, 2, sub, Adapter(v, mu_student_policy=policy))


def _kl_oracle(t, s, temp):
    total = 0.0
    for zt, zs in zip(t, s):
        pt = [math.exp(z / temp) for z in zt]
        ps = [math.exp(z / temp) for z in zs]
        pt = [p / sum(pt) for p in pt]
        ps = [p / sum(ps) for p in ps]
        total += sum(a * math.log(a / b) for a, b in zip(pt, ps))
    return total / len(t)


class TestOutputKL:
    @pytest.mark.parametrize("temp", [1.0, 2.5])
    def test_value_and_gradient(self, temp):
        rng = np.random.default_rng(0)
        t, s = rng.standard_normal((5, 4)), rng.standard_normal((5, 4))
        loss, grad = output_kl(t, s, temp)
        assert loss == pytest.approx(_kl_oracle(t, s, temp), abs=1e-12)
        fd = central_difference(lambda z: output_kl(t, z, temp)[0], s)
        assert rel_error(grad, fd) <= 1e-6

    def test_zero_when_equal_up_to_shift(self):
        t = np.random.default_rng(1).standard_normal((3, 4))
        loss, grad = output_kl(t, t + 7.0)
        assert abs(loss) <= 1e-12
        np.testing.assert_allclose(grad, 0, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            output_kl(np.zeros((2, 3)), np.zeros((2, 4)))


class TestCrossEntropy:
    def test_gradient(self):
        rng = np.random.default_rng(2)
        z, y = rng.standard_normal((4, 3)), np.array([0, 2, 1, 2])
        loss, grad = cross_entropy(z, y)
        ref = -np.mean([z[i, y[i]] - math.log(sum(math.exp(v) for v in z[i])) for i in range(4)])
        assert loss == pytest.approx(ref, abs=1e-12)
        assert rel_error(grad, central_difference(lambda w: cross_entropy(w, y)[0], z)) <= 1e-6


class TestSubdistillLoss:
    @pytest.mark.parametrize("policy", ["batch_mean", "zero"])
    def test_gradients_finite_difference(self, policy):
        b = _binding(policy=policy)
        rng = np.random.default_rng(3)
        t, s = rng.standard_normal((7, 6)), rng.standard_normal((7, 3))
        _, gv, gs = subdistill_layer_loss(b, t, s)

        def f_v(v):
            b2 = LayerBinding(2, 2, b.subspace, Adapter(v, mu_student_policy=policy))
            return subdistill_layer_loss(b2, t, s)[0]

        assert rel_error(gv, central_difference(f_v, b.adapter.v)) <= 1e-6
        assert rel_error(gs, central_difference(lambda z: subdistill_layer_loss(b, t, z)[0], s)) <= 1e-6

    def test_explicit_mean_gradient(self):
        b = _binding()
        rng = np.random.default_rng(4)
        t, s, mu = rng.standard_normal((4, 6)), rng.standard_normal((4, 3)), rng.standard_normal(3)
        _, _, gs = subdistill_layer_loss(b, t, s, mu_student=mu)
        fd = central_difference(lambda z: subdistill_layer_loss(b, t, z, mu_student=mu)[0], s)
        assert rel_error(gs, fd) <= 1e-6

    def test_zero_at_exact_match(self):
        b = _binding()
        rng = np.random.default_rng(5)
        t = rng.standard_normal((9, 6))
        t = t - t.mean(axis=0) + b.subspace.mu_teacher
        s = b.subspace.project(t) @ b.adapter.v + 3.0  # student offset removed by its batch mean
        loss, gv, gs = subdistill_layer_loss(b, t, s)
        assert loss <= 1e-24
        np.testing.assert_allclose(gs, 0, atol=1e-12)

    def test_explicit_sum(self):
        b = _binding()
        rng = np.random.default_rng(6)
        t, s = rng.standard_normal((3, 6)), rng.standard_normal((3, 3))
        mu_s = s.mean(axis=0)
        ref = np.mean([np.sum((b.adapter.v @ (s[i] - mu_s) - b.subspace.u.T @ (t[i] - b.subspace.mu_teacher)) ** 2) for i in range(3)])
        assert subdistill_layer_loss(b, t, s)[0] == pytest.approx(ref, abs=1e-12)

    def test_shape_checks(self):
        b = _binding()
        with pytest.raises(DimensionError):
            subdistill_layer_loss(b, np.zeros((2, 5)), np.zeros((2, 3)))
        with pytest.raises(DimensionError):
            subdistill_layer_loss(b, np.zeros((0, 6)), np.zeros((0, 3)))
        with pytest.raises(DimensionError):
            LayerBinding(1, 1, b.subspace, Adapter(np.eye(2)))

    def test_bad_adapter_modes(self):
        with pytest.raises(InputError):
            Adapter(np.eye(2), orthogonality_mode="hard")
        with pytest.raises(InputError):
            Adapter(np.eye(2), mu_student_policy="median")


class TestAlphaNormalizer:
    def test_value(self):
        sub = Subspace(np.eye(2)[:, :1], np.zeros(2), 1, 1.0)
        t = np.array([[2.0, 5.0], [-2.0, 1.0]])
        assert alpha_l_normalizer(sub, t, 3.0) == pytest.approx(3.0 / 4.0)

    @pytest.mark.parametrize("scale", [0.01, 10.0])
    def test_weighted_loss_invariant_to_activation_scale(self, scale):
        b = _binding()
        rng = np.random.default_rng(7)
        t, s = rng.standard_normal((8, 6)), rng.standard_normal((8, 3))
        base = alpha_l_normalizer(b.subspace, t, 1.0) * subdistill_layer_loss(b, t, s)[0]
        sub = Subspace(b.subspace.u, scale * b.subspace.mu_teacher, 2, 1.0)
        b2 = LayerBinding(2, 2, sub, b.adapter)
        scaled = alpha_l_normalizer(sub, scale * t, 1.0) * subdistill_layer_loss(b2, scale * t, scale * s)[0]
        assert scaled == pytest.approx(base, rel=1e-10)

    def test_errors(self):
        sub = Subspace(np.eye(2), np.zeros(2), 1, 1.0)
        with pytest.raises(DegenerateError):
            alpha_l_normalizer(sub, np.zeros((3, 2)), 1.0)
        with pytest.raises(InputError):
            alpha_l_normalizer(sub, np.ones((3, 2)), -1.0)


class TestWbLoss:
    def test_gradients(self):
        rng = np.random.default_rng(8)
        t, s = rng.standard_normal((6, 5)), rng.standard_normal((6, 3))
        ad = WbAdapter(rng.standard_normal((5, 3)), rng.standard_normal(5))
        _, gw, gb, gs = wb_layer_loss(ad, t, s)
        assert rel_error(gw, central_difference(lambda w: wb_layer_loss(WbAdapter(w, ad.b), t, s)[0], ad.w)) <= 1e-6
        assert rel_error(gb, central_difference(lambda b: wb_layer_loss(WbAdapter(ad.w, b), t, s)[0], ad.b)) <= 1e-6
        assert rel_error(gs, central_difference(lambda z: wb_layer_loss(ad, t, z)[0], s)) <= 1e-6

    def test_normal_equations_give_zero_loss_on_affine_data(self):
        rng = np.random.default_rng(9)
        s = rng.standard_normal((20, 3))
        w_true, b_true = rng.standard_normal((4, 3)), rng.standard_normal(4)
        t = s @ w_true.T + b_true
        design = np.hstack([s, np.ones((20, 1))])
        sol = np.linalg.solve(design.T @ design, design.T @ t)
        loss, gw, gb, _ = wb_layer_loss(WbAdapter(sol[:3].T, sol[3]), t, s)
        assert loss <= 1e-20
        np.testing.assert_allclose(gw, 0, atol=1e-10)
        np.testing.assert_allclose(gb, 0, atol=1e-10)

    def test_shape_check(self):
        with pytest.raises(DimensionError):
            wb_layer_loss(WbAdapter(np.zeros((4, 3)), np.zeros(4)), np.zeros((2, 5)), np.zeros((2, 3)))


class TestPenalty:
    def test_zero_on_orthonormal(self):
        q = qr_orthonormalize(np.random.default_rng(0).standard_normal((5, 3)))
        loss, grad = orthogonality_penalty(q, 10.0)
        assert loss <= 1e-24
        np.testing.assert_allclose(grad, 0, atol=1e-10)

    def test_gradient(self):
        m = np.random.default_rng(1).standard_normal((4, 2))
        _, grad = orthogonality_penalty(m, 3.0)
        assert rel_error(grad, central_difference(lambda x: orthogonality_penalty(x, 3.0)[0], m)) <= 1e-6

    def test_negative_weight(self):
        with pytest.raises(InputError):
            orthogonality_penalty(np.eye(2), -1.0)


def test_loss_report_total():
    r = LossReport(1.0, [2.0, 3.0], [0.5, 0.1], [0.25])
    assert r.total == pytest.approx(1.0 + 1.0 + 0.3 + 0.25)
