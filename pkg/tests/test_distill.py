"""Distillation math: sharpening, losses, stop-gradient, EMA, centering."""

import math

import pytest
import torch
from torch import nn

from vidssl.distill import (
    DistillConfig,
    cross_entropy,
    ema_update,
    entropy,
    scl_loss,
    sharpen,
    tcl_loss,
    total_loss,
    update_center,
)


class TestSharpen:
    def test_constant_vector_is_uniform(self):
        for n in (2, 5, 17):
            for temp in (0.04, 0.1, 1.0):
                out = sharpen(torch.full((n,), 3.7, dtype=torch.float64), temp)
                torch.testing.assert_close(out, torch.full((n,), 1.0 / n, dtype=torch.float64))

    def test_two_logit_value(self):
        # softmax((1,0)/0.5) = (e^2, 1) / (e^2 + 1)
        out = sharpen(torch.tensor([1.0, 0.0], dtype=torch.float64), 0.5)
        e2 = math.exp(2.0)
        assert out[0].item() == pytest.approx(e2 / (e2 + 1), abs=1e-12)
        assert out[1].item() == pytest.approx(1 / (e2 + 1), abs=1e-12)
        assert out[0].item() == pytest.approx(0.8808, abs=1e-4)

    def test_shift_invariance(self):
        z = torch.randn(8, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
        torch.testing.assert_close(sharpen(z, 0.3), sharpen(z + 12.5, 0.3))

    def test_normalization_and_positivity(self):
        gen = torch.Generator().manual_seed(1)
        for _ in range(1000):
            z = (torch.rand(16, generator=gen, dtype=torch.float64) - 0.5) * 100  # [-50, 50]
            # Normalization holds at any temperature.
            assert abs(sharpen(z, 0.04).sum().item() - 1.0) <= 1e-9
            # Strict positivity needs spread/temp within float64 exp range
            # (exp(-x) underflows to exactly 0 past x ~ 745).
            out = sharpen(z, 0.2)
            assert abs(out.sum().item() - 1.0) <= 1e-9
            assert (out > 0).all()

    def test_entropy_monotone_in_temperature(self):
        gen = torch.Generator().manual_seed(2)
        for _ in range(200):
            z = torch.randn(10, generator=gen, dtype=torch.float64)
            h1 = entropy(sharpen(z, 0.05))
            h2 = entropy(sharpen(z, 0.5))
            assert h1 < h2

    def test_argmax_invariance(self):
        gen = torch.Generator().manual_seed(3)
        for _ in range(100):
            z = torch.randn(12, generator=gen, dtype=torch.float64)
            c = torch.randn(12, generator=gen, dtype=torch.float64)
            ref = (z - c).argmax()
            for temp in (0.01, 0.1, 1.0, 10.0):
                assert sharpen(z, temp, c).argmax() == ref

    def test_center_omitted_means_zero(self):
        z = torch.randn(6, dtype=torch.float64, generator=torch.Generator().manual_seed(4))
        torch.testing.assert_close(sharpen(z, 0.2), sharpen(z, 0.2, torch.zeros(6, dtype=torch.float64)))

    def test_rejects_nonpositive_temperature(self):
        with pytest.raises(ValueError):
            sharpen(torch.ones(3), 0.0)
        with pytest.raises(ValueError):
            sharpen(torch.ones(3), -1.0)


class TestCrossEntropyLosses:
    def test_uniform_pair_is_log_n(self):
        u = torch.full((2,), 0.5, dtype=torch.float64)
        assert tcl_loss([u], [u]).item() == pytest.approx(math.log(2), abs=1e-12)

    def test_one_hot_teacher(self):
        t = torch.tensor([0.0, 1.0, 0.0], dtype=torch.float64)
        s = torch.tensor([0.2, 0.5, 0.3], dtype=torch.float64)
        assert tcl_loss([t], [s]).item() == pytest.approx(-math.log(0.5), abs=1e-12)

    def test_gibbs_inequality(self):
        gen = torch.Generator().manual_seed(5)
        for _ in range(500):
            t = sharpen(torch.randn(8, generator=gen, dtype=torch.float64), 0.5)
            s = sharpen(torch.randn(8, generator=gen, dtype=torch.float64), 0.5)
            loss = tcl_loss([t], [s]).item()
            h_t = entropy(t).item()
            assert loss >= h_t - 1e-12
        # Equality iff student equals teacher.
        t = sharpen(torch.randn(8, generator=gen, dtype=torch.float64), 0.5)
        assert tcl_loss([t], [t.clone()]).item() == pytest.approx(entropy(t).item(), abs=1e-12)

    def test_tcl_averages_over_pairs(self):
        t1 = torch.tensor([1.0, 0.0], dtype=torch.float64)
        t2 = torch.tensor([0.5, 0.5], dtype=torch.float64)
        s1 = torch.tensor([0.5, 0.5], dtype=torch.float64)
        expected = (
            cross_entropy(t1, s1) + cross_entropy(t2, s1)
        ) / 2
        torch.testing.assert_close(tcl_loss([t1, t2], [s1]), expected)

    def test_scl_sums_over_q_views(self):
        u = torch.full((2,), 0.5, dtype=torch.float64)
        for q in (1, 4, 16):
            got = scl_loss([u], [u] * q).item()
            assert got == pytest.approx(q * math.log(2), abs=1e-10)

    def test_scl_with_q1_equals_tcl(self):
        gen = torch.Generator().manual_seed(6)
        t = sharpen(torch.randn(3, 8, generator=gen, dtype=torch.float64), 0.1)
        s = sharpen(torch.randn(3, 8, generator=gen, dtype=torch.float64), 0.2)
        torch.testing.assert_close(scl_loss([t], [s]), tcl_loss([t], [s]))

    def test_scl_view_order_invariance(self):
        gen = torch.Generator().manual_seed(7)
        t = [sharpen(torch.randn(8, generator=gen, dtype=torch.float64), 0.1)]
        views = [sharpen(torch.randn(8, generator=gen, dtype=torch.float64), 0.2) for _ in range(5)]
        a = scl_loss(t, views)
        b = scl_loss(t, views[::-1])
        torch.testing.assert_close(a, b)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            tcl_loss([torch.ones(3) / 3], [torch.ones(4) / 4])

    def test_prototype_permutation_invariance(self):
        gen = torch.Generator().manual_seed(8)
        perm = torch.randperm(10, generator=gen)
        t = [sharpen(torch.randn(4, 10, generator=gen, dtype=torch.float64), 0.04) for _ in range(2)]
        lt = [sharpen(torch.randn(4, 10, generator=gen, dtype=torch.float64), 0.1) for _ in range(2)]
        ls = [sharpen(torch.randn(4, 10, generator=gen, dtype=torch.float64), 0.1) for _ in range(3)]
        base = total_loss(tcl_loss(t, lt), scl_loss(t, ls))
        t_p = [x[:, perm] for x in t]
        lt_p = [x[:, perm] for x in lt]
        ls_p = [x[:, perm] for x in ls]
        permuted = total_loss(tcl_loss(t_p, lt_p), scl_loss(t_p, ls_p))
        torch.testing.assert_close(base, permuted)


class TestTotalLoss:
    def test_sum(self):
        assert total_loss(torch.tensor(0.5), torch.tensor(1.5)).item() == 2.0
        x = torch.tensor(3.25)
        assert total_loss(torch.tensor(0.0), x).item() == x.item()

    def test_gradient_linearity(self):
        # d(total)/dtheta equals the sum of the per-term gradients.
        gen = torch.Generator().manual_seed(9)
        theta = torch.randn(4, 6, generator=gen, dtype=torch.float64, requires_grad=True)
        teacher = [sharpen(torch.randn(4, 6, generator=gen, dtype=torch.float64), 0.04)]

        def losses(p):
            s = sharpen(p, 0.1)
            return tcl_loss(teacher, [s]), scl_loss(teacher, [s, s])

        tcl, scl = losses(theta)
        g_total = torch.autograd.grad(total_loss(tcl, scl), theta, retain_graph=True)[0]
        tcl, scl = losses(theta)
        g_tcl = torch.autograd.grad(tcl, theta, retain_graph=True)[0]
        tcl, scl = losses(theta)
        g_scl = torch.autograd.grad(scl, theta)[0]
        torch.testing.assert_close(g_total, g_tcl + g_scl)


class TestStopGradient:
    def test_teacher_gradients_exactly_zero(self):
        gen = torch.Generator().manual_seed(10)
        teacher = nn.Linear(5, 7).double()
        student = nn.Linear(5, 7).double()
        x = torch.randn(3, 5, generator=gen, dtype=torch.float64)
        t_dist = sharpen(teacher(x), 0.04)
        s_dist = sharpen(student(x), 0.1)
        loss = total_loss(tcl_loss([t_dist], [s_dist]), scl_loss([t_dist], [s_dist]))
        loss.backward()
        for p in teacher.parameters():
            assert p.grad is None or torch.all(p.grad == 0)
        assert any(p.grad is not None and p.grad.abs().sum() > 0 for p in student.parameters())


class TestEmaUpdate:
    def _pair(self):
        teacher = nn.Linear(3, 2)
        student = nn.Linear(3, 2)
        with torch.no_grad():
            for p in teacher.parameters():
                p.fill_(2.0)
            for p in student.parameters():
                p.fill_(4.0)
        return teacher, student

    def test_momentum_one_keeps_teacher(self):
        teacher, student = self._pair()
        ema_update(teacher, student, 1.0)
        for p in teacher.parameters():
            assert torch.all(p == 2.0)

    def test_momentum_zero_copies_student(self):
        teacher, student = self._pair()
        ema_update(teacher, student, 0.0)
        for p in teacher.parameters():
            assert torch.all(p == 4.0)

    def test_momentum_half_blends(self):
        teacher, student = self._pair()
        ema_update(teacher, student, 0.5)
        for p in teacher.parameters():
            assert torch.all(p == 3.0)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ema_update(nn.Linear(3, 2), nn.Linear(3, 3), 0.5)


class TestCentering:
    def test_momentum_one_keeps_center(self):
        c = torch.tensor([1.0, 2.0])
        out = update_center(c, torch.randn(5, 2), 1.0)
        torch.testing.assert_close(out, c)

    def test_momentum_zero_takes_batch_mean(self):
        v = torch.tensor([[3.0, -1.0]])
        out = update_center(torch.zeros(2), v, 0.0)
        torch.testing.assert_close(out, v[0])

    def test_two_steps_match_geometric_closed_form(self):
        gen = torch.Generator().manual_seed(11)
        rho = 0.9
        c0 = torch.randn(4, generator=gen, dtype=torch.float64)
        b1 = torch.randn(6, 4, generator=gen, dtype=torch.float64)
        b2 = torch.randn(6, 4, generator=gen, dtype=torch.float64)
        c2 = update_center(update_center(c0, b1, rho), b2, rho)
        closed = rho**2 * c0 + (1 - rho) * (rho * b1.mean(0) + b2.mean(0))
        torch.testing.assert_close(c2, closed, atol=1e-12, rtol=0)


class TestConfig:
    def test_temperature_ordering(self):
        with pytest.raises(ValueError):
            DistillConfig(student_temp=0.04, teacher_temp=0.1)
        DistillConfig(student_temp=0.1, teacher_temp=0.1)  # single-temperature mode
