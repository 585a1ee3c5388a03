import numpy as np
import pytest

from spectragan.losses import (LossWeights, adversarial_d, adversarial_g,
                               cycle_loss, identity_loss, total_generator_loss)
from spectragan.networks import discriminator_forward, init_discriminator
from spectragan.rng import SplitMix64
from spectragan.tensor import ShapeError, Tape, Tensor, backward, grad_check, tsum


def logit(p):
    return float(np.log(p / (1.0 - p)))


def adv_d_oracle(real, fake):
    sr = 1.0 / (1.0 + np.exp(-real))
    sf = 1.0 / (1.0 + np.exp(-fake))
    return float((-np.log(sr)).mean() + (-np.log(1.0 - sf)).mean())


class TestAdversarialD:
    def test_perfect_discriminator(self):
        real = Tensor(np.full((1, 2, 2), 50.0))   # sigmoid ~ 1
        fake = Tensor(np.full((1, 2, 2), -50.0))  # sigmoid ~ 0
        assert adversarial_d(real, fake).item() < 1e-8

    def test_uncertain_discriminator_closed_form(self):
        real = Tensor(np.zeros((1, 2, 2)))
        fake = Tensor(np.zeros((1, 2, 2)))
        assert adversarial_d(real, fake).item() == pytest.approx(2.0 * np.log(2.0), abs=1e-6)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_formula_oracle(self, seed):
        rng = SplitMix64(seed)
        real, fake = rng.normal((2, 3, 3)) * 3.0, rng.normal((2, 3, 3)) * 3.0
        got = adversarial_d(Tensor(real, dtype=np.float64), Tensor(fake, dtype=np.float64)).item()
        assert abs(got - adv_d_oracle(real, fake)) < 1e-6

    def test_least_squares(self):
        real = Tensor(np.array([[0.5]]))
        fake = Tensor(np.array([[0.25]]))
        got = adversarial_d(real, fake, mode="least_squares").item()
        assert got == pytest.approx(0.25 + 0.0625, abs=1e-6)

    def test_monotone_in_real_confidence(self):
        fake = Tensor(np.zeros((1, 1)))
        values = [adversarial_d(Tensor(np.array([[logit(p)]])), fake).item()
                  for p in (0.2, 0.4, 0.6, 0.8, 0.95)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_nonnegative(self):
        rng = SplitMix64(9)
        for mode in ("cross_entropy", "least_squares"):
            v = adversarial_d(Tensor(rng.normal((2, 2))), Tensor(rng.normal((2, 2))), mode).item()
            assert v >= 0.0


class TestAdversarialG:
    def test_fooled_discriminator(self):
        assert adversarial_g(Tensor(np.full((1, 2, 2), 60.0))).item() < 1e-8

    def test_uncertain_closed_form(self):
        assert adversarial_g(Tensor(np.zeros((3, 3)))).item() == pytest.approx(np.log(2.0), abs=1e-7)

    def test_least_squares(self):
        assert adversarial_g(Tensor(np.array([[0.0]])), mode="least_squares").item() == 1.0

    def test_saturating_variant_sign(self):
        fake = Tensor(np.zeros((2, 2)))
        assert adversarial_g(fake, saturating=True).item() == pytest.approx(-np.log(2.0), abs=1e-7)

    def test_gradient_reaches_generator_but_not_frozen_discriminator(self):
        d = init_discriminator(0, 4)
        d.set_trainable(False)
        with Tape() as tape:
            img = Tensor(SplitMix64(1).normal((3, 64, 64)), requires_grad=True)
            loss = adversarial_g(discriminator_forward(d, img))
        grads = backward(tape, loss)
        assert np.abs(grads[img]).max() > 0.0            # flows to the generator side
        assert all(t not in grads for t in d.named_tensors().values())


class TestCycleAndIdentity:
    def test_perfect_reconstruction(self):
        x = Tensor(SplitMix64(2).normal((3, 4, 4)))
        y = Tensor(SplitMix64(3).normal((3, 4, 4)))
        assert cycle_loss(x, x, y, y).item() == 0.0

    def test_constant_offset(self):
        x = Tensor(np.zeros((3, 4, 4)))
        y = Tensor(np.ones((3, 4, 4)))
        hgx = Tensor(np.full((3, 4, 4), 0.1))
        assert cycle_loss(x, hgx, y, y).item() == pytest.approx(0.1, abs=1e-7)

    def test_identity_negation_closed_form(self):
        y = Tensor(np.ones((2, 2)))
        gy = Tensor(-np.ones((2, 2)))
        x = Tensor(np.zeros((2, 2)))
        assert identity_loss(x, x, y, gy).item() == pytest.approx(2.0, abs=1e-7)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_direct_sum_oracle(self, seed):
        rng = SplitMix64(seed + 10)
        x, hgx = rng.normal((3, 5, 5)), rng.normal((3, 5, 5))
        y, ghy = rng.normal((3, 5, 5)), rng.normal((3, 5, 5))
        got = cycle_loss(Tensor(x, dtype=np.float64), Tensor(hgx, dtype=np.float64),
                         Tensor(y, dtype=np.float64), Tensor(ghy, dtype=np.float64)).item()
        want = np.abs(hgx - x).mean() + np.abs(ghy - y).mean()
        assert abs(got - want) < 1e-6

    def test_symmetric_under_pair_swap(self):
        rng = SplitMix64(20)
        a, b = Tensor(rng.normal((4, 4)), dtype=np.float64), Tensor(rng.normal((4, 4)), dtype=np.float64)
        c, d = Tensor(rng.normal((4, 4)), dtype=np.float64), Tensor(rng.normal((4, 4)), dtype=np.float64)
        assert cycle_loss(a, b, c, d).item() == pytest.approx(cycle_loss(c, d, a, b).item(), rel=1e-12)
        assert identity_loss(a, b, c, d).item() == pytest.approx(identity_loss(c, d, a, b).item(), rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            cycle_loss(Tensor(np.zeros((2, 2))), Tensor(np.zeros((3, 3))),
                       Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 2))))


class TestTotalLoss:
    def test_all_zero(self):
        w = LossWeights()
        zero = Tensor(np.zeros(()))
        assert total_generator_loss(zero, zero, zero, zero, w).item() == 0.0

    def test_arithmetic(self):
        w = LossWeights(w_cycle=10.0, w_identity=5.0)
        vals = [Tensor(np.asarray(v)) for v in (1.0, 1.0, 0.5, 0.2)]
        assert total_generator_loss(*vals, w).item() == pytest.approx(8.0, abs=1e-6)

    def test_gradient_is_sum_of_component_gradients(self):
        rng = SplitMix64(30)
        w = LossWeights(w_cycle=10.0, w_identity=5.0)
        a = Tensor(rng.normal((4,)), dtype=np.float64)

        def f(t):
            adv = tsum(t)
            cyc = tsum(t * t)
            idt = tsum(t * 0.5)
            return total_generator_loss(adv, adv, cyc, idt, w)

        # analytic: d/dt [2*sum(t) + 10*sum(t^2) + 5*sum(t/2)]
        with Tape() as tape:
            t = Tensor(a.data, requires_grad=True)
            loss = f(t)
        g = backward(tape, loss)[t]
        assert np.allclose(g, 2.0 + 20.0 * a.data + 2.5, atol=1e-10)
        assert grad_check(f, a) < 1e-6

    def test_weight_validation(self):
        with pytest.raises(ValueError):
            LossWeights(w_cycle=-1.0)
        with pytest.raises(ValueError):
            LossWeights(gan_mode="wasserstein")
