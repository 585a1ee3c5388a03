"""Adversarial, cycle-consistency and identity losses.

Logits are raw (pre-sigmoid) everywhere; the cross-entropy mode applies
the sigmoid inside the loss via softplus so large logits cannot
overflow. The generator side defaults to the non-saturating form; the
literal minimax objective is available behind a flag.
"""

from dataclasses import dataclass

from .tensor import ShapeError, absolute, add, mean, mul, neg, softplus, square, sub

GAN_MODES = ("cross_entropy", "least_squares")


@dataclass
class LossWeights:
    w_cycle: float = 10.0
    w_identity: float = 5.0
    gan_mode: str = "cross_entropy"

    def __post_init__(self):
        if self.w_cycle < 0 or self.w_identity < 0:
            raise ValueError("loss weights must be >= 0")
        if self.gan_mode not in GAN_MODES:
            raise ValueError(f"gan_mode must be one of {GAN_MODES}")


def adversarial_d(logits_real, logits_fake, mode="cross_entropy"):
    """Discriminator loss over patch logits.

    Fake logits must come off the generator tape (the trainer feeds
    pooled, detached images), otherwise this loss would train the
    generator to look fake.
    """
    if mode == "cross_entropy":
        # -log sigmoid(r) = softplus(-r); -log(1 - sigmoid(f)) = softplus(f)
        return add(mean(softplus(neg(logits_real))), mean(softplus(logits_fake)))
    if mode == "least_squares":
        return add(mean(square(sub(logits_real, 1.0))), mean(square(logits_fake)))
    raise ValueError(f"unknown gan mode '{mode}'")


def adversarial_g(logits_fake, mode="cross_entropy", saturating=False):
    """Generator-side adversarial loss (non-saturating by default)."""
    if mode == "cross_entropy":
        if saturating:
            return neg(mean(softplus(logits_fake)))
        return mean(softplus(neg(logits_fake)))
    if mode == "least_squares":
        return mean(square(sub(logits_fake, 1.0)))
    raise ValueError(f"unknown gan mode '{mode}'")


def _mean_l1(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"l1: shapes {tuple(a.shape)} and {tuple(b.shape)} differ")
    return mean(absolute(sub(a, b)))


def cycle_loss(x, hgx, y, ghy):
    """mean |H(G(x)) - x| + mean |G(H(y)) - y|."""
    return add(_mean_l1(hgx, x), _mean_l1(ghy, y))


def identity_loss(x, hx, y, gy):
    """mean |H(x) - x| + mean |G(y) - y|."""
    return add(_mean_l1(hx, x), _mean_l1(gy, y))


def total_generator_loss(adv_g_xy, adv_g_yx, cyc, idt, weights):
    return add(add(adv_g_xy, adv_g_yx),
               add(mul(cyc, weights.w_cycle), mul(idt, weights.w_identity)))
