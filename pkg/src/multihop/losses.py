"""Loss terms for multi-hop training.

Every reduction is a per-element mean (over pixels, channels, patches and the
batch), so the default weights carry over between the tiny and full-size
profiles. Images here are NCHW tensors.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch

from .errors import ConfigurationError, ContractViolation
from .networks import ModelBundle, patch_mean

X_TO_Y = "X->Y"
Y_TO_X = "Y->X"
DIRECTIONS = (X_TO_Y, Y_TO_X)


@dataclass
class LossWeights:
    gamma: float = 10.0  # cycle
    epsilon: float = 1.0  # adversarial
    delta: float = 1.0  # hybrid
    zeta: float = 2.5  # smoothness

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ConfigurationError(f"loss weight {name} must be non-negative, got {value}")


@dataclass
class LossBreakdown:
    cycle: float
    adversarial: float
    hybrid: float
    smoothness: float
    weighted_total: float
    hop_index: int
    direction: str | None  # None for the whole-sum objective

    def as_record(self):
        return asdict(self)


def hybridness_target(n, h, direction):
    """n/h for forward hops, (h - n)/h for backward hops."""
    if h < 1 or not 0 <= n <= h:
        raise ContractViolation(f"need 0 <= n <= h and h >= 1, got n={n}, h={h}")
    if direction == X_TO_Y:
        return n / h
    if direction == Y_TO_X:
        return (h - n) / h
    raise ContractViolation(f"unknown direction {direction!r}")


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ContractViolation(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def l1_mean(a, b):
    _same_shape(a, b)
    return (a - b).abs().mean()


def cycle_term(gen_back, current, previous):
    """mean |gen_back(current) - previous|; gradients reach both generators."""
    _same_shape(current, previous)
    return l1_mean(gen_back(current), previous)


def adversarial_gen_term(disc, generated):
    return ((disc(generated) - 1.0) ** 2).mean()


def adversarial_disc_term(disc, real_image, generated):
    """Least-squares discriminator loss; the generated batch is detached."""
    real = ((disc(real_image) - 1.0) ** 2).mean()
    fake = (disc(generated.detach()) ** 2).mean()
    return real + fake


def hybrid_scores(disc_h, images):
    """Per-image mean PatchMap value of D_H, shape (B,)."""
    return patch_mean(disc_h(images)[:, 0])


def hybrid_term(disc_h, generated, target):
    return ((hybrid_scores(disc_h, generated) - target) ** 2).mean()


def smoothness_term(current, previous):
    return l1_mean(current, previous)


def classifier_term(disc_h, real_x, real_y):
    """D_H trained as a 0 (domain X) / 1 (domain Y) regressor on real images."""
    sx = hybrid_scores(disc_h, real_x.detach())
    sy = hybrid_scores(disc_h, real_y.detach())
    return (sx**2).mean() + ((sy - 1.0) ** 2).mean()


def weighted_total(weights, cycle, adversarial, hybrid, smoothness):
    return (
        weights.gamma * cycle
        + weights.epsilon * adversarial
        + weights.delta * hybrid
        + weights.zeta * smoothness
    )


def generator_hop_loss(gen, gen_back, disc_target, disc_h, previous, n, h, direction, weights):
    """Hop-n generator objective for one direction.

    ``previous`` is the (detached) hop n-1 image. Returns the weighted loss
    tensor, the component tensors and the generated hop-n image.
    """
    current = gen(previous)
    terms = {
        "cycle": cycle_term(gen_back, current, previous),
        "adversarial": adversarial_gen_term(disc_target, current),
        "hybrid": hybrid_term(disc_h, current, hybridness_target(n, h, direction)),
        "smoothness": smoothness_term(current, previous),
    }
    total = weighted_total(weights, **terms)
    return total, terms, current


def _as_float(v):
    return float(v.detach()) if torch.is_tensor(v) else float(v)


def breakdown(terms, weights, n, direction):
    # The total is recomputed from the rounded floats so the weighted identity is exact.
    parts = {k: _as_float(terms[k]) for k in ("cycle", "adversarial", "hybrid", "smoothness")}
    return LossBreakdown(
        **parts,
        weighted_total=weighted_total(weights, **parts),
        hop_index=n,
        direction=direction,
    )


def objective_terms(bundle: ModelBundle, x, y, h, weights: LossWeights):
    """Whole-sum objective over hops 1..h in both directions, as tensors.

    ``x`` and ``y`` are NCHW tensors. The adversarial component is the
    discriminator-side least-squares value, with one real-image term per hop.
    """
    if h < 1:
        raise ConfigurationError(f"hop count h must be >= 1, got {h}")
    G, Fg = bundle.gen_G, bundle.gen_F
    sums = dict.fromkeys(("cycle", "adversarial", "hybrid", "smoothness"), 0.0)
    legs = (
        (G, Fg, bundle.disc_Y, x, y, X_TO_Y),
        (Fg, G, bundle.disc_X, y, x, Y_TO_X),
    )
    for gen, gen_back, disc, source, real_target, direction in legs:
        prev = source
        for n in range(1, h + 1):
            cur = gen(prev)
            sums["cycle"] = sums["cycle"] + cycle_term(gen_back, cur, prev)
            sums["adversarial"] = sums["adversarial"] + adversarial_disc_term(disc, real_target, cur)
            target = hybridness_target(n, h, direction)
            sums["hybrid"] = sums["hybrid"] + hybrid_term(bundle.disc_H, cur, target)
            sums["smoothness"] = sums["smoothness"] + smoothness_term(cur, prev)
            prev = cur
    sums["weighted_total"] = weighted_total(weights, **sums)
    return sums


def full_objective(bundle: ModelBundle, x, y, h, weights: LossWeights):
    """:func:`objective_terms` reduced to a LossBreakdown (direction None, hop_index h)."""
    with torch.no_grad():
        sums = objective_terms(bundle, x, y, h, weights)
    return breakdown(sums, weights, h, None)
