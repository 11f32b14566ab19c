"""Shared measurement helpers for the unit and acceptance suites."""

import numpy as np
import torch

from multihop.domains import Batch, SyntheticFamily, UnpairedDataset, synth_generate
from multihop import losses
from multihop.losses import (
    LossWeights,
    adversarial_disc_term,
    classifier_term,
    generator_hop_loss,
)
from multihop.networks import TINY_DISCRIMINATOR, TINY_GENERATOR, build_bundle
from multihop.training import ActivationMeter, TrainingConfig, init_state, train_step


def tiny_datasets(count=12, size=32, seed=0):
    fam = SyntheticFamily("hue-shift", size)
    return synth_generate(fam, "X", count, seed), synth_generate(fam, "Y", count, seed + 1)


def fixed_batches(size=32, batch=2, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, (batch, size, size, 3)).astype(np.float32)
    y = rng.uniform(-1, 1, (batch, size, size, 3)).astype(np.float32)
    return Batch(x, "X"), Batch(y, "Y")


def peak_step_memory(h, seed=0, batch=2):
    """Peak saved-for-backward bytes over one training step with ``h`` hops."""
    torch.manual_seed(seed)
    state = init_state(TrainingConfig(h=h, batch_size=batch, seed=seed), TINY_GENERATOR, TINY_DISCRIMINATOR)
    xb, yb = fixed_batches(TINY_GENERATOR.input_size, batch, seed)
    with ActivationMeter() as meter:
        train_step(state, xb, yb, meter=meter)
    return meter.peak_bytes


def undetached_chain_memory(h, seed=0, batch=2):
    """Contrast case: the same peak measure when h hops share one graph."""
    bundle = build_bundle(TINY_GENERATOR, TINY_DISCRIMINATOR, h, seed)
    xb, _ = fixed_batches(TINY_GENERATOR.input_size, batch, seed)
    x = torch.from_numpy(xb.images).permute(0, 3, 1, 2).contiguous()
    with ActivationMeter() as meter:
        loss = 0.0
        for _ in range(h):
            x = bundle.gen_G(x)
            loss = loss + x.abs().mean()
        loss.backward()
    return meter.peak_bytes


def per_hop_losses(bundle, x_prev, y_prev, x_real, y_real, n, h, weights=None):
    """Closures computing each network's own hop-n update loss (float64 scalars).

    Generators: the weighted generator objective of their direction.
    D_X, D_Y: least-squares discriminator loss on real vs the hop-n image.
    D_H: the classifier loss on real images.
    """
    weights = weights or LossWeights()
    b = bundle

    def gen_loss(gen, back, disc, previous, direction):
        def f():
            total, _, _ = generator_hop_loss(gen, back, disc, b.disc_H, previous, n, h, direction, weights)
            return total

        return f

    with torch.no_grad():
        x_next, y_next = b.gen_G(x_prev), b.gen_F(y_prev)
    return {
        "gen_G": gen_loss(b.gen_G, b.gen_F, b.disc_Y, x_prev, "X->Y"),
        "gen_F": gen_loss(b.gen_F, b.gen_G, b.disc_X, y_prev, "Y->X"),
        "disc_X": lambda: adversarial_disc_term(b.disc_X, x_real, y_next),
        "disc_Y": lambda: adversarial_disc_term(b.disc_Y, y_real, x_next),
        "disc_H": lambda: classifier_term(b.disc_H, x_real, y_real),
    }


class KinkProbe:
    """Records the sign pattern of every ReLU / LeakyReLU input in ``modules``
    and of every L1 residual computed by the loss module."""

    def __init__(self, modules):
        self.signs = []
        self.handles = [
            m.register_forward_hook(self._hook)
            for net in modules
            for m in net.modules()
            if isinstance(m, (torch.nn.ReLU, torch.nn.LeakyReLU))
        ]
        self._l1 = losses.l1_mean

        def recording_l1(a, b):
            self.signs.append((a - b > 0).flatten())
            return self._l1(a, b)

        losses.l1_mean = recording_l1

    def _hook(self, module, inputs, output):
        self.signs.append((inputs[0] > 0).flatten())

    def run(self, fn):
        self.signs = []
        value = fn().item()
        return value, torch.cat(self.signs)

    def close(self):
        losses.l1_mean = self._l1
        for h in self.handles:
            h.remove()


def gradient_check(module, loss_fn, n_coords=200, step=1e-4, seed=0, skip_kinks_in=None):
    """Relative errors |a - n| / max(|a|, |n|) of analytic vs central-difference
    gradients on ``n_coords`` sampled parameter coordinates of ``module``.

    ``loss_fn`` must compute in float64. With ``skip_kinks_in`` (a list of
    modules), coordinates whose +step / -step evaluations differ in any
    activation sign are replaced by fresh samples: there the difference
    quotient straddles a kink and is not an estimate of the derivative.
    Returns ``(errors, n_skipped)``.
    """
    params = [p for p in module.parameters() if p.requires_grad]
    for p in params:
        p.grad = None
    loss_fn().backward()
    grads = [p.grad.detach().clone() for p in params]
    sizes = np.array([p.numel() for p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    order = rng.permutation(offsets[-1])
    probe = KinkProbe(skip_kinks_in) if skip_kinks_in else None
    errors, skipped = [], 0
    with torch.no_grad():
        for k in order:
            if len(errors) == n_coords:
                break
            i = int(np.searchsorted(offsets, k, side="right") - 1)
            p, j = params[i], int(k - offsets[i])
            flat = p.view(-1)
            orig = flat[j].item()
            flat[j] = orig + step
            up, s_up = probe.run(loss_fn) if probe else (loss_fn().item(), None)
            flat[j] = orig - step
            down, s_down = probe.run(loss_fn) if probe else (loss_fn().item(), None)
            flat[j] = orig
            if probe and not torch.equal(s_up, s_down):
                skipped += 1
                continue
            numeric = (up - down) / (2 * step)
            analytic = grads[i].view(-1)[j].item()
            scale = max(abs(numeric), abs(analytic), 1e-12)
            errors.append(abs(numeric - analytic) / scale)
    if probe:
        probe.close()
    return np.array(errors), skipped


def dataset_from(items, label):
    return UnpairedDataset(label, np.asarray(items, np.float32), "test")
