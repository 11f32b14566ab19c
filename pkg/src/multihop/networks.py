"""Generator / PatchGAN discriminator architectures and the hop recurrence.

Modules work on NCHW tensors. The public ``*_forward``, ``hop`` and
``hop_sequence`` helpers accept channels-last images, either one (H, W, 3)
image or a stack (B, H, W, 3), as numpy arrays or tensors, and return the
same layout.
"""

from __future__ import annotations

import datetime
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigurationError, ContractViolation

INIT_STD = 0.02
LEAKY_SLOPE = 0.2
N_STRIDED = 3  # stride-2 blocks before the PatchGAN switches to stride 1


@dataclass(frozen=True)
class GeneratorSpec:
    base_width: int = 64
    n_residual_blocks: int = 12
    input_size: int = 128

    def __post_init__(self):
        if self.base_width < 1 or self.n_residual_blocks < 1:
            raise ConfigurationError(f"invalid generator spec {self}")
        if self.input_size < 4 or self.input_size % 4:
            raise ConfigurationError("generator input_size must be a positive multiple of 4")

    @property
    def trunk_width(self):
        return 4 * self.base_width


@dataclass(frozen=True)
class DiscriminatorSpec:
    base_width: int = 64
    n_layers: int = 4

    def __post_init__(self):
        if self.base_width < 1 or self.n_layers < 1:
            raise ConfigurationError(f"invalid discriminator spec {self}")

    @property
    def downsample_factor(self):
        return 2 ** min(self.n_layers, N_STRIDED)


PAPER_GENERATOR = GeneratorSpec(64, 12, 128)
PAPER_DISCRIMINATOR = DiscriminatorSpec(64, 4)
TINY_GENERATOR = GeneratorSpec(16, 2, 32)
TINY_DISCRIMINATOR = DiscriminatorSpec(8, 3)


def _norm_act(width, act):
    return [nn.InstanceNorm2d(width), act]


class ResidualBlock(nn.Module):
    def __init__(self, width):
        super().__init__()
        self.body = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(width, width, 3, bias=False),
            nn.InstanceNorm2d(width),
            nn.ReLU(),
            nn.ReflectionPad2d(1),
            nn.Conv2d(width, width, 3, bias=False),
            nn.InstanceNorm2d(width),
        )

    def forward(self, x):
        return x + self.body(x)


class Generator(nn.Module):
    """c7s1-k, d2k, d4k, R4k x n, u2k, uk, c7s1-3 with a tanh head.

    Convolutions that feed a (non-affine) instance norm carry no bias: the
    norm would cancel it and leave a parameter with identically zero gradient.
    """

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        b = spec.base_width
        layers = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(3, b, 7, bias=False),
            *_norm_act(b, nn.ReLU()),
            nn.Conv2d(b, 2 * b, 3, stride=2, padding=1, bias=False),
            *_norm_act(2 * b, nn.ReLU()),
            nn.Conv2d(2 * b, 4 * b, 3, stride=2, padding=1, bias=False),
            *_norm_act(4 * b, nn.ReLU()),
        ]
        layers += [ResidualBlock(4 * b) for _ in range(spec.n_residual_blocks)]
        layers += [
            nn.ConvTranspose2d(4 * b, 2 * b, 3, stride=2, padding=1, output_padding=1, bias=False),
            *_norm_act(2 * b, nn.ReLU()),
            nn.ConvTranspose2d(2 * b, b, 3, stride=2, padding=1, output_padding=1, bias=False),
            *_norm_act(b, nn.ReLU()),
            nn.ReflectionPad2d(3),
            nn.Conv2d(b, 3, 7),
            nn.Tanh(),
        ]
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        return self.model(x)


class PatchDiscriminator(nn.Module):
    """PatchGAN: n_layers 4x4 conv-instancenorm-LeakyReLU blocks, then a
    4x4 projection to one channel with a linear head.

    As in the CycleGAN discriminator, the first block has no norm (and keeps
    its bias): normalising raw pixels per channel would discard the global
    colour statistics that often separate the two domains.

    The first three blocks have stride 2. Stride-1 convs pad (1, 2) so that
    the map side is exactly input / 8, e.g. 128 -> 16 with a 70 px field.
    """

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        layers = []
        in_ch = 3
        for i in range(spec.n_layers):
            out_ch = spec.base_width * 2**i
            normed = i > 0
            if i < N_STRIDED:
                layers.append(nn.Conv2d(in_ch, out_ch, 4, stride=2, padding=1, bias=not normed))
            else:
                layers += [nn.ZeroPad2d((1, 2, 1, 2)), nn.Conv2d(in_ch, out_ch, 4, bias=not normed)]
            if normed:
                layers.append(nn.InstanceNorm2d(out_ch))
            layers.append(nn.LeakyReLU(LEAKY_SLOPE))
            in_ch = out_ch
        layers += [nn.ZeroPad2d((1, 2, 1, 2)), nn.Conv2d(in_ch, 1, 4)]
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        return self.model(x)


def receptive_field(spec: DiscriminatorSpec):
    """Side of the input patch seen by one PatchMap element."""
    strides = [2 if i < N_STRIDED else 1 for i in range(spec.n_layers)] + [1]
    rf = 1
    for s in reversed(strides):
        rf = (rf - 1) * s + 4
    return rf


def _seeded_init(module, rng_state):
    gen = torch.Generator().manual_seed(int(rng_state))
    with torch.no_grad():
        for name, p in module.named_parameters():
            if name.endswith("bias"):
                p.zero_()
            else:
                p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * INIT_STD)
    return module


def build_generator(spec: GeneratorSpec, rng_state=0):
    """Build a generator with Gaussian(0, 0.02) weights drawn from seed ``rng_state``."""
    return _seeded_init(Generator(spec), rng_state)


def build_patch_discriminator(spec: DiscriminatorSpec, rng_state=0):
    return _seeded_init(PatchDiscriminator(spec), rng_state)


def count_parameters(module):
    return sum(p.numel() for p in module.parameters())


# ------------------------------------------------------------ layout helpers


def _to_nchw(image, module):
    """Channels-last input -> (NCHW tensor, was_single)."""
    t = torch.as_tensor(np.asarray(image) if not torch.is_tensor(image) else image)
    if t.dim() == 3:
        t, single = t.unsqueeze(0), True
    elif t.dim() == 4:
        single = False
    else:
        raise ContractViolation(f"expected (H, W, 3) or (B, H, W, 3), got {tuple(t.shape)}")
    if t.shape[-1] != 3:
        raise ContractViolation(f"expected 3 channels last, got shape {tuple(t.shape)}")
    dtype = next(module.parameters()).dtype
    return t.permute(0, 3, 1, 2).to(dtype), single


def _from_nchw(t, single, like):
    out = t.permute(0, 2, 3, 1)
    if single:
        out = out[0]
    if torch.is_tensor(like):
        return out
    return out.detach().cpu().numpy()


def generator_forward(gen: Generator, image):
    x, single = _to_nchw(image, gen)
    size = gen.spec.input_size
    if tuple(x.shape[2:]) != (size, size):
        raise ContractViolation(f"generator expects {size}x{size} inputs, got {tuple(x.shape[2:])}")
    with torch.set_grad_enabled(torch.is_grad_enabled() and torch.is_tensor(image)):
        y = gen(x)
    return _from_nchw(y, single, image)


def discriminator_forward(disc: PatchDiscriminator, image):
    """PatchMap of shape (H/8, W/8), or (B, H/8, W/8) for a stack."""
    x, single = _to_nchw(image, disc)
    h, w = x.shape[2:]
    f = disc.spec.downsample_factor
    if h % f or w % f or min(h, w) < 2 * f:
        raise ContractViolation(f"discriminator input sides must be multiples of {f}, at least {2 * f}")
    with torch.set_grad_enabled(torch.is_grad_enabled() and torch.is_tensor(image)):
        out = disc(x)[:, 0]
    if single:
        out = out[0]
    return out if torch.is_tensor(image) else out.detach().cpu().numpy()


def patch_mean(patch_map):
    """Mean over the trailing two (spatial) axes of a PatchMap tensor."""
    return patch_map.mean(dim=(-2, -1))


def hybrid_score(disc_h: PatchDiscriminator, image):
    """Mean PatchMap value of D_H: a scalar per image, unbounded."""
    pm = discriminator_forward(disc_h, image)
    if torch.is_tensor(pm):
        return patch_mean(pm)
    return pm.mean(axis=(-2, -1))


def hop(gen: Generator, image):
    return generator_forward(gen, image)


def hop_sequence(gen: Generator, image, n: int):
    """[image, G(image), G(G(image)), ...] with n + 1 entries."""
    if n < 0:
        raise ContractViolation(f"hop count must be >= 0, got {n}")
    seq = [image]
    for _ in range(n):
        seq.append(hop(gen, seq[-1]))
    return seq


# ------------------------------------------------------------ model bundle


NETWORK_NAMES = ("gen_G", "gen_F", "disc_X", "disc_Y", "disc_H")


@dataclass
class ModelBundle:
    gen_G: Generator
    gen_F: Generator
    disc_X: PatchDiscriminator
    disc_Y: PatchDiscriminator
    disc_H: PatchDiscriminator
    generator_spec: GeneratorSpec
    discriminator_spec: DiscriminatorSpec
    trained_hop_count: int
    metadata: dict = field(default_factory=dict)

    def networks(self):
        return {name: getattr(self, name) for name in NETWORK_NAMES}

    def to(self, dtype):
        for net in self.networks().values():
            net.to(dtype)
        return self

    def spec_dict(self):
        return {
            "generator": asdict(self.generator_spec),
            "discriminator": asdict(self.discriminator_spec),
            "trained_hop_count": self.trained_hop_count,
        }


def build_bundle(generator_spec, discriminator_spec, h, seed=0, metadata=None):
    """Five freshly initialised networks; each draws from its own sub-seed."""
    if h < 1:
        raise ConfigurationError(f"hop count h must be >= 1, got {h}")
    seeds = np.random.SeedSequence(int(seed)).generate_state(5)
    meta = {"created": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")}
    meta.update(metadata or {})
    return ModelBundle(
        gen_G=build_generator(generator_spec, seeds[0]),
        gen_F=build_generator(generator_spec, seeds[1]),
        disc_X=build_patch_discriminator(discriminator_spec, seeds[2]),
        disc_Y=build_patch_discriminator(discriminator_spec, seeds[3]),
        disc_H=build_patch_discriminator(discriminator_spec, seeds[4]),
        generator_spec=generator_spec,
        discriminator_spec=discriminator_spec,
        trained_hop_count=h,
        metadata=meta,
    )
