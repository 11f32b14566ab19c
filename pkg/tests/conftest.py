import numpy as np
import pytest
import torch
from hypothesis import settings

from multihop.networks import (
    TINY_DISCRIMINATOR,
    TINY_GENERATOR,
    DiscriminatorSpec,
    GeneratorSpec,
    build_bundle,
)

settings.register_profile("default", deadline=None, max_examples=25)
settings.load_profile("default")

# Gradient-check profile: 8x8 inputs, float64. The discriminator keeps two
# stride-2 blocks so its instance norms never see a 1x1 map.
GRADCHECK_GENERATOR = GeneratorSpec(16, 2, 8)
GRADCHECK_DISCRIMINATOR = DiscriminatorSpec(8, 2)


@pytest.fixture
def tiny_bundle():
    return build_bundle(TINY_GENERATOR, TINY_DISCRIMINATOR, h=4, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_images(rng, n, size, channels_last=True):
    x = rng.uniform(-1, 1, size=(n, size, size, 3)).astype(np.float32)
    return x if channels_last else torch.from_numpy(x).permute(0, 3, 1, 2).contiguous()


class ConstantMap(torch.nn.Module):
    """Stand-in discriminator that returns a fixed (B, 1, h, w) map."""

    def __init__(self, values):
        super().__init__()
        self.values = torch.as_tensor(values, dtype=torch.float64)

    def forward(self, x):
        return self.values.expand(x.shape[0], *self.values.shape[1:]) if self.values.shape[0] == 1 else self.values


# Acceptance verdicts, one line per criterion, printed after the test summary.
ACCEPTANCE = {}


def record_criterion(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
