"""Unpaired image datasets: disk ingestion, synthetic two-domain families and
their analytic membership oracles, and minibatch sampling.

Images are channels-last float arrays of shape (H, W, 3) with values in
[-1, 1]. A dataset stores its items stacked as one (N, H, W, 3) array.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import yaml
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from PIL import Image as PILImage
from scipy.ndimage import gaussian_filter
from scipy.signal import fftconvolve

from .errors import ConfigurationError, ContractViolation, EmptyDatasetError

log = logging.getLogger(__name__)

DOMAINS = ("X", "Y")
FAMILIES = ("hue-shift", "disc-square")

# Saturated-pixel gate for the hue oracle.
MIN_SATURATION = 0.2
MIN_VALUE = 0.1


def to_unit_range(pixels):
    """Map 8-bit values [0, 255] linearly onto [-1, 1]."""
    return np.asarray(pixels, dtype=np.float64) / 127.5 - 1.0


def to_uint8(image):
    """Inverse of :func:`to_unit_range`, rounding half to even and clipping."""
    return np.clip(np.rint((np.asarray(image, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(
        np.uint8
    )


def check_image(image, size=None):
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ContractViolation(f"expected an (H, W, 3) image, got shape {image.shape}")
    h, w = image.shape[:2]
    if h % 4 or w % 4:
        raise ContractViolation(f"image sides must be multiples of 4, got {h}x{w}")
    if size is not None and (h, w) != (size, size):
        raise ContractViolation(f"expected a {size}x{size} image, got {h}x{w}")
    return image


def _check_domain(label):
    if label not in DOMAINS:
        raise ConfigurationError(f"domain label must be one of {DOMAINS}, got {label!r}")
    return label


@dataclass
class UnpairedDataset:
    domain_label: str
    items: np.ndarray  # (N, H, W, 3) float32 in [-1, 1]
    source: str = ""

    def __post_init__(self):
        _check_domain(self.domain_label)
        self.items = np.asarray(self.items, dtype=np.float32)
        if self.items.ndim != 4 or len(self.items) == 0:
            raise EmptyDatasetError(f"dataset from {self.source!r} is empty")
        check_image(self.items[0])

    def __len__(self):
        return len(self.items)

    @property
    def image_size(self):
        return self.items.shape[1]


@dataclass
class Batch:
    images: np.ndarray  # (B, H, W, 3)
    domain_label: str

    def __len__(self):
        return len(self.images)


@dataclass
class SyntheticFamily:
    """Parameters of a procedural two-domain image family.

    ``hue-shift`` colours a smooth grayscale pattern with a hue drawn from
    ``hue_x`` (domain X) or ``hue_y`` (domain Y), in degrees. The pattern sets
    HLS lightness within ``lightness``, so dark regions shade toward black and
    light ones toward white.
    ``disc-square`` draws one anti-aliased disc (X) or square (Y) whose
    radius / half-side is ``shape_extent`` times the image size.
    """

    family_id: str = "hue-shift"
    image_size: int = 32
    hue_x: tuple[float, float] = (0.0, 60.0)
    hue_y: tuple[float, float] = (180.0, 240.0)
    saturation: tuple[float, float] = (0.55, 0.9)
    lightness: tuple[float, float] = (0.2, 0.8)
    pattern_sigma: float = 0.125
    shape_extent: tuple[float, float] = (0.15, 0.3)
    background: float = 0.5

    def __post_init__(self):
        if self.family_id not in FAMILIES:
            raise ConfigurationError(f"unknown family {self.family_id!r}; expected one of {FAMILIES}")
        if self.image_size < 4 or self.image_size % 4:
            raise ConfigurationError("image_size must be a positive multiple of 4")
        for name in ("hue_x", "hue_y", "saturation", "lightness", "shape_extent"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigurationError(f"{name}: lower bound exceeds upper bound")
            setattr(self, name, (float(lo), float(hi)))

    @property
    def hue_centers(self):
        return float(np.mean(self.hue_x)), float(np.mean(self.hue_y))

    def to_dict(self):
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown family descriptor keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def save(self, path):
        Path(path).write_text(yaml.safe_dump({"family": self.to_dict()}, sort_keys=False))

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"family descriptor not found: {path}")
        doc = yaml.safe_load(path.read_text())
        if not isinstance(doc, dict) or "family" not in doc:
            raise ConfigurationError(f"{path}: missing 'family' section")
        return cls.from_dict(doc["family"])


# ---------------------------------------------------------------- ingestion


def load_image(path, image_size=None):
    """Decode one raster file to an (H, W, 3) array in [-1, 1].

    When ``image_size`` is given the image is resized to a square of that side.
    """
    with PILImage.open(path) as im:
        im = im.convert("RGB")
        if image_size is not None and im.size != (image_size, image_size):
            im = im.resize((image_size, image_size), PILImage.BILINEAR)
        return to_unit_range(np.asarray(im)).astype(np.float32)


def save_image(image, path):
    PILImage.fromarray(to_uint8(image)).save(path, format="PNG")


def load_unpaired_dataset(directory, domain_label, image_size):
    _check_domain(domain_label)
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigurationError(f"dataset directory not found: {directory}")
    items = []
    for path in sorted(p for p in directory.iterdir() if p.is_file()):
        try:
            items.append(load_image(path, image_size))
        except (OSError, ValueError) as exc:
            log.warning("skipping undecodable file %s (%s)", path, exc)
    if not items:
        raise EmptyDatasetError(f"no decodable images in {directory}")
    return UnpairedDataset(domain_label, np.stack(items), source=str(directory))


def save_dataset(dataset, directory, prefix=None):
    """Write every item as ``<prefix>_<index>.png``; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    prefix = prefix or dataset.domain_label.lower()
    width = max(4, len(str(len(dataset) - 1)))
    paths = []
    for i, img in enumerate(dataset.items):
        p = directory / f"{prefix}_{i:0{width}d}.png"
        save_image(img, p)
        paths.append(p)
    return paths


# ---------------------------------------------------------------- synthesis


def _image_rng(family, domain_label, seed, index):
    # Per-image streams keep the first k images independent of ``count``.
    return np.random.default_rng(
        [int(seed), FAMILIES.index(family.family_id), DOMAINS.index(domain_label), index]
    )


def _smooth_pattern(rng, size, sigma_frac):
    noise = rng.standard_normal((size, size))
    pattern = gaussian_filter(noise, sigma=max(sigma_frac * size, 0.5), mode="wrap")
    lo, hi = pattern.min(), pattern.max()
    return (pattern - lo) / (hi - lo) if hi > lo else np.full_like(pattern, 0.5)


def _hue_shift_image(family, domain_label, rng):
    n = family.image_size
    lo, hi = family.hue_x if domain_label == "X" else family.hue_y
    hue = rng.uniform(lo, hi)
    sat = rng.uniform(*family.saturation)
    l_lo, l_hi = family.lightness
    light = l_lo + (l_hi - l_lo) * _smooth_pattern(rng, n, family.pattern_sigma)
    # HLS colourisation: rgb = L + C * (pure_hue - 1/2) with chroma C = (1 - |2L - 1|) S.
    # Unlike scaling one colour by the pattern (HSV value), this keeps the
    # image's colours off a single ray, so per-channel normalisation inside a
    # network cannot erase the hue.
    pure = hsv_to_rgb(np.array([(hue % 360.0) / 360.0, 1.0, 1.0]))
    chroma = (1.0 - np.abs(2.0 * light - 1.0)) * sat
    return light[..., None] + chroma[..., None] * (pure - 0.5)


def _coverage(kind, n, cx, cy, extent, supersample=4):
    """Anti-aliased coverage mask of a disc/square centred at (cx, cy)."""
    offs = (np.arange(supersample) + 0.5) / supersample
    coords = (np.arange(n)[:, None] + offs[None, :]).ravel()
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    if kind == "disc":
        inside = (xx - cx) ** 2 + (yy - cy) ** 2 <= extent**2
    else:
        inside = (np.abs(xx - cx) <= extent) & (np.abs(yy - cy) <= extent)
    return inside.reshape(n, supersample, n, supersample).mean(axis=(1, 3))


def _disc_square_image(family, domain_label, rng):
    n = family.image_size
    extent = rng.uniform(*family.shape_extent) * n
    margin = extent + 1.0
    cx, cy = rng.uniform(margin, n - margin, size=2)
    color = hsv_to_rgb(
        np.array([rng.uniform(0.0, 1.0), rng.uniform(0.6, 1.0), rng.uniform(0.75, 1.0)])
    )
    kind = "disc" if domain_label == "X" else "square"
    alpha = _coverage(kind, n, cx, cy, extent)[..., None]
    return alpha * color + (1.0 - alpha) * family.background


def synth_generate(family, domain_label, count, seed):
    _check_domain(domain_label)
    if count < 1:
        raise ConfigurationError(f"count must be >= 1, got {count}")
    render = _hue_shift_image if family.family_id == "hue-shift" else _disc_square_image
    items = []
    for i in range(count):
        rgb = render(family, domain_label, _image_rng(family, domain_label, seed, i))
        # Quantise to 8-bit levels so PNG export round-trips exactly.
        items.append(to_unit_range(np.rint(np.clip(rgb, 0.0, 1.0) * 255.0)))
    source = f"synthetic:{family.family_id}:{domain_label}:n={count}:seed={seed}"
    return UnpairedDataset(domain_label, np.stack(items), source=source)


# ---------------------------------------------------------------- oracles


def _circular_distance(a, b):
    d = np.abs(a - b) % 360.0
    return np.minimum(d, 360.0 - d)


def _hue_score(image, family):
    rgb = np.clip((np.asarray(image, dtype=np.float64) + 1.0) / 2.0, 0.0, 1.0)
    hsv = rgb_to_hsv(rgb)
    sat, val = hsv[..., 1], hsv[..., 2]
    mask = (sat >= MIN_SATURATION) & (val >= MIN_VALUE)
    if not mask.any():
        return 0.5
    theta = hsv[..., 0][mask] * 2.0 * np.pi
    w = sat[mask]
    c, s = np.sum(w * np.cos(theta)), np.sum(w * np.sin(theta))
    if np.hypot(c, s) < 1e-6 * np.sum(w):
        return 0.5
    mean_hue = np.degrees(np.arctan2(s, c)) % 360.0
    cx, cy = family.hue_centers
    span = _circular_distance(cx, cy)
    score = _circular_distance(mean_hue, cx) / span
    return float(np.clip(score, 0.0, 1.0))


@lru_cache(maxsize=256)
def _shape_kernel(kind, extent):
    # Anti-aliased template centred on the middle pixel of an odd-sided grid.
    half = int(np.ceil(extent)) + 1
    side = 2 * half + 1
    return _coverage(kind, side, half + 0.5, half + 0.5, extent)


def _best_residual(f, kind, extents):
    """Least residual ||f - a*T||^2 over templates T at every pixel position."""
    energy = float(np.sum(f * f))
    ones = np.ones_like(f)
    best = energy
    for extent in extents:
        k = _shape_kernel(kind, float(extent))
        corr = fftconvolve(f, k, mode="same")
        norm = fftconvolve(ones, k * k, mode="same")
        gain = corr**2 / np.maximum(norm, 1e-9)
        best = min(best, energy - float(gain.max()))
    return max(best, 0.0)


def _disc_square_score(image, family, extent_step=0.5):
    rgb = (np.asarray(image, dtype=np.float64) + 1.0) / 2.0
    n = rgb.shape[0]
    border = np.concatenate([rgb[0], rgb[-1], rgb[:, 0], rgb[:, -1]])
    bg = np.median(border, axis=0)
    f = np.linalg.norm(rgb - bg, axis=-1)
    peak = f.max()
    if peak < 1e-3:
        return 0.5
    f = f / peak
    extents = np.arange(2.0, n / 2.0, extent_step)
    r_disc = _best_residual(f, "disc", extents)
    r_square = _best_residual(f, "square", extents)
    total = r_disc + r_square
    if total <= 1e-12:
        return 0.5
    return float(r_disc / total)


def domain_oracle_score(image, family):
    """Membership score in [0, 1]: 0 reads as fully domain X, 1 as fully Y."""
    image = check_image(image, family.image_size)
    if family.family_id == "hue-shift":
        return _hue_score(image, family)
    return _disc_square_score(image, family)


def oracle_scores(images, family):
    return np.array([domain_oracle_score(img, family) for img in images])


# ---------------------------------------------------------------- sampling


def sample_batch(dataset, batch_size, rng):
    """Uniform sampling with replacement; ``rng`` is a numpy Generator."""
    if batch_size < 1:
        raise ContractViolation(f"batch_size must be >= 1, got {batch_size}")
    idx = rng.integers(0, len(dataset), size=batch_size)
    return Batch(dataset.items[idx], dataset.domain_label)
