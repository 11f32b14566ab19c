"""Checkpoint-driven translation: hop sequences in either direction, with any
number of hops (including more than the model was trained for)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_bundle
from .domains import check_image, save_image
from .errors import ContractViolation
from .losses import DIRECTIONS, X_TO_Y
from .networks import ModelBundle, hop


@dataclass
class TranslationRequest:
    direction: str = X_TO_Y
    hops: int | None = None  # None: the checkpoint's trained hop count
    emit_intermediates: bool = True

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ContractViolation(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        if self.hops is not None and self.hops < 0:
            raise ContractViolation(f"hops must be >= 0, got {self.hops}")


@dataclass
class HopSequence:
    """Images of one translation; ``hop_indices[i]`` is the hop of ``images[i]``."""

    images: list = field(default_factory=list)
    hop_indices: list = field(default_factory=list)

    def __len__(self):
        return len(self.images)

    @property
    def final(self):
        return self.images[-1]


def generator_for(bundle: ModelBundle, direction):
    return bundle.gen_G if direction == X_TO_Y else bundle.gen_F


def translate_with_bundle(bundle, images, request, chunk_size=32):
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        images = images[None]
    size = bundle.generator_spec.input_size
    for img in images:
        check_image(img, size)
    n = bundle.trained_hop_count if request.hops is None else request.hops
    gen = generator_for(bundle, request.direction)
    dtype = next(gen.parameters()).dtype

    per_hop = []  # per_hop[k] is the (N, H, W, 3) stack at hop k
    with torch.no_grad():
        for start in range(0, len(images), chunk_size):
            cur = torch.as_tensor(images[start : start + chunk_size]).to(dtype)
            chunk = [cur.numpy()]
            for _ in range(n):
                cur = hop(gen, cur)
                chunk.append(cur.numpy())
            per_hop.append(chunk)
    stacks = [np.concatenate([c[k] for c in per_hop]) for k in range(n + 1)]

    out = []
    for i in range(len(images)):
        if request.emit_intermediates:
            out.append(HopSequence([stacks[k][i] for k in range(n + 1)], list(range(n + 1))))
        else:
            out.append(HopSequence([stacks[n][i]], [n]))
    return out


def translate(checkpoint_path, images, request: TranslationRequest):
    """One HopSequence per input image, using G for X->Y and F for Y->X."""
    return translate_with_bundle(load_bundle(checkpoint_path), images, request)


def write_sequences(sequences, stems, out_dir, direction, input_paths=None):
    """Write ``<stem>_hop<k>.png`` files and ``manifest.json``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (seq, stem) in enumerate(zip(sequences, stems)):
        files = []
        for k, img in zip(seq.hop_indices, seq.images):
            path = out_dir / f"{stem}_hop{k}.png"
            save_image(img, path)
            files.append(str(path))
        entries.append(
            {
                "input": str(input_paths[i]) if input_paths else stem,
                "direction": direction,
                "hops": seq.hop_indices[-1],
                "files": files,
            }
        )
    manifest = out_dir / "manifest.json"
    manifest.write_text(json.dumps({"sequences": entries}, indent=2))
    return manifest
