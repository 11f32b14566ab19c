"""Desk-scale toy runs: the tiny profile trained on a synthetic family, with a
run cache so that ablations and the acceptance suite share trained models.

A run directory is keyed by everything that determines its result (training
config, network specs, family descriptor, data sizes and seeds, and
``RECIPE_VERSION``), so a cached ``final.ckpt`` is only reused when it would
be reproduced bit-for-bit. Interrupted runs resume from their latest step
checkpoint.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

from .domains import SyntheticFamily, synth_generate
from .evaluation import evaluate
from .losses import LossWeights
from .networks import TINY_DISCRIMINATOR, TINY_GENERATOR
from .training import TrainingConfig, train

log = logging.getLogger(__name__)

# Bump when a change to the training code would alter a run's outcome.
RECIPE_VERSION = 2
DEFAULT_SEEDS = (0, 1, 2)


def default_cache_root():
    """``$MULTIHOP_TOY_CACHE`` if set, else ``~/.cache/multihop/toy``."""
    env = os.environ.get("MULTIHOP_TOY_CACHE")
    return Path(env) if env else Path.home() / ".cache" / "multihop" / "toy"


def sweep_runs(seeds=DEFAULT_SEEDS, steps=2000):
    """The reference run (h=4, zeta=2.5) and its two ablations, for each seed."""
    runs = []
    for seed in seeds:
        runs += [
            ToyRun(seed=seed, steps=steps),
            ToyRun(seed=seed, zeta=0.0, steps=steps),
            ToyRun(seed=seed, h=2, steps=steps),
        ]
    return runs


@dataclass(frozen=True)
class ToyRun:
    seed: int = 0
    h: int = 4
    zeta: float = 2.5
    steps: int = 2000
    family_id: str = "hue-shift"
    image_size: int = 32
    count: int = 500  # training images per domain
    batch_size: int = 6
    learning_rate: float = 0.0002
    eval_count: int = 100  # held-out images per domain

    @property
    def family(self):
        return SyntheticFamily(self.family_id, self.image_size)

    @property
    def label(self):
        return f"{self.family_id}_h{self.h}_zeta{self.zeta:g}_seed{self.seed}"

    def training_config(self):
        return TrainingConfig(
            h=self.h,
            weights=LossWeights(zeta=self.zeta),
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=1,
            steps_per_epoch=self.steps,
            seed=self.seed,
            checkpoint_interval=250,
        )

    # Train and evaluation sets come from disjoint seed streams.
    def train_data(self):
        fam = self.family
        return (
            synth_generate(fam, "X", self.count, 1000 + self.seed),
            synth_generate(fam, "Y", self.count, 2000 + self.seed),
        )

    def eval_data(self):
        fam = self.family
        return (
            synth_generate(fam, "X", self.eval_count, 9000 + self.seed),
            synth_generate(fam, "Y", self.eval_count, 9500 + self.seed),
        )

    def key(self):
        doc = {
            "recipe": RECIPE_VERSION,
            "run": dataclasses.asdict(self),
            "family": self.family.to_dict(),
            "training": self.training_config().to_dict(),
            "generator": dataclasses.asdict(TINY_GENERATOR),
            "discriminator": dataclasses.asdict(TINY_DISCRIMINATOR),
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def run_dir(run: ToyRun, cache_root):
    return Path(cache_root) / f"{run.label}_{run.key()}"


def _latest_step_checkpoint(directory):
    ckpts = sorted((directory / "checkpoints").glob("step_*.ckpt"))
    return ckpts[-1] if ckpts else None


def ensure_trained(run: ToyRun, cache_root):
    """Path of the run's final checkpoint, training (or resuming) on a cache miss."""
    out = run_dir(run, cache_root)
    final = out / "final.ckpt"
    if final.is_file():
        return final
    resume = _latest_step_checkpoint(out) if out.is_dir() else None
    if resume is None and out.is_dir():
        # A run that died before its first checkpoint: restart the log cleanly.
        log_file = out / "train_log.jsonl"
        if log_file.exists():
            log_file.unlink()
    log.info("training %s -> %s%s", run.label, out, f" (resuming {resume.name})" if resume else "")
    dx, dy = run.train_data()
    return train(
        run.training_config(), dx, dy, out, TINY_GENERATOR, TINY_DISCRIMINATOR, resume_from=resume
    )


def evaluate_run(run: ToyRun, cache_root, extra_hops=None):
    """EvalReport on held-out data, read at hop h with curves to 2h (or ``extra_hops``)."""
    ckpt = ensure_trained(run, cache_root)
    dx, dy = run.eval_data()
    n_hops = extra_hops if extra_hops is not None else 2 * run.h
    return evaluate(
        ckpt, [dx, dy], run.family, n_hops=n_hops, final_hop=run.h,
        provenance={"run": run.label, "key": run.key(), "checkpoint": str(ckpt)},
    )


def cached_report(run: ToyRun, cache_root, extra_hops=None):
    """Like :func:`evaluate_run`, memoised as ``report.json`` in the run directory."""
    from .evaluation import EvalReport

    out = run_dir(run, cache_root)
    n_hops = extra_hops if extra_hops is not None else 2 * run.h
    path = out / f"eval_{n_hops}" / "report.json"
    if path.is_file() and (out / "final.ckpt").is_file():
        return EvalReport.from_dict(json.loads(path.read_text()))
    report = evaluate_run(run, cache_root, extra_hops)
    report.save(path.parent)
    return report
