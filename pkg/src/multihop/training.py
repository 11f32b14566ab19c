"""Hop-interleaved training schedule, checkpointing and resumable runs.

Each step draws one batch per domain and walks the hops n = 1..h. At every
hop the running images advance one generator application, then G, F, D_X,
D_Y and D_H are updated in that order using only the hop-n terms. Each
update steps only its own network's optimizer. Hop inputs
are detached, so the autograd graph of a sub-update never spans more than
one hop and peak activation memory does not grow with h.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .domains import sample_batch
from .errors import ConfigurationError, ContractViolation, TrainingDiverged
from .losses import (
    X_TO_Y,
    Y_TO_X,
    LossWeights,
    adversarial_disc_term,
    breakdown,
    classifier_term,
    generator_hop_loss,
)
from .networks import ModelBundle, build_bundle

log = logging.getLogger(__name__)


@dataclass
class TrainingConfig:
    h: int = 4
    weights: LossWeights = field(default_factory=LossWeights)
    learning_rate: float = 0.0002
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    batch_size: int = 6
    epochs: int = 100
    steps_per_epoch: int | None = None  # None: ceil(min(|X|, |Y|) / batch_size)
    seed: int = 0
    checkpoint_interval: int = 1000

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.h < 1:
            raise ConfigurationError(f"h must be >= 1, got {self.h}")
        if not self.learning_rate >= 0:
            raise ConfigurationError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ConfigurationError("steps_per_epoch must be >= 1 when given")
        if self.checkpoint_interval < 1:
            raise ConfigurationError("checkpoint_interval must be >= 1")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    def resolved_steps_per_epoch(self, n_x, n_y):
        if self.steps_per_epoch is not None:
            return self.steps_per_epoch
        return math.ceil(min(n_x, n_y) / self.batch_size)


def config_hash(config: TrainingConfig, generator_spec, discriminator_spec):
    doc = {
        "training": config.to_dict(),
        "generator": dataclasses.asdict(generator_spec),
        "discriminator": dataclasses.asdict(discriminator_spec),
    }
    blob = json.dumps(doc, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def make_optimizers(bundle: ModelBundle, config: TrainingConfig):
    betas = (config.adam_beta1, config.adam_beta2)
    return {
        name: torch.optim.Adam(net.parameters(), lr=config.learning_rate, betas=betas)
        for name, net in bundle.networks().items()
    }


@dataclass
class TrainingState:
    bundle: ModelBundle
    config: TrainingConfig
    optimizers: dict
    rng: np.random.Generator
    step: int = 0
    epoch: int = 0


def init_state(config: TrainingConfig, generator_spec, discriminator_spec, dtype=torch.float32):
    bundle = build_bundle(
        generator_spec,
        discriminator_spec,
        config.h,
        seed=config.seed,
        metadata={"config_hash": config_hash(config, generator_spec, discriminator_spec)},
    ).to(dtype)
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), 1]))
    return TrainingState(bundle, config, make_optimizers(bundle, config), rng)


# ------------------------------------------------------------ instrumentation


class ActivationMeter:
    """Peak bytes of tensors saved for backward, per autograd graph.

    Parameters are not counted. The training step calls :meth:`graph_done`
    after every backward pass, which is when that graph's buffers are freed.
    """

    def __init__(self):
        self.peak_bytes = 0
        self._live = {}
        self._ctx = None

    def _pack(self, t):
        if not (t.is_leaf and t.requires_grad):
            storage = t.untyped_storage()
            self._live[storage.data_ptr()] = storage.nbytes()
        return t

    def graph_done(self):
        self.peak_bytes = max(self.peak_bytes, sum(self._live.values()))
        self._live.clear()

    def __enter__(self):
        self._ctx = torch.autograd.graph.saved_tensors_hooks(self._pack, lambda t: t)
        self._ctx.__enter__()
        return self

    def __exit__(self, *exc):
        self.graph_done()
        self._ctx.__exit__(*exc)
        return False


# ------------------------------------------------------------ one step


def _set_requires_grad(nets, flag):
    for net in nets:
        for p in net.parameters():
            p.requires_grad_(flag)


def _as_nchw(batch, dtype):
    images = torch.as_tensor(np.asarray(batch.images))
    return images.permute(0, 3, 1, 2).to(dtype).contiguous()


def _check_finite(value, term, hop, direction):
    v = float(value.detach()) if torch.is_tensor(value) else float(value)
    if not math.isfinite(v):
        raise TrainingDiverged(term, hop, direction, v)


def _step_networks(optimizers, names):
    for name in names:
        optimizers[name].step()


def train_step(state: TrainingState, x_batch, y_batch, meter=None, tap=None):
    """One outer iteration: h hops, six sub-updates per hop.

    Returns ``(state, records)``; ``records`` holds one dict per sub-update.
    ``tap(n, direction, previous)`` is called with each detached hop input.
    """
    if x_batch.domain_label != "X" or y_batch.domain_label != "Y":
        raise ContractViolation("train_step expects an X batch then a Y batch")
    b, cfg, opts = state.bundle, state.config, state.optimizers
    G, Fg = b.gen_G, b.gen_F
    discs = (b.disc_X, b.disc_Y, b.disc_H)
    dtype = next(G.parameters()).dtype
    x_real = _as_nchw(x_batch, dtype)
    y_real = _as_nchw(y_batch, dtype)
    h, w = cfg.h, cfg.weights
    x_prev, y_prev = x_real, y_real
    records = []

    def done():
        if meter is not None:
            meter.graph_done()

    for n in range(1, h + 1):
        # The backward hop is taken now so both running images use pre-update weights.
        with torch.no_grad():
            y_next = Fg(y_prev)

        _set_requires_grad(discs, False)
        legs = (
            ("gen_G", G, Fg, b.disc_Y, x_prev, X_TO_Y),
            ("gen_F", Fg, G, b.disc_X, y_prev, Y_TO_X),
        )
        for name, gen, gen_back, disc, previous, direction in legs:
            if tap is not None:
                tap(n, direction, previous)
            total, terms, current = generator_hop_loss(
                gen, gen_back, disc, b.disc_H, previous, n, h, direction, w
            )
            for term, value in terms.items():
                _check_finite(value, term, n, direction)
            _check_finite(total, "weighted_total", n, direction)
            if name == "gen_G":
                x_next = current.detach()
            opts["gen_G"].zero_grad()
            opts["gen_F"].zero_grad()
            total.backward()
            done()
            # The cycle term also fills F's grads here; only the leg's own
            # generator is stepped, and the other's grads are cleared next leg.
            _step_networks(opts, (name,))
            rec = breakdown(terms, w, n, direction).as_record()
            records.append(dict(rec, step=state.step, network=name))
        _set_requires_grad(discs, True)

        disc_legs = (
            ("disc_X", b.disc_X, x_real, y_next, Y_TO_X),
            ("disc_Y", b.disc_Y, y_real, x_next, X_TO_Y),
        )
        for name, disc, real, fake, direction in disc_legs:
            loss = adversarial_disc_term(disc, real, fake)
            _check_finite(loss, "adversarial_disc", n, direction)
            opts[name].zero_grad()
            loss.backward()
            done()
            opts[name].step()
            records.append({"step": state.step, "network": name, "hop_index": n, "loss": float(loss.detach())})

        loss = classifier_term(b.disc_H, x_real, y_real)
        _check_finite(loss, "classifier", n, None)
        opts["disc_H"].zero_grad()
        loss.backward()
        done()
        opts["disc_H"].step()
        records.append({"step": state.step, "network": "disc_H", "hop_index": n, "loss": float(loss.detach())})

        x_prev, y_prev = x_next, y_next

    state.step += 1
    return state, records


# ------------------------------------------------------------ checkpoints


def _rng_to_json(rng):
    st = rng.bit_generator.state
    inner = st["state"]
    # Fixed-width hex keeps the archive size independent of the state value.
    return {
        "bit_generator": st["bit_generator"],
        "state": f"{inner['state']:032x}",
        "inc": f"{inner['inc']:032x}",
        "has_uint32": int(st["has_uint32"]),
        "uinteger": f"{st['uinteger']:08x}",
    }


def _rng_from_json(doc):
    rng = np.random.default_rng()
    if doc["bit_generator"] != "PCG64":
        raise ConfigurationError(f"unsupported bit generator {doc['bit_generator']}")
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": int(doc["state"], 16), "inc": int(doc["inc"], 16)},
        "has_uint32": doc["has_uint32"],
        "uinteger": int(doc["uinteger"], 16),
    }
    return rng


def _optimizer_arrays(bundle, optimizers):
    arrays = {}
    for net_name, net in bundle.networks().items():
        names = [n for n, _ in net.named_parameters()]
        for idx, slots in optimizers[net_name].state_dict()["state"].items():
            for slot, value in slots.items():
                arrays[f"optim/{net_name}/{names[idx]}/{slot}"] = value.detach().cpu().numpy()
    return arrays


def _restore_optimizers(bundle, config, arrays):
    optimizers = make_optimizers(bundle, config)
    for net_name, net in bundle.networks().items():
        opt = optimizers[net_name]
        sd = opt.state_dict()
        for idx, (pname, _) in enumerate(net.named_parameters()):
            prefix = f"optim/{net_name}/{pname}/"
            slots = {k[len(prefix) :]: v for k, v in arrays.items() if k.startswith(prefix)}
            if slots:
                sd["state"][idx] = {k: torch.from_numpy(np.array(v)) for k, v in slots.items()}
        opt.load_state_dict(sd)
    return optimizers


def save_checkpoint(state: TrainingState, path):
    b = state.bundle
    meta = ckpt.bundle_metadata(b)
    meta.update(
        {
            "has_optimizer_state": True,
            "training_config": state.config.to_dict(),
            "loss_weights": dataclasses.asdict(state.config.weights),
            "config_hash": config_hash(state.config, b.generator_spec, b.discriminator_spec),
            "step": state.step,
            "epoch": state.epoch,
            "rng_state": _rng_to_json(state.rng),
        }
    )
    arrays = ckpt.bundle_arrays(b)
    arrays.update(_optimizer_arrays(b, state.optimizers))
    return ckpt.write_archive(path, meta, arrays)


def load_checkpoint(path) -> TrainingState:
    meta, arrays = ckpt.read_archive(path)
    params = {k: v for k, v in arrays.items() if not k.startswith("optim/")}
    bundle = ckpt.bundle_from_archive(meta, params)
    if not meta.get("has_optimizer_state"):
        raise ConfigurationError(f"{path} holds no training state (networks only)")
    config = TrainingConfig.from_dict(meta["training_config"])
    optimizers = _restore_optimizers(bundle, config, arrays)
    rng = _rng_from_json(meta["rng_state"])
    return TrainingState(bundle, config, optimizers, rng, step=meta["step"], epoch=meta["epoch"])


# ------------------------------------------------------------ outer loop


class JsonlLog:
    """Append-only structured log, one JSON object per line."""

    def __init__(self, path):
        self.path = Path(path)

    def write(self, record):
        with self.path.open("a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    def write_many(self, records):
        with self.path.open("a") as fh:
            for r in records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")


def _prepare_output_dir(output_dir):
    out = Path(output_dir)
    try:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigurationError(f"output directory {out} is not writable: {exc}") from exc
    return out


def train(
    config: TrainingConfig,
    dataset_x,
    dataset_y,
    output_dir,
    generator_spec,
    discriminator_spec,
    resume_from=None,
    stop_after=None,
    dtype=torch.float32,
):
    """Run ``epochs * steps_per_epoch`` steps; returns the last checkpoint path.

    ``stop_after`` ends the run early at that global step (the checkpoint is
    written and can be resumed with ``resume_from``).
    """
    if dataset_x.domain_label != "X" or dataset_y.domain_label != "Y":
        raise ConfigurationError("train expects an X dataset and a Y dataset")
    for ds in (dataset_x, dataset_y):
        if ds.image_size != generator_spec.input_size:
            raise ConfigurationError(
                f"dataset {ds.source!r} has {ds.image_size}px images but the generator "
                f"expects {generator_spec.input_size}px"
            )
    out = _prepare_output_dir(output_dir)
    train_log = JsonlLog(out / "train_log.jsonl")
    chash = config_hash(config, generator_spec, discriminator_spec)

    if resume_from is not None:
        state = load_checkpoint(resume_from)
        found = config_hash(state.config, state.bundle.generator_spec, state.bundle.discriminator_spec)
        if found != chash:
            raise ConfigurationError(
                f"refusing to resume from {resume_from}: config hash {found[:12]} != {chash[:12]}"
            )
        log.info("resuming from %s at step %d", resume_from, state.step)
    else:
        state = init_state(config, generator_spec, discriminator_spec, dtype)

    spe = config.resolved_steps_per_epoch(len(dataset_x), len(dataset_y))
    total_steps = config.epochs * spe
    train_log.write(
        {
            "event": "config",
            "config": config.to_dict(),
            "generator": dataclasses.asdict(generator_spec),
            "discriminator": dataclasses.asdict(discriminator_spec),
            "config_hash": chash,
            "steps_per_epoch": spe,
            "total_steps": total_steps,
            "start_step": state.step,
        }
    )

    end = total_steps if stop_after is None else min(total_steps, stop_after)
    while state.step < end:
        state.epoch = state.step // spe
        xb = sample_batch(dataset_x, config.batch_size, state.rng)
        yb = sample_batch(dataset_y, config.batch_size, state.rng)
        state, records = train_step(state, xb, yb)
        train_log.write_many(records)
        if state.step % config.checkpoint_interval == 0 and state.step < total_steps:
            save_checkpoint(state, out / "checkpoints" / f"step_{state.step:07d}.ckpt")
        if state.step % 50 == 0:
            g = [r for r in records if r["network"] == "gen_G"][-1]
            log.info("step %d/%d  G total %.4f", state.step, total_steps, g["weighted_total"])
    state.epoch = state.step // spe if spe else 0

    if state.step < total_steps:
        return save_checkpoint(state, out / "checkpoints" / f"step_{state.step:07d}.ckpt")
    return save_checkpoint(state, out / "final.ckpt")
