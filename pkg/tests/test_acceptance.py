"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 5 to 8 read trained toy models from the run cache in
``multihop.toy`` (``$MULTIHOP_TOY_CACHE``, else ``~/.cache/multihop/toy``).
On a cold cache they train the nine-run sweep first, which takes hours on
one CPU core; ``scripts/toy_sweep.py`` fills the same cache ahead of time.
"""

import math
import time

import numpy as np
import pytest
import torch

import oracles
from conftest import GRADCHECK_DISCRIMINATOR, GRADCHECK_GENERATOR, ConstantMap, record_criterion
from helpers import gradient_check, peak_step_memory, per_hop_losses, tiny_datasets
from multihop import losses
from multihop.checkpoint import bundle_arrays, load_bundle, save_bundle
from multihop.cli import main as cli_main
from multihop.domains import synth_generate
from multihop.inference import TranslationRequest, translate_with_bundle
from multihop.losses import LossWeights
from multihop.networks import (
    PAPER_DISCRIMINATOR,
    TINY_DISCRIMINATOR,
    TINY_GENERATOR,
    build_bundle,
    build_patch_discriminator,
    hop,
    hop_sequence,
)
from multihop.toy import DEFAULT_SEEDS, ToyRun, cached_report, default_cache_root
from multihop.training import TrainingConfig, load_checkpoint, train

REL = 1e-6
GRAD_TOL, GRAD_FRACTION, GRAD_COORDS = 1e-3, 0.99, 200
SLACK = 0.05
EVAL_HOPS = 8


def t64(a):
    return torch.as_tensor(np.asarray(a, dtype=np.float64))


# ---------------------------------------------------------------- criterion 1


def test_criterion_1_loss_oracles():
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    w = LossWeights()
    checks = {}

    def close(name, got, want):
        checks[name] = math.isclose(float(torch.as_tensor(got).detach()), want, rel_tol=REL, abs_tol=1e-12)

    for trial in range(5):
        a, b = rng.normal(size=(2, 2, 3, 5, 5))
        close(f"l1/{trial}", losses.l1_mean(t64(a), t64(b)), oracles.mean_abs_diff(a, b))
        close(f"smooth/{trial}", losses.smoothness_term(t64(a), t64(b)), oracles.mean_abs_diff(a, b))

        back = torch.nn.Conv2d(3, 3, 1).double()
        with torch.no_grad():
            back_out = back(t64(a)).numpy()
        close(f"cycle/{trial}", losses.cycle_term(back, t64(a), t64(b)), oracles.mean_abs_diff(back_out, b))

        real_map, fake_map = rng.normal(size=(2, 2, 1, 3, 3))
        close(f"adv_gen/{trial}", losses.adversarial_gen_term(ConstantMap(fake_map), t64(a)),
              oracles.mean_sq_dev(fake_map, 1.0))

        class TwoMaps(torch.nn.Module):
            def forward(self, x):
                return t64(real_map) if x is real else t64(fake_map)

        real = t64(a)
        close(f"adv_disc/{trial}", losses.adversarial_disc_term(TwoMaps(), real, t64(b)),
              oracles.mean_sq_dev(real_map, 1.0) + oracles.mean_sq(fake_map))

        h = int(rng.integers(1, 9))
        n = int(rng.integers(0, h + 1))
        for direction, target in (("X->Y", n / h), ("Y->X", (h - n) / h)):
            close(f"target/{direction}/{trial}", losses.hybridness_target(n, h, direction), target)
            close(f"hybrid/{direction}/{trial}", losses.hybrid_term(ConstantMap(fake_map), t64(a), target),
                  oracles.hybrid(fake_map, target))

        class ByDomain(torch.nn.Module):
            def forward(self, x):
                return t64(real_map) if float(x.sum()) == float(t64(a).sum()) else t64(fake_map)

        close(f"classifier/{trial}", losses.classifier_term(ByDomain(), t64(a), t64(b)),
              oracles.classifier(real_map, fake_map))

        parts = rng.uniform(0, 3, 4)
        close(f"weighted/{trial}", losses.weighted_total(w, *parts),
              oracles.weighted(10.0, 1.0, 1.0, 2.5, *parts))

    # The weighted identity on a real per-hop loss with the default weights.
    b = build_bundle(TINY_GENERATOR, TINY_DISCRIMINATOR, h=4, seed=3).to(torch.float64)
    x = t64(rng.uniform(-1, 1, (2, 3, 32, 32)))
    with torch.no_grad():
        total, terms, _ = losses.generator_hop_loss(b.gen_G, b.gen_F, b.disc_Y, b.disc_H, x, 2, 4, "X->Y", w)
    close("weighted/hop_loss", total, oracles.weighted(10.0, 1.0, 1.0, 2.5, *(float(terms[k]) for k in
                                                                          ("cycle", "adversarial", "hybrid", "smoothness"))))
    elapsed = time.perf_counter() - start
    failed = sorted(k for k, ok in checks.items() if not ok)
    passed = not failed and elapsed < 10.0
    record_criterion(1, passed, f"{len(checks) - len(failed)}/{len(checks)} oracle matches at rel {REL}, {elapsed:.1f}s"
                     + (f", mismatched: {failed}" if failed else ""))
    assert passed


# ---------------------------------------------------------------- criterion 2


def _gradcheck_setup():
    bundle = build_bundle(GRADCHECK_GENERATOR, GRADCHECK_DISCRIMINATOR, h=4, seed=0).to(torch.float64)
    rng = np.random.default_rng(0)
    x_real, y_real = (t64(rng.uniform(-1, 1, (2, 3, 8, 8))) for _ in range(2))
    # Hop 1 of 4: the previous images are the real inputs.
    fns = per_hop_losses(bundle, x_real, y_real, x_real, y_real, n=1, h=4)
    return bundle, fns


def test_criterion_2_gradient_check():
    start = time.perf_counter()
    bundle, fns = _gradcheck_setup()
    fractions = {}
    for name, fn in fns.items():
        errors, _ = gradient_check(getattr(bundle, name), fn, GRAD_COORDS, step=1e-4, seed=0)
        fractions[name] = float(np.mean(errors < GRAD_TOL))
    elapsed = time.perf_counter() - start

    # Diagnostic only: the same check with coordinates whose difference
    # quotient straddles an activation or L1 kink replaced by fresh samples.
    kink_free = {}
    for name, fn in fns.items():
        errors, skipped = gradient_check(getattr(bundle, name), fn, GRAD_COORDS, step=1e-4, seed=0,
                                         skip_kinks_in=list(bundle.networks().values()))
        kink_free[name] = (float(np.mean(errors < GRAD_TOL)), skipped)

    passed = all(f >= GRAD_FRACTION for f in fractions.values()) and elapsed < 120.0
    literal = ", ".join(f"{k} {v:.3f}" for k, v in fractions.items())
    smooth = ", ".join(f"{k} {v[0]:.3f} ({v[1]} skipped)" for k, v in kink_free.items())
    record_criterion(2, passed, f"fraction within {GRAD_TOL}: {literal}; {elapsed:.0f}s. "
                                f"Kink-free diagnostic: {smooth}")
    assert passed


# ---------------------------------------------------------------- criterion 3


def test_criterion_3_recurrence_identity_shape():
    start = time.perf_counter()
    gen = build_bundle(TINY_GENERATOR, TINY_DISCRIMINATOR, h=4, seed=1).gen_G
    x = np.random.default_rng(2).uniform(-1, 1, (2, 32, 32, 3)).astype(np.float32)
    zero = hop_sequence(gen, x, 0)
    identity = len(zero) == 1 and zero[0] is x
    seq = hop_sequence(gen, x, 8)
    recurrence = len(seq) == 9 and all(np.array_equal(seq[k + 1], hop(gen, seq[k])) for k in range(8))
    disc = build_patch_discriminator(PAPER_DISCRIMINATOR)
    with torch.no_grad():
        shape = tuple(disc(torch.zeros(1, 3, 128, 128)).shape)
    elapsed = time.perf_counter() - start
    passed = identity and recurrence and shape == (1, 1, 16, 16) and elapsed < 10.0
    record_criterion(3, passed, f"identity {identity}, recurrence to 8 {recurrence}, 128px map {shape}, {elapsed:.1f}s")
    assert passed


# ---------------------------------------------------------------- criterion 4


def test_criterion_4_hop_count_invariance(tmp_path):
    start = time.perf_counter()
    shapes, sizes = {}, {}
    for h in (2, 8):
        b = build_bundle(TINY_GENERATOR, TINY_DISCRIMINATOR, h=h, seed=0)
        shapes[h] = {k: v.shape for k, v in bundle_arrays(b).items()}
        sizes[h] = save_bundle(b, tmp_path / f"h{h}.ckpt").stat().st_size
    mem = {h: peak_step_memory(h) for h in (2, 8)}
    rel = abs(mem[8] - mem[2]) / mem[2]
    elapsed = time.perf_counter() - start
    passed = shapes[2] == shapes[8] and sizes[2] == sizes[8] and rel < 0.05 and elapsed < 60.0
    record_criterion(4, passed, f"shapes equal {shapes[2] == shapes[8]}, checkpoint bytes {sizes[2]} vs {sizes[8]}, "
                                f"peak activations {mem[2]} vs {mem[8]} ({rel:.1%}), {elapsed:.1f}s")
    assert passed


# ------------------------------------------------------------ criteria 5 to 8


@pytest.fixture(scope="module")
def sweep():
    """Reports for the reference runs and both ablations, keyed by (kind, seed)."""
    cache = default_cache_root()
    variants = {"ref": {}, "zeta0": {"zeta": 0.0}, "h2": {"h": 2}}
    out = {}
    for seed in DEFAULT_SEEDS:
        for kind, kw in variants.items():
            run = ToyRun(seed=seed, **kw)
            out[kind, seed] = (run, cached_report(run, cache, extra_hops=EVAL_HOPS))
    return out


def _translation_ok(run, report):
    """Criterion-5 checks for one run, as (passed, summary)."""
    ok, parts = True, []
    for direction, curve in report.curves.items():
        t = curve.toward_target()[: run.h + 1]
        monotone = all(b >= a - SLACK for a, b in zip(t, t[1:]))
        ok &= monotone and t[-1] >= 0.8 and report.preservation[direction] >= 0.5
        parts.append(f"{direction} final {t[-1]:.3f} monotone {monotone} pres {report.preservation[direction]:.3f}")
    return ok, "; ".join(parts)


@pytest.mark.slow
def test_criterion_5_toy_translation(sweep):
    verdicts = {s: _translation_ok(*sweep["ref", s]) for s in DEFAULT_SEEDS}
    n_ok = sum(ok for ok, _ in verdicts.values())
    passed = n_ok >= 2
    detail = " | ".join(f"seed {s}: {'ok' if ok else 'no'} ({msg})" for s, (ok, msg) in verdicts.items())
    record_criterion(5, passed, f"{n_ok}/3 seeds meet the thresholds. {detail}")
    assert passed


@pytest.mark.slow
def test_criterion_6_smoothness_ablation(sweep):
    rows = {s: (sweep["ref", s][1].smoothness_proxy(), sweep["zeta0", s][1].smoothness_proxy()) for s in DEFAULT_SEEDS}
    passed = all(with_s < without for with_s, without in rows.values())
    detail = ", ".join(f"seed {s}: {a:.4f} vs {b:.4f}" for s, (a, b) in rows.items())
    record_criterion(6, passed, f"inter-hop L1 with zeta 2.5 vs zeta 0: {detail}")
    assert passed


def _mean_preservation(report):
    return sum(report.preservation.values()) / len(report.preservation)


@pytest.mark.slow
def test_criterion_7_hop_count_ablation(sweep):
    rows = {s: (_mean_preservation(sweep["ref", s][1]), _mean_preservation(sweep["h2", s][1])) for s in DEFAULT_SEEDS}
    n_ok = sum(h4 >= h2 for h4, h2 in rows.values())
    passed = n_ok >= 2
    detail = ", ".join(f"seed {s}: {a:.3f} vs {b:.3f}" for s, (a, b) in rows.items())
    record_criterion(7, passed, f"preservation h=4 vs h=2 holds on {n_ok}/3 seeds: {detail}")
    assert passed


@pytest.mark.slow
def test_criterion_8_extrapolation(sweep):
    from multihop.toy import ensure_trained

    cache = default_cache_root()
    # The criterion-5 models: seeds that meet its thresholds.
    seeds = [s for s in DEFAULT_SEEDS if _translation_ok(*sweep["ref", s])[0]] or list(DEFAULT_SEEDS)
    ok, parts = True, []
    for s in seeds:
        run, report = sweep["ref", s]
        bundle = load_bundle(ensure_trained(run, cache))
        dx, dy = run.eval_data()
        for images, direction in ((dx.items, "X->Y"), (dy.items, "Y->X")):
            seqs = translate_with_bundle(bundle, images, TranslationRequest(direction, hops=EVAL_HOPS))
            valid = all(
                len(q) == EVAL_HOPS + 1 and all(i.shape == images[0].shape and np.isfinite(i).all()
                                                and np.abs(i).max() <= 1.0 for i in q.images)
                for q in seqs
            )
            t = report.curves[direction].toward_target()
            holds = valid and t[EVAL_HOPS] >= t[run.h] - SLACK
            ok &= holds
            parts.append(f"seed {s} {direction}: hop 8 {t[EVAL_HOPS]:.3f} vs hop 4 {t[run.h]:.3f}, valid {valid}")
    record_criterion(8, ok, "; ".join(parts))
    assert ok


# ---------------------------------------------------------------- criterion 9


def test_criterion_9_engineering_contracts(tmp_path):
    checks = {}
    # Checkpoint round trip: arrays bit-equal and re-saved bytes identical.
    b = build_bundle(TINY_GENERATOR, TINY_DISCRIMINATOR, h=4, seed=11)
    p1 = save_bundle(b, tmp_path / "a.ckpt")
    loaded = load_bundle(p1)
    a1, a2 = bundle_arrays(b), bundle_arrays(loaded)
    p2 = save_bundle(loaded, tmp_path / "b.ckpt")
    checks["checkpoint round trip"] = (
        a1.keys() == a2.keys() and all(np.array_equal(a1[k], a2[k]) and a1[k].dtype == a2[k].dtype for k in a1)
        and p1.read_bytes() == p2.read_bytes()
    )

    # Resume determinism: stop after 3 of 4 steps, resume, compare.
    dx, dy = tiny_datasets(6, 32)
    cfg = TrainingConfig(h=2, batch_size=2, epochs=1, steps_per_epoch=4, checkpoint_interval=2, seed=7)
    full = load_checkpoint(train(cfg, dx, dy, tmp_path / "full", TINY_GENERATOR, TINY_DISCRIMINATOR))
    part = train(cfg, dx, dy, tmp_path / "part", TINY_GENERATOR, TINY_DISCRIMINATOR, stop_after=3)
    resumed = load_checkpoint(train(cfg, dx, dy, tmp_path / "resumed", TINY_GENERATOR, TINY_DISCRIMINATOR,
                                    resume_from=part))
    fa, ra = bundle_arrays(full.bundle), bundle_arrays(resumed.bundle)
    checks["resume determinism"] = full.step == resumed.step and all(np.array_equal(fa[k], ra[k]) for k in fa)

    # CLI exit codes: 0 success, 2 usage or input error, 1 runtime failure.
    src = tmp_path / "synth"
    codes = {"synth": cli_main(["synth", "--count", "2", "--out", str(src)])}
    ckpt = p1
    codes["translate"] = cli_main(["translate", "--checkpoint", str(ckpt), "--input", str(src / "X"),
                                   "--hops", "2", "--out", str(tmp_path / "t")])
    codes["missing input"] = cli_main(["translate", "--checkpoint", str(ckpt), "--input", str(tmp_path / "none"),
                                       "--out", str(tmp_path / "t2")])
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not an archive")
    codes["corrupt checkpoint"] = cli_main(["translate", "--checkpoint", str(bad), "--input", str(src / "X"),
                                            "--out", str(tmp_path / "t3")])
    try:
        cli_main(["synth", "--count", "0", "--out", str(tmp_path / "s0")])
        codes["bad count"] = 0
    except SystemExit as exc:
        codes["bad count"] = exc.code
    want = {"synth": 0, "translate": 0, "missing input": 2, "corrupt checkpoint": 1, "bad count": 2}
    checks["cli exit codes"] = codes == want

    # Deterministic synthesis, in memory and through the CLI.
    from multihop.domains import SyntheticFamily

    fam = SyntheticFamily("disc-square", 32)
    same = all(np.array_equal(synth_generate(fam, d, 20, 5).items, synth_generate(fam, d, 20, 5).items) for d in "XY")
    outs = [tmp_path / "d1", tmp_path / "d2"]
    for o in outs:
        cli_main(["synth", "--family", "hue-shift", "--count", "5", "--seed", "3", "--out", str(o)])
    files = [sorted(p.relative_to(o) for p in o.rglob("*") if p.is_file()) for o in outs]
    same_files = files[0] == files[1] and all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in files[0])
    checks["deterministic synthesis"] = same and same_files

    passed = all(checks.values())
    record_criterion(9, passed, ", ".join(f"{k} {'ok' if v else 'FAILED'}" for k, v in checks.items())
                     + ("" if checks["cli exit codes"] else f" (codes {codes})"))
    assert passed
