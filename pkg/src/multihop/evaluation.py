"""Hop-wise membership curves, input preservation and ablation comparison.

Membership is measured with the synthetic families' analytic oracles and
preservation with pixel L1 similarity, in place of a pretrained segmenter and
a learned perceptual metric. Means use ``math.fsum`` so that the order in
which items are aggregated does not change the reported numbers.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_bundle
from .domains import oracle_scores
from .errors import ContractViolation
from .inference import TranslationRequest, translate_with_bundle
from .losses import X_TO_Y, Y_TO_X
from .networks import ModelBundle

REPORT_HEADER = (
    "Desk-scale evaluation: membership = analytic domain oracle of the synthetic "
    "family; preservation = 1 - mean|input - output| / 2 in pixel space. No learned "
    "segmentation or perceptual-similarity networks are used."
)


def fmean(values):
    values = [float(v) for v in values]
    return math.fsum(values) / len(values)


@dataclass
class HopCurve:
    scores: list  # mean oracle score per hop, index 0 = raw inputs
    sample_count: int
    family_id: str
    direction: str
    interhop_l1: list = field(default_factory=list)  # entry k-1: mean |hop k - hop k-1|

    def toward_target(self):
        """Scores re-oriented so that 1 is always the target domain."""
        if self.direction == X_TO_Y:
            return list(self.scores)
        return [1.0 - s for s in self.scores]

    def is_monotone(self, slack=0.05):
        t = self.toward_target()
        return all(b >= a - slack for a, b in zip(t, t[1:]))


@dataclass
class EvalReport:
    curves: dict  # direction -> HopCurve
    preservation: dict  # direction -> similarity in [0, 1] at the final hop
    membership: dict  # direction -> target-domain membership of final hops, in [0, 1]
    final_hop: int
    provenance: dict = field(default_factory=dict)

    def smoothness_proxy(self):
        """Mean inter-hop L1 over hops 1..final_hop, averaged over directions."""
        per_dir = [fmean(c.interhop_l1[: self.final_hop]) for c in self.curves.values()]
        return fmean(per_dir)

    def to_dict(self):
        return {
            "header": REPORT_HEADER,
            "final_hop": self.final_hop,
            "preservation": self.preservation,
            "membership": self.membership,
            "smoothness_proxy": self.smoothness_proxy(),
            "curves": {d: asdict(c) for d, c in self.curves.items()},
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            curves={k: HopCurve(**v) for k, v in d["curves"].items()},
            preservation=d["preservation"],
            membership=d["membership"],
            final_hop=d["final_hop"],
            provenance=d.get("provenance", {}),
        )

    def save(self, out_dir):
        """Write ``report.json`` and a plain ``hop_curve.csv`` table."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(json.dumps(self.to_dict(), indent=2))
        with (out_dir / "hop_curve.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["direction", "hop", "mean_score", "interhop_l1"])
            for d, c in self.curves.items():
                for k, s in enumerate(c.scores):
                    l1 = c.interhop_l1[k - 1] if k > 0 else ""
                    w.writerow([d, k, f"{s:.6f}", f"{l1:.6f}" if l1 != "" else ""])
        return out_dir / "report.json"


def preservation_score(inputs, outputs):
    """1 - mean|input - output| / 2, in [0, 1] for images in [-1, 1]."""
    a = np.asarray(inputs, dtype=np.float64)
    b = np.asarray(outputs, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractViolation(f"shape mismatch {a.shape} vs {b.shape}")
    per_item = np.abs(a - b).reshape(len(a), -1).mean(axis=1) if a.ndim == 4 else [np.abs(a - b).mean()]
    return 1.0 - fmean(per_item) / 2.0


def _bundle(checkpoint):
    return checkpoint if isinstance(checkpoint, ModelBundle) else load_bundle(checkpoint)


def _direction(dataset):
    return X_TO_Y if dataset.domain_label == "X" else Y_TO_X


def _sequence_stacks(bundle, dataset, family, n_hops):
    if dataset.image_size != family.image_size:
        raise ContractViolation(
            f"dataset is {dataset.image_size}px but the family is {family.image_size}px"
        )
    request = TranslationRequest(_direction(dataset), n_hops, emit_intermediates=True)
    seqs = translate_with_bundle(bundle, dataset.items, request)
    return [np.stack([s.images[k] for s in seqs]) for k in range(n_hops + 1)]


def _curve_from_stacks(stacks, dataset, family):
    scores = [fmean(oracle_scores(st, family)) for st in stacks]
    l1 = [
        fmean(np.abs(stacks[k] - stacks[k - 1]).reshape(len(dataset), -1).mean(axis=1))
        for k in range(1, len(stacks))
    ]
    return HopCurve(scores, len(dataset), family.family_id, _direction(dataset), l1)


def hop_curve(checkpoint, dataset, family, n_hops):
    """Translate every item ``n_hops`` hops and average the oracle at each hop."""
    if n_hops < 0:
        raise ContractViolation("n_hops must be >= 0")
    stacks = _sequence_stacks(_bundle(checkpoint), dataset, family, n_hops)
    return _curve_from_stacks(stacks, dataset, family)


def evaluate(checkpoint, datasets, family, n_hops=None, final_hop=None, provenance=None):
    """EvalReport over one dataset per direction.

    ``final_hop`` (default: the trained hop count) is where preservation and
    membership are read; curves extend to ``n_hops`` (default ``final_hop``).
    """
    bundle = _bundle(checkpoint)
    final_hop = bundle.trained_hop_count if final_hop is None else final_hop
    n_hops = max(final_hop, n_hops or 0)
    curves, pres, memb = {}, {}, {}
    for ds in datasets:
        stacks = _sequence_stacks(bundle, ds, family, n_hops)
        curve = _curve_from_stacks(stacks, ds, family)
        d = curve.direction
        curves[d] = curve
        pres[d] = preservation_score(stacks[0], stacks[final_hop])
        memb[d] = curve.toward_target()[final_hop]
    prov = {"trained_hop_count": bundle.trained_hop_count, **bundle.metadata}
    prov.update(provenance or {})
    return EvalReport(curves, pres, memb, final_hop, prov)


def compare_ablations(report_a: EvalReport, report_b: EvalReport):
    """Deltas are ``b - a`` for every shared metric."""
    directions = sorted(set(report_a.curves) & set(report_b.curves))
    out = {"preservation": {}, "membership": {}, "curve": {}}
    for d in directions:
        out["preservation"][d] = report_b.preservation[d] - report_a.preservation[d]
        out["membership"][d] = report_b.membership[d] - report_a.membership[d]
        ca, cb = report_a.curves[d].scores, report_b.curves[d].scores
        out["curve"][d] = [b - a for a, b in zip(ca, cb)]
    sa, sb = report_a.smoothness_proxy(), report_b.smoothness_proxy()
    out["smoothness_proxy"] = {"a": sa, "b": sb, "delta": sb - sa}
    out["interhop_l1"] = {
        "a": {d: c.interhop_l1[: report_a.final_hop] for d, c in report_a.curves.items()},
        "b": {d: c.interhop_l1[: report_b.final_hop] for d, c in report_b.curves.items()},
    }
    return out
