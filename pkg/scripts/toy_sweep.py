"""Train and evaluate the desk-scale toy sweep, then summarise the ablations.

For each seed this runs the reference model (h=4, zeta=2.5), a no-smoothness
ablation (zeta=0) and a shorter chain (h=2) on the hue-shift family. Trained
runs are cached (see ``multihop.toy``), so rerunning only re-reads reports.

    python3 scripts/toy_sweep.py --cache runs/toy --out runs/toy_summary.json
"""

import argparse
import json
import logging
import time
from pathlib import Path

from multihop.toy import DEFAULT_SEEDS, ToyRun, cached_report, default_cache_root, sweep_runs


def summarise(report, run):
    curves = {}
    for d, c in report.curves.items():
        toward = c.toward_target()
        curves[d] = {
            "toward_target": [round(v, 4) for v in toward],
            "monotone": c.is_monotone(),
            "final": toward[run.h],
            "hop8": toward[8] if len(toward) > 8 else None,
            "mean_interhop_l1": sum(c.interhop_l1[: run.h]) / run.h,
        }
    return {"label": run.label, "preservation": report.preservation, "curves": curves}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cache", type=Path, default=None, help="run cache (default: $MULTIHOP_TOY_CACHE or ~/.cache)")
    ap.add_argument("--out", type=Path, default=Path("toy_summary.json"))
    ap.add_argument("--seeds", type=int, nargs="+", default=list(DEFAULT_SEEDS))
    ap.add_argument("--steps", type=int, default=2000)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")
    cache = args.cache or default_cache_root()

    results = []
    for run in sweep_runs(args.seeds, args.steps):
        t0 = time.time()
        # 8 hops for every run, so extrapolation is visible for h=4.
        report = cached_report(run, cache, extra_hops=8)
        row = summarise(report, run)
        row["seconds"] = round(time.time() - t0, 1)
        results.append(row)
        logging.info("%s: %s", run.label, json.dumps(row["preservation"]))

    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(results, indent=2))
    print(f"{'run':38s} {'X->Y':>6s} {'Y->X':>6s} {'pres':>11s} {'L1':>6s}")
    for r in results:
        c = r["curves"]
        pres = "/".join(f"{v:.2f}" for v in r["preservation"].values())
        l1 = sum(v["mean_interhop_l1"] for v in c.values()) / len(c)
        print(f"{r['label']:38s} {c['X->Y']['final']:6.3f} {c['Y->X']['final']:6.3f} {pres:>11s} {l1:6.3f}")


if __name__ == "__main__":
    main()
