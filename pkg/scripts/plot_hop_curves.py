"""Plot toward-target hop curves from a toy sweep summary (``toy_sweep.py --out``).

    python3 scripts/plot_hop_curves.py runs/toy_summary.json --out hop_curves.png
"""

import argparse
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("summary", type=Path)
    ap.add_argument("--out", type=Path, default=Path("hop_curves.png"))
    args = ap.parse_args(argv)
    rows = json.loads(args.summary.read_text())

    fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
    for ax, direction in zip(axes, ("X->Y", "Y->X")):
        for r in rows:
            t = r["curves"][direction]["toward_target"]
            style = "-" if "_h4_zeta2.5" in r["label"] else "--" if "zeta0" in r["label"] else ":"
            ax.plot(range(len(t)), t, style, marker="o", ms=3, label=r["label"])
        ax.axhline(0.8, color="grey", lw=0.5)
        ax.set_title(direction)
        ax.set_xlabel("hop")
    axes[0].set_ylabel("oracle score toward target")
    axes[1].legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    print(args.out)


if __name__ == "__main__":
    main()
