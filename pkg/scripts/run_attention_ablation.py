"""Held-out mask IoU of the segmenter with and without skeleton attention."""

import argparse
import json

import numpy as np

from sbp.experiments import AttentionExperiment, run_attention_ablation


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--out", default="attention_ablation.json")
    args = ap.parse_args()
    rows = []
    for seed in args.seeds:
        r = run_attention_ablation(AttentionExperiment(seed=seed, epochs=args.epochs))
        print(f"seed {seed}: attention {r['iou_attention']:.4f} ones {r['iou_ones']:.4f} gap {r['gap']:+.4f}")
        rows.append(r)
    gap = float(np.mean([r["gap"] for r in rows]))
    print(f"mean gap {gap:+.4f}")
    with open(args.out, "w") as fh:
        json.dump({"runs": rows, "mean_gap": gap}, fh, indent=1)


if __name__ == "__main__":
    main()
