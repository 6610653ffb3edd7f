"""Detectors trained on GT polygons, boxes-as-polygons and box-supervised pseudo polygons."""

import argparse
import json

from sbp.experiments import BBSExperiment, run_bbs_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--train", type=int, default=200)
    ap.add_argument("--test", type=int, default=50)
    ap.add_argument("--det-epochs", type=int, default=30)
    ap.add_argument("--out", default="bbs_experiment.json")
    args = ap.parse_args()
    r = run_bbs_experiment(BBSExperiment(seed=args.seed, n_train=args.train, n_test=args.test, det_epochs=args.det_epochs))
    print(f"pseudo mask IoU {r['pseudo_mask_iou']:.4f}")
    for k in ("gt", "box", "pseudo"):
        print(f"F({k}) = {r['f_' + k]:.4f}")
    print(f"took {r['seconds']:.0f} s")
    with open(args.out, "w") as fh:
        json.dump(r, fh, indent=1)


if __name__ == "__main__":
    main()
