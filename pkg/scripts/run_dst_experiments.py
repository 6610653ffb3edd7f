"""Self-training experiments: component chain, mixing stability and labeled-size sweep."""

import argparse
import json

import numpy as np

from sbp.experiments import VARIANTS, DSTExperiment, dst_setup, run_dst_variant, tail_std


def component_chain(seed):
    setup = dst_setup(DSTExperiment(seed=seed))
    rows = {"baseline": run_dst_variant(setup, None)}
    for v in VARIANTS:
        rows[v] = run_dst_variant(setup, v, validate=(v == "fil"))
    rows["fixed"] = run_dst_variant(setup, "fil", validate=True, dynamic=False, fixed_alpha=4)
    return rows


def sweep(seed, ratio):
    setup = dst_setup(DSTExperiment(seed=seed, labeled_ratio=ratio))
    return {"baseline": run_dst_variant(setup, None), "fil": run_dst_variant(setup, "fil")}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--part", choices=["chain", "sweep", "all"], default="all")
    ap.add_argument("--out", default="dst_experiments.json")
    args = ap.parse_args()
    out = {}
    if args.part in ("chain", "all"):
        chain = {s: component_chain(s) for s in args.seeds}
        for s, rows in chain.items():
            print(f"seed {s}: " + " ".join(f"{k} {r['f']:.4f}" for k, r in rows.items()))
            print(f"  tail std dynamic {tail_std(rows['fil']['val_f']):.4f} fixed {tail_std(rows['fixed']['val_f']):.4f}")
        for k in ["baseline", *VARIANTS]:
            print(f"mean F {k}: {np.mean([chain[s][k]['f'] for s in args.seeds]):.4f}")
        out["chain"] = chain
    if args.part in ("sweep", "all"):
        res = {r: {s: sweep(s, r) for s in args.seeds} for r in (0.1, 0.9)}
        for r, by_seed in res.items():
            gain = np.mean([v["fil"]["f"] - v["baseline"]["f"] for v in by_seed.values()])
            print(f"labeled {r:.0%}: mean gain {gain:+.4f}")
        out["sweep"] = res
    with open(args.out, "w") as fh:
        json.dump(out, fh, indent=1, default=str)


if __name__ == "__main__":
    main()
