"""Random-tree baseline as a function of leaf count.

For each n, scores `trials` random unrooted trees against a synthetic
ground truth on n leaves. Prints a CSV table of mean and 95% half-width for
nAS and nRF.

    python scripts/random_baseline.py --leaves 8,16,32,50,100 --trials 100
"""

import argparse

from morphophylo.metrics import random_baseline
from morphophylo.synth import generate_tree


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--leaves", default="8,16,32,50,100")
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--truths", type=int, default=1, help="ground-truth trees per leaf count")
    args = ap.parse_args()

    print("n,truth_seed,trials,nAS_mean,nAS_ci95,nRF_mean,nRF_ci95")
    for n in (int(v) for v in args.leaves.split(",")):
        for t in range(args.truths):
            truth = generate_tree(n, args.seed + t)
            r = random_baseline(truth, args.trials, args.seed + 1000 * t)
            print(f"{n},{args.seed + t},{r.trials},{r.nAS_mean:.4f},{r.nAS_ci95:.4f},"
                  f"{r.nRF_mean:.4f},{r.nRF_ci95:.4f}")


if __name__ == "__main__":
    main()
