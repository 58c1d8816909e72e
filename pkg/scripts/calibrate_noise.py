"""Sweep noise_std and report the channel-energy probe accuracy of the K=4 benchmark dataset.

    python3 scripts/calibrate_noise.py --noise 1.6 1.8 2.0 2.2 --gen-seeds 0 1 2 3
"""

import argparse

import numpy as np

from neurodecode.synth import SyntheticSpec, probe_accuracy_over_splits


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--noise", type=float, nargs="+", default=[1.6, 1.8, 1.9, 2.0, 2.1, 2.2, 2.4])
    ap.add_argument("--gen-seeds", type=int, nargs="+", default=[0, 1, 2, 3])
    ap.add_argument("--split-seeds", type=int, default=8)
    ap.add_argument("--ridge", type=float, default=1.0)
    ap.add_argument("--classes", type=int, default=4)
    ap.add_argument("--images", type=int, default=20)
    ap.add_argument("--subjects", type=int, default=2)
    args = ap.parse_args()

    print("noise_std  probe_mean  probe_sd")
    for noise in args.noise:
        means = []
        for g in args.gen_seeds:
            spec = SyntheticSpec(args.classes, args.images, args.subjects, noise_std=noise, seed=g)
            m, _ = probe_accuracy_over_splits(spec, split_seeds=range(args.split_seeds), ridge=args.ridge)
            means.append(m)
        print(f"{noise:9.3f}  {np.mean(means):10.4f}  {np.std(means):8.4f}")


if __name__ == "__main__":
    main()
