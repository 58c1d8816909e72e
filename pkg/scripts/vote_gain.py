"""Monte-Carlo voted accuracy over a grid of per-window accuracies."""

import argparse

from neurodecode.evaluate import vote_gain_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--windows", type=int, default=11)
    ap.add_argument("--classes", type=int, default=39)
    ap.add_argument("--trials", type=int, default=100_000)
    ap.add_argument("--p", type=float, nargs="+", default=[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7])
    args = ap.parse_args()
    print(f"n={args.windows} K={args.classes} trials={args.trials}")
    print("p_window  voted  ci95")
    for p in args.p:
        acc, hw = vote_gain_study(p, args.windows, args.classes, args.trials)
        print(f"{p:8.2f}  {acc:.4f}  {hw:.4f}")


if __name__ == "__main__":
    main()
