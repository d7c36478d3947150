#!/usr/bin/env python3
"""Generate a small synthetic rgb/thermal/gt tree for experiments."""

import argparse

from triflownet.data import make_synthetic_dataset


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("root", help="output directory (RGB/, T/, GT/ are created)")
    parser.add_argument("--pairs", type=int, default=8)
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    root = make_synthetic_dataset(args.root, n=args.pairs, size=args.size,
                                  seed=args.seed)
    print(f"wrote {args.pairs} pairs under {root}")


if __name__ == "__main__":
    main()
