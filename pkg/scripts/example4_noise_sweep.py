"""Relative error of the L=4, D=10 identity-input example against the observation noise level.

Larger noise lets a few trials settle in spurious optima of the column
recursion, which dominates the trial average.

    python scripts/example4_noise_sweep.py --trials 100
"""

import argparse

from symlms.experiments import example4


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--sigmas", type=float, nargs="*", default=[1e-4, 1e-3, 3e-3, 1e-2])
    args = ap.parse_args(argv)
    print("sigma,max_relative_error")
    for s in args.sigmas:
        res = example4(seed=args.seed, trials=args.trials, sigma=s)
        print(f"{s:g},{res.summary['estimates']['max_relative_error']:.3e}")


if __name__ == "__main__":
    main()
