"""Run every experiment and write one summary per experiment under ``--out``.

    python scripts/reproduce_all.py --out results --seed 0
"""

import argparse
import json
import sys
import time
from pathlib import Path

from symlms.experiments import EXPERIMENTS, run_experiment


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--only", nargs="*", choices=sorted(EXPERIMENTS))
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ok = True
    for name in args.only or EXPERIMENTS:
        t0 = time.perf_counter()
        res = run_experiment(name, seed=args.seed)
        dt = time.perf_counter() - t0
        (out / f"{name}.json").write_text(json.dumps(res.summary, indent=2, sort_keys=True))
        for c in res.summary["checks"]:
            tag = "PASS" if c["pass"] else "FAIL"
            info = "" if c["gating"] else " (info)"
            print(f"[{tag}] {name}: {c['name']}{info}")
        print(f"{name}: {'pass' if res.passed else 'fail'} in {dt:.1f}s", file=sys.stderr)
        ok &= res.passed
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
