#!/usr/bin/env python3
"""Run the scenarios several times and summarise step pass rates and wall time.

    python3 scripts/run_scenarios.py --repeat 3
"""

import argparse
import collections
import json
import time

from flux.scenarios import light_show, silent_disco


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=1)
    ap.add_argument("--listeners", type=int, default=4)
    ap.add_argument("--group-sizes", type=int, nargs="+", default=[0, 2, 4])
    a = ap.parse_args(argv)
    runs = [("silent-disco", lambda: silent_disco(a.listeners))]
    runs += [(f"light-show/{g}", lambda g=g: light_show(g)) for g in a.group_sizes]
    all_ok = True
    for name, fn in runs:
        passes = collections.Counter()
        times = []
        for _ in range(a.repeat):
            t0 = time.monotonic()
            report = fn()
            times.append(time.monotonic() - t0)
            all_ok &= report.ok
            for s in report.steps:
                passes[s.name] += s.ok
        print(json.dumps({"scenario": name, "repeat": a.repeat, "mean_wall_s": round(sum(times) / len(times), 2),
                          "steps": {k: f"{v}/{a.repeat}" for k, v in passes.items()}}))
    return 0 if all_ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
