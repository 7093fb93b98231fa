#!/usr/bin/env python3
"""Raw vs middleware over a grid of payload sizes and message counts.

Writes one JSON line per (size, n, transport) cell:

    python3 scripts/run_bench_grid.py --sizes 100 3500 --counts 500 1000 --out results/grid.jsonl
"""

import argparse
import json
import sys

from flux.bench import SIZES, BenchConfig, rss_growth_pct, run_pair


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[100, 3500], choices=SIZES)
    ap.add_argument("--counts", type=int, nargs="+", default=[500, 1000])
    ap.add_argument("--transports", nargs="+", default=["tcp"], choices=("tcp", "udp"))
    ap.add_argument("--interval-ms", type=float, default=10.0)
    ap.add_argument("--out", help="append JSON lines here instead of stdout")
    a = ap.parse_args(argv)
    sink = open(a.out, "a", encoding="utf-8") if a.out else sys.stdout
    try:
        for transport in a.transports:
            for size in a.sizes:
                for n in a.counts:
                    out = run_pair(BenchConfig(n, size, a.interval_ms, transport))
                    mw = out["middleware"]
                    row = {
                        "transport": transport, "size": size, "n": n,
                        "overhead_pct": round(out["overhead_pct"], 2),
                        "raw_us_per_msg": round(out["raw"]["mean_per_msg_ms"] * 1000, 2),
                        "mw_us_per_msg": round(mw["mean_per_msg_ms"] * 1000, 2),
                        "mw_delivered": mw["delivered"], "mw_in_order": mw["in_order"],
                        "mw_loss_rate": mw["loss_rate"],
                        "sink_rss_growth_pct": round(rss_growth_pct(mw["rss"]["sink_early"],
                                                                    mw["rss"]["sink_late"]), 2),
                    }
                    print(json.dumps(row), file=sink, flush=True)
    finally:
        if a.out:
            sink.close()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
