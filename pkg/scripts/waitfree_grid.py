"""Wait-free u over the desk-scale grid: N x S x eps, random topology.

Prints one line per config plus the max and median, and optionally writes a CSV.

    python scripts/waitfree_grid.py --seconds 10 --out grid.csv
    python scripts/waitfree_grid.py --latency-max 1000     # fixed 1 ms transit
"""

import argparse
import csv
import statistics
import time

from pwclock.analysis import predictions
from pwclock.sim import SimParams, waitfree_search


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seconds", type=float, default=10.0)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--n", type=int, nargs="+", default=[8, 16])
    ap.add_argument("--rates", type=int, nargs="+", default=[1, 4, 16, 64], help="msgs per node per ms")
    ap.add_argument("--eps-ms", type=float, nargs="+", default=[6.25, 25, 100, 400])
    ap.add_argument("--latency-min", type=int, default=1000)
    ap.add_argument("--latency-max", type=int, default=20000)
    ap.add_argument("--delta", type=int, default=1, help="delta_se = delta_re = delta_loc, in ticks")
    ap.add_argument("--topology", default="random")
    ap.add_argument("--out")
    args = ap.parse_args()

    rows = []
    for n in args.n:
        for s in args.rates:
            for e in args.eps_ms:
                p = SimParams(n_processes=n, send_rate=s * 1000.0, epsilon=int(e * 1000), duration=args.seconds,
                              seed=args.seed, topology=args.topology, latency_min=args.latency_min,
                              latency_max=args.latency_max, delta_se=args.delta, delta_re=args.delta,
                              delta_loc=args.delta, record=False)
                t0 = time.perf_counter()
                u, r = waitfree_search(p)
                pred = predictions(p.epsilon, p.delta_loc, p.delta_se, p.delta_re, p.send_rate, p.latency_min,
                                   p.latency_max)
                row = dict(n=n, rate=s, eps_ms=e, waitfree_u=u, events=r.total_events, **pred,
                           seconds=round(time.perf_counter() - t0, 1))
                rows.append(row)
                print(" ".join(f"{k}={v}" for k, v in row.items()), flush=True)
    us = [r["waitfree_u"] for r in rows]
    print(f"max {max(us)} median {statistics.median(us)}")
    if args.out:
        with open(args.out, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)


if __name__ == "__main__":
    main()
