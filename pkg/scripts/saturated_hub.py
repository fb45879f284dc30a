"""Overflow count at the worst-case u when the hub stamps an event every tick.

With 15 spokes at 64 msgs/ms the hub receives about one message per tick. Its
pwc then advances exactly as fast as its clock and keeps whatever lead it
inherited from a faster spoke, so block boundaries are crossed by +1 steps.
Raising the minimum spacing above one tick removes the effect.

    python scripts/saturated_hub.py
"""

from pwclock.analysis import theorem1_min_u
from pwclock.oracle import find_overflows
from pwclock.sim import SimParams, run


def main():
    print("delta  n   eps     u  events    overflows  overflow_edges")
    for delta in (1, 2, 4):
        for n in (8, 16):
            for eps in (6250, 400_000):
                u = theorem1_min_u(eps, delta, delta, delta)
                p = SimParams(n_processes=n, topology="hub_spoke", send_rate=64000.0, epsilon=eps, u=u,
                              delta_se=delta, delta_re=delta, delta_loc=delta, policy="unguarded", seed=12,
                              duration=1.1e6 / (2 * n * 64000.0))
                r, log = run(p)
                print(f"{delta:>5}  {n:<3} {eps:<7} {u:<2} {r.total_events:<9} {r.overflows:<10} "
                      f"{len(find_overflows(log))}", flush=True)


if __name__ == "__main__":
    main()
