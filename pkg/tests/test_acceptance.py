"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import json
import socket
import statistics
import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from pwclock.analysis import EmpiricalFormulaParams, empirical_u, theorem1_min_u, theorem3_bound
from pwclock.hlc import HlcState, hlc_compare, hlc_encode
from pwclock.net import MAX_U64, WireMessage
from pwclock.oracle import edge_violations, find_chain_for, find_overflows, merge_agent_logs, verify_bounds, verify_causality
from pwclock.sim import FaultSpec, SimParams, Topology, csv_text, inject_fault, log_text, reset_ceiling, run, waitfree_search

MIN_EVENTS = 1_000_000


def run_until(p: SimParams, min_events: int):
    """Run, lengthening the simulated time until the log holds ``min_events``."""
    while True:
        r, log = run(p)
        if r.total_events >= min_events:
            return p, r, log
        p = replace(p, duration=p.duration * min_events / max(r.total_events, 1) * 1.1)


def check_bounds(p, log):
    """Spread and envelope checks against the skew the run actually had."""
    u = max(p.u_per_process)
    viol = verify_bounds(log, p.effective_epsilon, u)
    spread = log.samples.max(axis=1) - log.samples.min(axis=1)
    return viol, int(spread.max()), theorem3_bound(p.effective_epsilon, u)


@pytest.fixture(scope="module")
def grid_runs():
    """The causality grid: 3 topologies x N {8,16} x S {1K,64K} x eps {6.25,400} ms."""
    out = []
    for topo in Topology:
        for n in (8, 16):
            for rate in (1000.0, 64000.0):
                for eps in (6250, 400_000):
                    p = SimParams(n_processes=n, topology=topo, send_rate=rate, epsilon=eps, u=10, policy="wait",
                                  seed=11, duration=max(0.05, 1.1e6 / (2 * n * rate)))
                    p, r, log = run_until(p, MIN_EVENTS)
                    viol, spread, limit = check_bounds(p, log)
                    out.append(dict(p=p, r=r, causality=len(verify_causality(log, full=False)),
                                    spread=spread, limit=limit,
                                    lower_upper=sum(v.check != "spread" for v in viol),
                                    spread_viol=sum(v.check == "spread" for v in viol), samples=len(log.samples)))
                    del log
    return out


@pytest.fixture(scope="module")
def worst_case_runs():
    """Unguarded at the maximum rate with a pinned leader, u from the worst-case formula."""
    out = []
    for topo in Topology:
        for n in (8, 16):
            for eps in (6250, 400_000):
                u = theorem1_min_u(eps, 1, 1, 1)
                p = SimParams(n_processes=n, topology=topo, send_rate=64000.0, epsilon=eps, u=u, policy="unguarded",
                              seed=12, duration=1.1e6 / (2 * n * 64000.0))
                p, r, log = run_until(p, MIN_EVENTS)
                viol, spread, limit = check_bounds(p, log)
                out.append(dict(p=p, r=r, found=len(find_overflows(log)), spread=spread, limit=limit,
                                lower_upper=sum(v.check != "spread" for v in viol),
                                spread_viol=sum(v.check == "spread" for v in viol), samples=len(log.samples)))
                del log
    return out


def test_criterion_01_causality(grid_runs, criterion):
    bad = [x for x in grid_runs if x["causality"] or x["r"].causality_violations]
    small = [x for x in grid_runs if x["r"].total_events < MIN_EVENTS]
    topos = {x["p"].topology for x in grid_runs}
    ok = len(grid_runs) >= 20 and not bad and not small and topos == set(Topology)
    events = sum(x["r"].total_events for x in grid_runs)
    assert criterion(1, ok, f"{len(grid_runs)} configs, {events:,} events, {len(bad)} with violations, "
                            f"min events {min(x['r'].total_events for x in grid_runs):,}")


def test_criterion_02_worst_case_u_sufficiency(worst_case_runs, criterion):
    over = sum(x["r"].overflows for x in worst_case_runs)
    found = sum(x["found"] for x in worst_case_runs)
    leaders = sum(x["p"].topology is Topology.TIME_LEADER for x in worst_case_runs)
    ok = over == 0 and found == 0 and leaders > 0
    us = sorted({x["p"].u for x in worst_case_runs})
    assert criterion(2, ok, f"{len(worst_case_runs)} unguarded runs at u in {us}: kernel overflows {over}, "
                            f"overflow edges in logs {found}")


def test_criterion_03_spread_bound(grid_runs, worst_case_runs, criterion):
    runs = grid_runs + worst_case_runs
    viol = sum(x["spread_viol"] for x in runs)
    worst = max(x["spread"] / x["limit"] for x in runs)
    samples = sum(x["samples"] for x in runs)
    ok = viol == 0 and samples > 0
    assert criterion(3, ok, f"{samples:,} 1 ms samples over {len(runs)} runs, {viol} above eps + 2^(u+1); "
                            f"worst spread/limit {worst:.3f}")


def test_criterion_04_envelope(grid_runs, worst_case_runs, criterion):
    runs = grid_runs + worst_case_runs
    viol = sum(x["lower_upper"] for x in runs)
    events = sum(x["r"].total_events for x in runs)
    assert criterion(4, viol == 0, f"{events:,} events checked, {viol} outside [clpt, max_k clpt_k + 2^u]")


def test_criterion_05_zero_skew(criterion):
    p = SimParams(n_processes=8, epsilon=0, u=3, delta_se=8, delta_re=8, delta_loc=8, send_rate=16000.0,
                  local_rate=2000.0, duration=0.5, seed=5)
    p, r, log = run_until(p, 100_000)
    lpt = log.col("pwc") & 7
    ok = r.total_events >= 100_000 and not lpt.any() and r.bits_histogram[0] == r.total_events
    assert criterion(5, ok, f"{r.total_events:,} events, {int(np.count_nonzero(lpt))} with lpt > 0")


def test_criterion_06_chains(criterion):
    p = SimParams(n_processes=8, send_rate=16000.0, epsilon=6250, u=10, policy="unguarded", seed=6, duration=0.4)
    p, r, log = run_until(p, 100_000)
    mask = (1 << log.u) - 1
    pwc = log.col("pwc")
    targets = np.nonzero(pwc & mask)[0]
    missing = 0
    for f in targets:
        v = int(pwc[f] & mask)
        c = find_chain_for(log, int(f))
        if c is None or c.r != v + 1 or [log.pwc[e] for e in c.events] != list(range(pwc[f] - v, pwc[f] + 1)):
            missing += 1
    ok = r.overflows == 0 and r.total_events >= 100_000 and missing == 0 and len(targets) > 0
    assert criterion(6, ok, f"{r.total_events:,} events, overflows {r.overflows}, {len(targets):,} with lpt > 0, "
                            f"{missing} without a full chain, max lpt {int((pwc & mask).max())}")


def test_criterion_07_hlc_pitfall(grid_runs, criterion):
    e = hlc_encode(15, HlcState(15, 0))
    f = hlc_encode(14, HlcState(19, 0))
    pwc_bad = sum(x["causality"] for x in grid_runs)
    ok = hlc_compare(e, f) < 0 and e > f and pwc_bad == 0
    assert criterion(7, ok, f"packed e={e} f={f}: HLC order e<f, integer order e>f; "
                            f"PWC disagreements across the causality grid {pwc_bad}")


GRID = [(n, s, e) for n in (8, 16) for s in (1, 4, 16, 64) for e in (6250, 25_000, 100_000, 400_000)]


@pytest.fixture(scope="module")
def waitfree_grid():
    out = []
    for n, s, eps in GRID:
        p = SimParams(n_processes=n, send_rate=s * 1000.0, epsilon=eps, duration=10.0, seed=7, record=False)
        u, r = waitfree_search(p)
        out.append(dict(n=n, s=s, eps=eps, u=u, events=r.total_events,
                        formula=empirical_u(EmpiricalFormulaParams(s, eps / 1000, p.delta_se, p.delta_re))))
    return out


def test_criterion_08_waitfree_grid(waitfree_grid, criterion):
    us = [x["u"] for x in waitfree_grid]
    mx, med = max(us), statistics.median(us)
    by_rate = {s: sorted({x["u"] for x in waitfree_grid if x["s"] == s}) for s in (1, 4, 16, 64)}
    ok = mx <= 9 and med <= 6
    criterion(8, ok, f"{len(us)} configs x 10 s: max waitfree u {mx} (need <= 9), median {med} (need <= 6); "
                     f"u by S {by_rate}")
    assert ok


def test_criterion_09_empirical_formula(waitfree_grid, criterion):
    within = [abs(x["formula"] - x["u"]) <= 2 for x in waitfree_grid]
    share = sum(within) / len(within)
    worst = max(abs(x["formula"] - x["u"]) for x in waitfree_grid)
    assert criterion(9, share >= 0.8, f"formula within 2 bits on {sum(within)}/{len(within)} = {share:.0%} "
                                      f"(need >= 80%), worst miss {worst}")


def test_criterion_10_faults(criterion):
    base = SimParams(n_processes=8, send_rate=16000.0, epsilon=6250, u=8, policy="wait", seed=10, duration=0.5)
    t = 200_000
    value = reset_ceiling(base, 3, t) + 10**6
    r, log = run(inject_fault(base, FaultSpec.pwc_corruption(t, 3, value)))
    first = int(np.nonzero(log.col("reset"))[0][0]) if r.resets else len(log)
    post = [(e, f) for e, f in edge_violations(log) if e >= first]
    back = r.resets == 1 and log.clpt[first] <= log.pwc[first] <= log.clpt[first] + 2**8
    r2, _ = run(inject_fault(base, FaultSpec.negative_leap(t, 2, 1000)))
    ok = r.resets == 1 and not post and back and r2.causality_violations == 0
    assert criterion(10, ok, f"corruption: {r.resets} reset, {len(post)} post-reset violations; "
                             f"negative leap: {r2.causality_violations} violations over {r2.total_events:,} events")


def _free_ports(k):
    socks = [socket.socket(socket.AF_INET, socket.SOCK_DGRAM) for _ in range(k)]
    for s in socks:
        s.bind(("127.0.0.1", 0))
    ports = [s.getsockname()[1] for s in socks]
    for s in socks:
        s.close()
    return ports


def test_criterion_11_net_smoke(tmp_path, criterion):
    ports = _free_ports(3)
    procs, cfgs = [], []
    for k in range(3):
        doc = {"agent": {"agent_id": k + 1, "listen": ["127.0.0.1", ports[k]], "duration": 30, "u": 8,
                         "peers": [[m + 1, ["127.0.0.1", ports[m]]] for m in range(3) if m != k],
                         "log_path": str(tmp_path / f"agent{k}.log"), "report_path": str(tmp_path / f"agent{k}.json")}}
        path = tmp_path / f"agent{k}.yaml"
        path.write_text(json.dumps(doc))
        cfgs.append(doc["agent"])
        procs.append(subprocess.Popen([sys.executable, "-m", "pwclock.cli", "net", "agent", "--config", str(path)],
                                      stdout=subprocess.PIPE, stderr=subprocess.PIPE))
    codes = [p.wait(timeout=120) for p in procs]
    reports = [json.loads(open(c["report_path"]).read()) for c in cfgs]
    edge = sum(r["edge_violations"] for r in reports)
    nonmono = sum(r["non_increasing"] for r in reports)
    logs = [open(c["log_path"]) for c in cfgs]
    merged = merge_agent_logs(logs, [1, 2, 3], 8)
    for f in logs:
        f.close()
    offline = len(verify_causality(merged, full=False))
    rng = np.random.default_rng(11)
    wire_ok = all(WireMessage.decode(m.encode()) == m for m in
                  [WireMessage(int(rng.integers(1 << 16)), int(rng.integers(0, 1 << 63)) * 2 + int(rng.integers(2)),
                               int(rng.integers(0, 1 << 63)), int(rng.integers(1, 64))) for _ in range(10_000)]
                  + [WireMessage(65535, MAX_U64, MAX_U64, 255)])
    sent = sum(r["sent"] for r in reports)
    recv = sum(r["received"] for r in reports)
    ok = codes == [0, 0, 0] and edge == 0 and nonmono == 0 and offline == 0 and wire_ok and sent > 0 and recv > 0
    assert criterion(11, ok, f"3 agents x 30 s: sent {sent:,}, received {recv:,}, edge violations {edge}, "
                             f"non-increasing {nonmono}, merged {len(merged):,} events with {offline} violations, "
                             f"wire round trip {'ok' if wire_ok else 'broken'}")


def test_criterion_12_determinism(criterion):
    p = SimParams(n_processes=8, topology="hub_spoke", send_rate=16000.0, epsilon=25_000, u=5, policy="wait",
                  seed=2024, duration=0.2, local_rate=1000.0,
                  faults=[FaultSpec.negative_leap(50_000, 1, 700), FaultSpec.pwc_corruption(80_000, 2, 10**12)])
    r1, l1 = run(p)
    r2, l2 = run(p)
    a, b = csv_text(p, r1), csv_text(p, r2)
    la, lb = log_text(l1, with_vclock=True), log_text(l2, with_vclock=True)
    ok = a == b and la == lb
    assert criterion(12, ok, f"{r1.total_events:,} events, CSV {len(a)} bytes and log {len(la):,} bytes identical")
