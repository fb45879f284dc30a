"""Command-line entry point.

Exit codes: 0 clean, 1 a checked property was violated, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Optional, Sequence

from . import __version__, analysis, hlc, sim
from .config import ConfigError, load_config
from .net import NetError, SyntheticTransport, measure_delta, run_agent
from .oracle import export_log

OK, VIOLATION, USAGE = 0, 1, 2

SUMMARY_KEYS = ["n_processes", "topology", "epsilon", "delta_se", "delta_re", "delta_loc", "latency_min",
                "latency_max", "send_rate", "duration", "seed"]


class UsageError(Exception):
    pass


def _write_sidecar(path: str, **meta) -> None:
    meta.setdefault("version", __version__)
    with open(path + ".meta.json", "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def _ensure_parent(path: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)


# --- sim run ---------------------------------------------------------------------------


def cmd_sim_run(config: str, seed: Optional[int], out: str, log: Optional[str] = None) -> int:
    cfg = load_config(config)
    params = cfg.expand()
    if len(params) != 1:
        raise UsageError("sim run takes a config without sweep lists; use sim sweep")
    p = params[0] if seed is None else replace(params[0], seed=seed)
    t0 = time.perf_counter()
    result, ev = sim.run(p)
    _ensure_parent(out)
    with open(out, "w", newline="") as f:
        sim.write_csv([sim.csv_row(p, result)], f)
    log_path = log or (out + ".log" if cfg.event_log else None)
    if log_path and ev is not None:
        with open(log_path, "w") as f:
            export_log(ev, f, with_vclock=cfg.with_vclock)
    _write_sidecar(out, seconds=round(time.perf_counter() - t0, 3), verified=result.verified,
                   event_log=log_path)
    return OK if result.violations == 0 else VIOLATION


# --- sim sweep -------------------------------------------------------------------------


def _sweep_one(args) -> tuple[dict, Optional[int], list[int]]:
    p, waitfree = args
    if waitfree:
        u, _ = sim.waitfree_search(p)
        p = replace(p, u=u, policy=sim.OverflowPolicy.unguarded())
    r, _ = sim.run(replace(p, record=False))
    return sim.csv_row(p, r), (u if waitfree else None), r.bits_histogram


def summary_row(row: dict, search_u: Optional[int] = None) -> dict:
    hist = [int(row[f"bits_{i}"]) for i in range(sim.HIST_CSV_BITS)]
    out = {k: row[k] for k in SUMMARY_KEYS}
    out["u"] = row["u"]
    clean = int(row["overflows"]) == 0
    out["waitfree_u"] = analysis.waitfree_u(hist) if sum(hist) else ""
    out["waitfree_exact"] = int(clean)
    if search_u is not None:
        out["search_u"] = search_u
    pred = analysis.predictions(float(row["epsilon"]), float(row["delta_loc"]), float(row["delta_se"]),
                                float(row["delta_re"]), float(row["send_rate"]), float(row["latency_min"]),
                                float(row["latency_max"]))
    for k, v in pred.items():
        out[k] = "" if v is None else v
        out[f"{k}_delta"] = "" if v is None or out["waitfree_u"] == "" else v - out["waitfree_u"]
    out["max_bits"] = row["max_bits"]
    out["total_events"] = row["total_events"]
    return out


def _write_dicts(path: str, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as f:
        if not rows:
            return
        w = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _long_rows(rows: Sequence[dict], hists: Sequence[Sequence[int]]) -> list[dict]:
    out = []
    for k, h in enumerate(hists):
        for bits, count in enumerate(h):
            if count:
                out.append({"config": k, "bits": bits, "count": count})
    return out


def cmd_sweep(config: str, out_dir: str, jobs: int = 1) -> int:
    cfg = load_config(config)
    params = cfg.expand()
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()
    work = [(p, cfg.waitfree) for p in params]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_one, work))  # map keeps config order
    else:
        results = [_sweep_one(w) for w in work]
    rows = [r[0] for r in results]
    with open(os.path.join(out_dir, "runs.csv"), "w", newline="") as f:
        sim.write_csv(rows, f)
    _write_dicts(os.path.join(out_dir, "summary.csv"), [summary_row(r, u) for r, u, _ in results])
    _write_dicts(os.path.join(out_dir, "bits_long.csv"), _long_rows(rows, [h for _, _, h in results]))
    _write_sidecar(os.path.join(out_dir, "summary.csv"), seconds=round(time.perf_counter() - t0, 3),
                   configs=len(rows), jobs=jobs)
    return OK if all(int(r["violations"]) == 0 for r in rows) else VIOLATION


# --- analyze -----------------------------------------------------------------------------


def cmd_analyze(csv_in: str, out: str, resimulate: bool = False) -> int:
    try:
        with open(csv_in, newline="") as f:
            rows = list(csv.DictReader(f))
    except OSError as e:
        raise UsageError(f"cannot read {csv_in}: {e}") from e
    if not rows:
        raise UsageError(f"{csv_in} holds no simulator rows")
    missing = set(sim.CSV_COLUMNS) - set(rows[0])
    if missing:
        raise UsageError(f"{csv_in} is not a simulator CSV (missing {sorted(missing)[:3]}...)")
    summary, hists = [], []
    for row in rows:
        hist = [int(row[f"bits_{i}"]) for i in range(sim.HIST_CSV_BITS)]
        s = summary_row(row)
        u = int(row["u"])
        s["delayed_fraction_est"] = analysis.delayed_fraction(hist, min(u, sim.HIST_CSV_BITS)) if sum(hist) else ""
        if resimulate:
            d = {k: _csv_value(row[k]) for k in sim.PARAM_COLUMNS}
            p = sim.params_from_dict(d)
            r, _ = sim.run(replace(p, policy=sim.OverflowPolicy.wait(), record=False))
            s["delayed_exact"] = r.delayed
            s["delayed_fraction_exact"] = r.delayed / max(1, r.total_events)
        summary.append(s)
        hists.append(hist)
    _ensure_parent(out)
    _write_dicts(out, summary)
    base, _ = os.path.splitext(out)
    _write_dicts(base + "_long.csv", _long_rows(rows, hists))
    return OK


def _csv_value(text: str):
    if text == "":
        return None
    if text in ("True", "False"):
        return text == "True"
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


# --- hlc demo ------------------------------------------------------------------------------


def cmd_hlc_demo() -> int:
    e_state, f_state = hlc.HlcState(15, 0), hlc.HlcState(19, 0)
    e, f = hlc.hlc_encode(15, e_state), hlc.hlc_encode(14, f_state)
    hlc_order = hlc.hlc_compare(e, f)
    print(f"e: pt=15 l=15 c=0 -> {e}")
    print(f"f: pt=14 l=19 c=0 -> {f}")
    # the same two events under PWC: e is sent, f receives it
    from .clock import ManualClockSource, PwcClock
    src_e, src_f = ManualClockSource(15 << 4), ManualClockSource(14 << 4)
    pe = PwcClock(4, src_e).on_send()
    pf = PwcClock(4, src_f).on_receive(pe)
    pwc_ok = pe < pf
    print(f"PWC (u=4): e={pe} f={pf}")
    hlc_txt = "e < f" if hlc_order < 0 else "e >= f"
    int_txt = "e > f" if e > f else "e <= f"
    print(f"HLC order: {hlc_txt}; integer order: {int_txt}; PWC: {'consistent' if pwc_ok else 'inconsistent'}")
    return OK if hlc_order < 0 and e > f and pwc_ok else VIOLATION


# --- net ---------------------------------------------------------------------------------------


def _endpoint(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise UsageError(f"bad endpoint {text!r}; expected host:port")
    return host, int(port)


def cmd_net_agent(config: str) -> int:
    cfg = load_config(config)
    agent = cfg.agent_config()
    report = run_agent(agent)
    print(report.to_json())
    return OK if report.edge_violations == 0 and report.non_increasing == 0 else VIOLATION


def cmd_net_measure(role: str, peers: Sequence[str], seconds: float, sizes: Sequence[int],
                    self_test: bool = False) -> int:
    transport = SyntheticTransport(per_msg_ns=1000) if self_test else None
    eps = [_endpoint(p) for p in peers]
    if self_test and not eps:
        eps = [("127.0.0.1", 9)]
    fit = measure_delta(role, eps, seconds, sizes, transport=transport)
    print(json.dumps({"role": role, "const1_ns": fit.const1_ns, "const2_ns_per_byte": fit.const2_ns_per_byte,
                      "per_message_ns": fit.per_message_ns, "counts": fit.counts}, sort_keys=True))
    return OK


# --- argument parsing ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pwclock", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    sp = sub.add_parser("sim", help="run simulations")
    ssub = sp.add_subparsers(dest="sim_cmd", required=True)
    r = ssub.add_parser("run", help="one simulation, one CSV row")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", required=True, help="CSV path")
    r.add_argument("--log", help="event log path (line format)")
    s = ssub.add_parser("sweep", help="cross product of the config's sweep lists")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--jobs", type=int, default=1)

    a = sub.add_parser("analyze", help="summarise a simulator CSV")
    a.add_argument("--in", dest="csv_in", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--resimulate", action="store_true", help="rerun each row with the wait policy")

    sub.add_parser("hlc-demo", help="show why packed HLC values cannot be compared as integers")

    n = sub.add_parser("net", help="UDP harness")
    nsub = n.add_subparsers(dest="net_cmd", required=True)
    ag = nsub.add_parser("agent")
    ag.add_argument("--config", required=True)
    m = nsub.add_parser("measure")
    m.add_argument("--role", choices=["send", "receive"], required=True)
    m.add_argument("--peers", default="", help="comma separated host:port list")
    m.add_argument("--seconds", type=float, default=10.0)
    m.add_argument("--sizes", default="1,1400")
    m.add_argument("--self-test", action="store_true", help="use a synthetic 1 us/message transport")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return USAGE if e.code else OK
    try:
        if args.cmd == "sim" and args.sim_cmd == "run":
            return cmd_sim_run(args.config, args.seed, args.out, args.log)
        if args.cmd == "sim":
            return cmd_sweep(args.config, args.out_dir, args.jobs)
        if args.cmd == "analyze":
            return cmd_analyze(args.csv_in, args.out, args.resimulate)
        if args.cmd == "hlc-demo":
            return cmd_hlc_demo()
        if args.net_cmd == "agent":
            return cmd_net_agent(args.config)
        sizes = [int(x) for x in args.sizes.split(",") if x]
        peers = [x for x in args.peers.split(",") if x]
        return cmd_net_measure(args.role, peers, args.seconds, sizes, args.self_test)
    except (UsageError, ConfigError, sim.SimError, NetError) as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE


if __name__ == "__main__":
    sys.exit(main())
