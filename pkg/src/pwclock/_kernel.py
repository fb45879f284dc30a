"""Jitted event loop for the simulator.

The stamping rules are compiled from the same functions the library uses
(:mod:`pwclock.clock`), so the simulator and ``PwcClock`` cannot drift apart.
"""

import heapq

import numpy as np
from numba import njit

from . import clock

_mask = njit(cache=True)(clock.mask_bits)
_next_local = njit(cache=True)(clock.next_local)
_next_receive = njit(cache=True)(clock.next_receive)
_overflow_wait = njit(cache=True)(clock.overflow_wait)
_bits_needed = njit(cache=True)(clock.bits_needed)

INF = 1 << 62

# counter slots
C_EVENTS, C_DELAYED, C_DISCARDED, C_OVERFLOWS, C_RESETS, C_EDGE_VIOL, C_TRUNCATED, C_SAMPLES = range(8)
N_COUNTERS = 8


@njit(cache=True)
def physical_time(off, j, t, knot, f_at, f_proc, f_val):
    k = t // knot
    if k >= off.shape[1] - 1:
        k = off.shape[1] - 2
    frac = (t - k * knot) / knot
    o = off[j, k] + (off[j, k + 1] - off[j, k]) * frac
    pt = t + np.int64(np.floor(o))
    for i in range(f_at.shape[0]):
        if f_proc[i] == j and f_at[i] <= t:
            pt += f_val[i]
    return pt


@njit(cache=True)
def _pick_dest(topo, n, j):
    if topo == 2:
        if j == 0:
            return np.random.randint(1, n)
        return 0
    d = np.random.randint(0, n - 1)
    if d >= j:
        d += 1
    return d


@njit(cache=True)
def _push_out_of_windows(t, w_start, w_end):
    moved = True
    while moved:
        moved = False
        for i in range(w_start.shape[0]):
            if w_start[i] <= t <= w_end[i]:
                t = w_end[i] + 1
                moved = True
    return t


@njit(cache=True)
def _sample(samples, row, pwc, s, n, u_arr, off, knot, f_at, f_proc, f_val, reset_on, reset_eps, counters,
            reset_pending):
    # a sample instant is also a tick on which every process runs its sanity check
    for j in range(n):
        c = _mask(physical_time(off, j, s, knot, f_at, f_proc, f_val), u_arr[j])
        if reset_on and pwc[j] > c + reset_eps + (np.int64(1) << u_arr[j]):
            pwc[j] = c
            counters[C_RESETS] += 1
            reset_pending[j] = 1
        samples[row, j] = max(pwc[j], c)


@njit(cache=True)
def simulate(n, topo, duration, u_arr, d_se, d_re, d_loc, lat_min, lat_max, send_mean, local_mean,
             policy, discard_thr, seed, off, knot, f_at, f_proc, f_val, c_at, c_proc, c_val,
             w_start, w_end, reset_on, reset_eps, sample_period, record, cap, stop_on_overflow):
    np.random.seed(seed)
    counters = np.zeros(N_COUNTERS, dtype=np.int64)
    hist = np.zeros(65, dtype=np.int64)
    n_samples_cap = duration // sample_period + 2
    samples = np.zeros((n_samples_cap, n), dtype=np.int64)
    rcap = cap if record else 1
    ev_proc = np.empty(rcap, dtype=np.int64)
    ev_kind = np.empty(rcap, dtype=np.int8)
    ev_pl = np.empty(rcap, dtype=np.int64)
    ev_pr = np.empty(rcap, dtype=np.int64)
    ev_pwc = np.empty(rcap, dtype=np.int64)
    ev_clpt = np.empty(rcap, dtype=np.int64)
    ev_pt = np.empty(rcap, dtype=np.int64)
    ev_time = np.empty(rcap, dtype=np.int64)
    ev_cmax = np.empty(rcap, dtype=np.int64)
    ev_reset = np.zeros(rcap, dtype=np.int8)

    pwc = np.empty(n, dtype=np.int64)
    for j in range(n):
        # one below clpt: the first event is then stamped clpt itself
        pwc[j] = _mask(physical_time(off, j, 0, knot, f_at, f_proc, f_val), u_arr[j]) - 1
    last_pwc = np.full(n, -1, dtype=np.int64)
    # initialisation at t = 0 counts as the last activity, so the first event keeps the usual spacing
    last_t = np.zeros(n, dtype=np.int64)
    last_eid = np.full(n, -1, dtype=np.int64)
    blocked = np.zeros(n, dtype=np.int64)
    next_send = np.full(n, INF, dtype=np.int64)
    next_loc = np.full(n, INF, dtype=np.int64)
    send_held = np.zeros(n, dtype=np.int8)
    loc_held = np.zeros(n, dtype=np.int8)
    for j in range(n):
        if send_mean > 0:
            next_send[j] = np.int64(np.random.exponential(send_mean))
        if local_mean > 0:
            next_loc[j] = np.int64(np.random.exponential(local_mean))

    heap = [(np.int64(0), np.int64(0), np.int64(0), np.int64(0), np.int64(0))]
    heapq.heappop(heap)
    # per-process FIFO inbox of delivered messages: (due time, pwc.m, send event id)
    ib_cap = 64
    ib = np.zeros((n, ib_cap, 3), dtype=np.int64)
    ib_head = np.zeros(n, dtype=np.int64)
    ib_len = np.zeros(n, dtype=np.int64)
    ib_held = np.zeros(n, dtype=np.int8)
    reset_pending = np.zeros(n, dtype=np.int8)
    msg_id = 0
    next_sample = 0
    n_samples = 0
    corr = 0
    eid = 0

    while True:
        th = heap[0][0] if len(heap) > 0 else INF
        tr_best = INF
        jr = -1
        ts_best = INF
        js = -1
        tl_best = INF
        jl = -1
        for j in range(n):
            if ib_len[j] > 0:
                tr = max(ib[j, ib_head[j], 0], last_t[j] + d_re, blocked[j])
                if w_start.shape[0] > 0:
                    tr = _push_out_of_windows(tr, w_start, w_end)
                if tr < tr_best:
                    tr_best = tr
                    jr = j
            if next_send[j] < INF:
                ts = max(next_send[j], last_t[j] + d_se, blocked[j])
                if w_start.shape[0] > 0:
                    ts = _push_out_of_windows(ts, w_start, w_end)
                if ts < ts_best:
                    ts_best = ts
                    js = j
            if next_loc[j] < INF:
                tl = max(next_loc[j], last_t[j] + d_loc, blocked[j])
                if w_start.shape[0] > 0:
                    tl = _push_out_of_windows(tl, w_start, w_end)
                if tl < tl_best:
                    tl_best = tl
                    jl = j
        t = min(tr_best, ts_best, tl_best)
        if th <= t and th <= duration:
            # deliver into the destination's inbox before deciding what runs next
            item = heapq.heappop(heap)
            d = item[2]
            if ib_len[d] == ib_cap:
                grown = np.zeros((n, ib_cap * 2, 3), dtype=np.int64)
                for k in range(n):
                    for q in range(ib_len[k]):
                        grown[k, q] = ib[k, (ib_head[k] + q) % ib_cap]
                    ib_head[k] = 0
                ib = grown
                ib_cap *= 2
            slot = (ib_head[d] + ib_len[d]) % ib_cap
            ib[d, slot, 0] = item[0]
            ib[d, slot, 1] = item[3]
            ib[d, slot, 2] = item[4]
            ib_len[d] += 1
            continue
        if t > duration:
            break

        while True:
            tc = c_at[corr] if corr < c_at.shape[0] else INF
            if tc <= t and tc <= next_sample:
                pwc[c_proc[corr]] = c_val[corr]
                corr += 1
            elif next_sample <= t:
                _sample(samples, n_samples, pwc, next_sample, n, u_arr, off, knot, f_at, f_proc, f_val,
                        reset_on, reset_eps, counters, reset_pending)
                n_samples += 1
                next_sample += sample_period
            else:
                break

        send_eid = -1
        if tr_best <= ts_best and tr_best <= tl_best:
            j = jr
            kind = 2
            msg = ib[j, ib_head[j], 1]
            send_eid = ib[j, ib_head[j], 2]
        elif ts_best <= tl_best:
            j = js
            kind = 1
            msg = -1
        else:
            j = jl
            kind = 0
            msg = -1

        u = u_arr[j]
        pt = physical_time(off, j, t, knot, f_at, f_proc, f_val)
        clpt = _mask(pt, u)
        was_reset = reset_pending[j]
        reset_pending[j] = 0
        if reset_on and pwc[j] > clpt + reset_eps + (np.int64(1) << u):
            pwc[j] = clpt
            counters[C_RESETS] += 1
            was_reset = 1
        cand = pwc[j]
        if msg > cand:
            cand = msg
        wait = _overflow_wait(cand, clpt, u)
        if wait > 0 and policy != 0:
            if policy == 2 and wait > discard_thr:
                counters[C_DISCARDED] += 1
                if kind == 1:
                    send_held[j] = 0
                    next_send[j] += max(np.int64(1), np.int64(np.random.exponential(send_mean)))
                elif kind == 0:
                    loc_held[j] = 0
                    next_loc[j] += max(np.int64(1), np.int64(np.random.exponential(local_mean)))
                else:
                    ib_held[j] = 0
                    ib_head[j] = (ib_head[j] + 1) % ib_cap
                    ib_len[j] -= 1
                continue
            blocked[j] = t + wait
            if kind == 2:
                if ib_held[j] == 0:
                    counters[C_DELAYED] += 1
                ib_held[j] = 1
            elif kind == 1:
                if send_held[j] == 0:
                    counters[C_DELAYED] += 1
                send_held[j] = 1
            else:
                if loc_held[j] == 0:
                    counters[C_DELAYED] += 1
                loc_held[j] = 1
            continue
        if wait > 0:
            counters[C_OVERFLOWS] += 1
            if stop_on_overflow:
                break

        if kind == 2:
            new = _next_receive(pwc[j], msg, clpt)
            if new <= msg:
                counters[C_EDGE_VIOL] += 1
        else:
            new = _next_local(pwc[j], clpt)
        if new <= last_pwc[j]:
            counters[C_EDGE_VIOL] += 1
        pwc[j] = new
        last_pwc[j] = new
        last_t[j] = t
        hist[_bits_needed(new & ((np.int64(1) << u) - 1))] += 1

        if record:
            if eid >= rcap:
                counters[C_TRUNCATED] = 1
                break
            ev_proc[eid] = j
            ev_kind[eid] = kind
            ev_pl[eid] = last_eid[j]
            ev_pr[eid] = send_eid
            ev_pwc[eid] = new
            ev_clpt[eid] = clpt
            ev_pt[eid] = pt
            ev_time[eid] = t
            cmax = clpt
            for k in range(n):
                if k != j:
                    c = _mask(physical_time(off, k, t, knot, f_at, f_proc, f_val), u)
                    if c > cmax:
                        cmax = c
            ev_cmax[eid] = cmax
            ev_reset[eid] = was_reset
        last_eid[j] = eid

        if kind == 1:
            send_held[j] = 0
            dest = _pick_dest(topo, n, j)
            lat = np.random.randint(lat_min, lat_max + 1)
            heapq.heappush(heap, (t + lat + d_re, np.int64(msg_id), np.int64(dest), new, np.int64(eid)))
            msg_id += 1
            next_send[j] += max(np.int64(1), np.int64(np.random.exponential(send_mean)))
        elif kind == 0:
            loc_held[j] = 0
            next_loc[j] += max(np.int64(1), np.int64(np.random.exponential(local_mean)))
        else:
            ib_held[j] = 0
            ib_head[j] = (ib_head[j] + 1) % ib_cap
            ib_len[j] -= 1
        eid += 1

    while next_sample <= duration:
        while corr < c_at.shape[0] and c_at[corr] <= next_sample:
            pwc[c_proc[corr]] = c_val[corr]
            corr += 1
        _sample(samples, n_samples, pwc, next_sample, n, u_arr, off, knot, f_at, f_proc, f_val,
                reset_on, reset_eps, counters, reset_pending)
        n_samples += 1
        next_sample += sample_period

    counters[C_EVENTS] = eid
    counters[C_SAMPLES] = n_samples
    m = eid if record else 0
    return (counters, hist, samples[:n_samples], ev_proc[:m], ev_kind[:m], ev_pl[:m], ev_pr[:m], ev_pwc[:m],
            ev_clpt[:m], ev_pt[:m], ev_time[:m], ev_cmax[:m], ev_reset[:m])
