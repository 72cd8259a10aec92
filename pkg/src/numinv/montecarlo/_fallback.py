"""Pure-numpy path loops with the same signatures and draws as the compiled kernels.

The geometric martingale is vectorized along time for each path. The Bessel
generator moves a block of paths forward in lockstep: every step consumes three
normals per path whatever its size, so each path's normals can be drawn ahead
of time in blocks from its own generator.
"""
from __future__ import annotations

import numpy as np

_BLOCK = 256
_LOCKSTEP = 2048


def gbm_paths(normal_gens, bridge_gens, n_steps, dt, sigma, bridge, fractions, out, store=None):
    s = sigma * np.sqrt(dt)
    c = 0.5 * sigma * sigma * dt
    var = sigma * sigma * dt
    fr = np.asarray(fractions, dtype=float)
    for p, (gen, bgen) in enumerate(zip(normal_gens, bridge_gens)):
        z = np.random.Generator(gen).standard_normal(n_steps)
        a = np.empty(n_steps + 1)
        a[0] = 0.0
        np.cumsum(s * z - c, out=a[1:])
        a0, a1 = a[:-1], a[1:]
        grid = np.maximum.accumulate(np.maximum(a1, 0.0))
        cand = a1.copy()
        if bridge:
            gap = (grid - a0) * (grid - a1)
            hit = np.flatnonzero(-2.0 * gap / var > -32.0)
            if hit.size:
                u = np.random.Generator(bgen).random(hit.size)
                d = a1[hit] - a0[hit]
                cand[hit] = 0.5 * (a0[hit] + a1[hit] + np.sqrt(d * d - 2.0 * var * np.log(1.0 - u)))
        run = np.maximum.accumulate(np.maximum(cand, 0.0))
        prev = np.concatenate([[0.0], run[:-1]])
        up = np.flatnonzero(cand > prev)
        out["clock_sum"][p] = np.sum(np.expm1(cand[up] - prev[up])) if up.size else 0.0
        out["max_jump"][p] = np.max(cand[up] - prev[up]) if up.size else 0.0
        if up.size:
            k = up[-1]
            out["log_max"][p] = cand[k]
            out["t_max"][p] = (k + 1) * dt
        else:
            out["log_max"][p] = 0.0
            out["t_max"][p] = 0.0
        out["log_end"][p] = a[-1]
        out["t_end"][p] = n_steps * dt
        out["steps"][p] = n_steps
        if fr.size:
            if up.size:
                growth = 1.0 + fr[None, :] * (np.exp(a0 - a1)[:, None] - 1.0)
                x = np.ones((n_steps + 1, fr.size))
                np.cumprod(growth, axis=0, out=x[1:])
                out["x_at_max"][p] = x[k] * (1.0 + fr * (np.exp(a0[k] - cand[k]) - 1.0))
            else:
                out["x_at_max"][p] = 1.0
        if store is not None:
            store[p] = np.exp(a)
            store[p, 0] = 1.0
    return out


def bessel_paths(normal_gens, max_steps, scaled, near, far, horizon, fractions, out, store=None, store_t=None):
    fr = np.asarray(fractions, dtype=float)
    kn, kf = np.sqrt(near), np.sqrt(far)
    n = len(normal_gens)
    for lo in range(0, n, _LOCKSTEP):
        idx = np.arange(lo, min(n, lo + _LOCKSTEP))
        gens = [np.random.Generator(normal_gens[i]) for i in idx]
        _bessel_block(gens, idx, max_steps, scaled, near, kn, kf, horizon, fr, out, store, store_t)
    return out


def _bessel_block(gens, idx, max_steps, scaled, near, kn, kf, horizon, fr, out, store, store_t):
    b = idx.size
    x0, x1, x2 = np.ones(b), np.zeros(b), np.zeros(b)
    R, r_min, t = np.ones(b), np.ones(b), np.zeros(b)
    clock = np.zeros(b)
    jump = np.ones(b)
    t_at = np.zeros(b)
    X = np.ones((b, fr.size))
    X_at = np.ones((b, fr.size))
    steps = np.zeros(b, dtype=np.int64)
    if store is not None:
        store[idx, 0] = 1.0
        store_t[idx, 0] = 0.0
    live = np.arange(b)
    k = 0
    block = None
    while live.size and k < max_steps:
        j = k % _BLOCK
        if j == 0:
            # next block of normals for every path still running, drawn path by path
            block = np.zeros((b, _BLOCK, 3))
            for i in live:
                block[i] = gens[i].standard_normal(3 * _BLOCK).reshape(_BLOCK, 3)
        k += 1
        z = block[live, j]
        Rl, ml, tl = R[live], r_min[live], t[live]
        if scaled:
            w = np.minimum(np.maximum(Rl / ml - 1.0, 0.0), 1.0)
            kappa = kn + (kf - kn) * w
            h = kappa * kappa * Rl * Rl
        else:
            h = np.full(live.size, near)
        last = tl + h >= horizon
        h = np.where(last, horizon - tl, h)
        tl = np.where(last, horizon, tl + h)
        sh = np.sqrt(h)
        a0 = x0[live] + sh * z[:, 0]
        a1 = x1[live] + sh * z[:, 1]
        a2 = x2[live] + sh * z[:, 2]
        R_new = np.sqrt(a0 * a0 + a1 * a1 + a2 * a2)
        if fr.size:
            X[live] = X[live] * (1.0 + fr[None, :] * (R_new / Rl - 1.0)[:, None])
        x0[live], x1[live], x2[live] = a0, a1, a2
        R[live] = R_new
        t[live] = tl
        steps[live] = k
        low = R_new < ml
        if low.any():
            hit = live[low]
            clock[hit] = clock[hit] + (ml[low] / R_new[low] - 1.0)
            jump[hit] = np.maximum(jump[hit], ml[low] / R_new[low])
            r_min[hit] = R_new[low]
            t_at[hit] = tl[low]
            X_at[hit] = X[hit]
        if store is not None:
            store[idx[live], k] = 1.0 / R_new
            store_t[idx[live], k] = tl
        live = live[tl < horizon]
    out["log_max"][idx] = -np.log(r_min)
    out["log_end"][idx] = -np.log(R)
    out["t_end"][idx] = t
    out["t_max"][idx] = t_at
    out["clock_sum"][idx] = clock
    out["max_jump"][idx] = np.log(jump)
    out["steps"][idx] = steps
    out["x_at_max"][idx] = X_at
