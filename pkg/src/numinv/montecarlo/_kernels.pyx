# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled path loops for the Monte Carlo generators.

Every function walks its paths one at a time, drawing from per-path numpy bit
generators through the C distribution API so that the sequences match
``numpy.random.Generator`` draws exactly.
"""
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport exp, expm1, log, sqrt

import numpy as np

from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport random_standard_normal, random_standard_uniform

cdef const char *CAPSULE_NAME = "BitGenerator"


cdef inline bitgen_t *_state(object bit_generator):
    return <bitgen_t *> PyCapsule_GetPointer(bit_generator.capsule, CAPSULE_NAME)


def gbm_paths(list normal_gens, list bridge_gens, Py_ssize_t n_steps, double dt, double sigma,
              bint bridge, double[::1] fractions, dict out, double[:, ::1] store=None):
    """Geometric martingale ``exp(sigma W - sigma^2 t / 2)`` on a uniform grid.

    With ``bridge`` set, the maximum inside each step is drawn from the exact
    Brownian-bridge law whenever it can exceed the running grid maximum.
    """
    cdef Py_ssize_t n_paths = len(normal_gens), m = fractions.shape[0]
    cdef double[::1] log_max = out["log_max"], log_end = out["log_end"], t_end = out["t_end"]
    cdef double[::1] t_max = out["t_max"], clock_sum = out["clock_sum"], max_jump = out["max_jump"]
    cdef long long[::1] steps = out["steps"]
    cdef double[:, ::1] x_at_max = out["x_at_max"]
    cdef double[::1] x = np.empty(max(m, 1))
    cdef bitgen_t *rng
    cdef bitgen_t *brng
    cdef Py_ssize_t p, k, j
    cdef double s = sigma * sqrt(dt), c = 0.5 * sigma * sigma * dt, var = sigma * sigma * dt
    cdef double a0, a1, grid_max, run_max, cand, gap, u, ratio, top
    for p in range(n_paths):
        rng = _state(normal_gens[p])
        brng = _state(bridge_gens[p])
        a0 = 0.0
        grid_max = 0.0
        run_max = 0.0
        clock_sum[p] = 0.0
        max_jump[p] = 0.0
        t_max[p] = 0.0
        for j in range(m):
            x[j] = 1.0
            x_at_max[p, j] = 1.0
        if store is not None:
            store[p, 0] = 1.0
        for k in range(1, n_steps + 1):
            a1 = a0 + (s * random_standard_normal(rng) - c)
            if a1 > grid_max:
                grid_max = a1
            cand = a1
            top = a1
            if bridge:
                gap = (grid_max - a0) * (grid_max - a1)
                if -2.0 * gap / var > -32.0:
                    u = random_standard_uniform(brng)
                    cand = 0.5 * (a0 + a1 + sqrt((a1 - a0) * (a1 - a0) - 2.0 * var * log(1.0 - u)))
            if cand > run_max:
                clock_sum[p] += expm1(cand - run_max)
                if cand - run_max > max_jump[p]:
                    max_jump[p] = cand - run_max
                run_max = cand
                t_max[p] = k * dt
                for j in range(m):
                    # wealth at the new minimum of S = 1/L, holding the units bought at the last grid point
                    x_at_max[p, j] = x[j] * (1.0 + fractions[j] * (exp(a0 - cand) - 1.0))
            if m > 0:
                ratio = exp(a0 - a1)
                for j in range(m):
                    x[j] = x[j] * (1.0 + fractions[j] * (ratio - 1.0))
            if store is not None:
                store[p, k] = exp(a1)
            a0 = a1
        log_max[p] = run_max
        log_end[p] = a0
        t_end[p] = n_steps * dt
        steps[p] = n_steps


def bessel_paths(list normal_gens, Py_ssize_t max_steps, bint scaled, double near, double far, double horizon,
                 double[::1] fractions, dict out, double[:, ::1] store=None, double[:, ::1] store_t=None):
    """Reciprocal of a three-dimensional Bessel process started at 1.

    With ``scaled`` set, steps scale with the squared radius: ``h = kappa^2 R^2``
    where ``kappa`` moves linearly from ``sqrt(near)`` at the running minimum of
    ``R`` to ``sqrt(far)`` once ``R`` is twice that minimum. Otherwise ``h = near``.
    The last step is clipped to end at ``horizon``.
    """
    cdef Py_ssize_t n_paths = len(normal_gens), m = fractions.shape[0]
    cdef double[::1] log_max = out["log_max"], log_end = out["log_end"], t_end = out["t_end"]
    cdef double[::1] t_max = out["t_max"], clock_sum = out["clock_sum"], max_jump = out["max_jump"]
    cdef long long[::1] steps = out["steps"]
    cdef double[:, ::1] x_at_max = out["x_at_max"]
    cdef double[::1] x = np.empty(max(m, 1))
    cdef bitgen_t *rng
    cdef Py_ssize_t p, k, j
    cdef double kn = sqrt(near), kf = sqrt(far)
    cdef double x0, x1, x2, R, R_new, r_min, t, h, kappa, w, sh, z0, z1, z2, jump
    for p in range(n_paths):
        rng = _state(normal_gens[p])
        x0 = 1.0
        x1 = 0.0
        x2 = 0.0
        R = 1.0
        r_min = 1.0
        t = 0.0
        jump = 1.0
        clock_sum[p] = 0.0
        t_max[p] = 0.0
        for j in range(m):
            x[j] = 1.0
            x_at_max[p, j] = 1.0
        if store is not None:
            store[p, 0] = 1.0
            store_t[p, 0] = 0.0
        k = 0
        while k < max_steps and t < horizon:
            k += 1
            z0 = random_standard_normal(rng)
            z1 = random_standard_normal(rng)
            z2 = random_standard_normal(rng)
            if scaled:
                w = R / r_min - 1.0
                if w < 0.0:
                    w = 0.0
                elif w > 1.0:
                    w = 1.0
                kappa = kn + (kf - kn) * w
                h = kappa * kappa * R * R
            else:
                h = near
            if t + h >= horizon:
                h = horizon - t
                t = horizon
            else:
                t = t + h
            sh = sqrt(h)
            x0 = x0 + sh * z0
            x1 = x1 + sh * z1
            x2 = x2 + sh * z2
            R_new = sqrt(x0 * x0 + x1 * x1 + x2 * x2)
            for j in range(m):
                x[j] = x[j] * (1.0 + fractions[j] * (R_new / R - 1.0))
            R = R_new
            if R < r_min:
                clock_sum[p] += r_min / R - 1.0
                if r_min / R > jump:
                    jump = r_min / R
                r_min = R
                t_max[p] = t
                for j in range(m):
                    x_at_max[p, j] = x[j]
            if store is not None:
                store[p, k] = 1.0 / R
                store_t[p, k] = t
        max_jump[p] = log(jump)
        log_max[p] = -log(r_min)
        log_end[p] = -log(R)
        t_end[p] = t
        steps[p] = k
