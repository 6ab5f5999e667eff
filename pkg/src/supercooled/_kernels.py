"""Compiled inner loops for the particle and first-passage simulations.

Particle positions are carried as ``base = X_{0-} + s + W_t`` (independent
of the barrier) and compared against ``alpha * loss``; this keeps every
comparison bitwise identical between the interacting system and the
fixed-barrier operator, and makes both monotone in the shift and the
barrier under floating-point rounding.
"""
import ctypes
import math

import numba
import numpy as np
from numba.extending import get_cython_function_address

from .randomness import keyed_uniforms

# exp(-BRIDGE_CUTOFF) is below the smallest keyed uniform, so larger exponents never hit
BRIDGE_CUTOFF = 40.0

_ndtri = ctypes.CFUNCTYPE(ctypes.c_double, ctypes.c_double)(
    get_cython_function_address("scipy.special.cython_special", "ndtri")
)


@numba.njit(nogil=True)
def first_passage(base, streams, thr, start, sqrtdt, dt, seed, bridge,
                  ckpt, cols, every, write_ckpt, default_step, final_x):
    """First passage of ``base_t - thr_t`` below 0 for independent paths.

    ``base`` holds each path's value at step ``start`` (at step 0 it is the
    shifted initial condition). Paths are simulated from ``start`` to the
    end of the grid; ``default_step`` is -1 for survivors. With
    ``write_ckpt`` set, path values at multiples of ``every`` go to column
    ``cols[i]`` of ``ckpt``.
    """
    n = thr.shape[0] - 1
    for i in range(base.shape[0]):
        b = base[i]
        if start == 0 and b <= thr[0]:
            default_step[i] = 0
            final_x[i] = min(b - thr[0], 0.0)
            continue
        x = b - thr[start]
        ds = -1
        for j in range(start, n):
            u1, u2 = keyed_uniforms(seed, streams[i], j)
            b = b + sqrtdt * _ndtri(u1)
            if write_ckpt and (j + 1) % every == 0:
                ckpt[(j + 1) // every, cols[i]] = b
            if b <= thr[j + 1]:
                ds = j + 1
                x = b - thr[j + 1]
                break
            if bridge and x > 0.0:
                e = 2.0 * x * (b - thr[j]) / dt
                if e < BRIDGE_CUTOFF and u2 < math.exp(-e):
                    ds = j + 1
                    x = min(b - thr[j + 1], 0.0)
                    break
            x = b - thr[j + 1]
        default_step[i] = ds
        final_x[i] = x


@numba.njit(nogil=True)
def advance_bases(base, streams, seed, sqrtdt, steps):
    """Barrier-free path values after ``steps`` keyed Gaussian increments."""
    out = base.copy()
    for i in range(base.shape[0]):
        b = base[i]
        for j in range(steps):
            u1, _ = keyed_uniforms(seed, streams[i], j)
            b = b + sqrtdt * _ndtri(u1)
        out[i] = b
    return out


@numba.njit(nogil=True)
def _cascade(bases, alive_mask, k0, c, N, alpha):
    """Least k >= k0 with k = k0 + #{candidates with base <= alpha*(c+k)/N}."""
    k = k0
    for it in range(8):
        thr = alpha * ((c + k) / N)
        cnt = 0
        for i in range(bases.shape[0]):
            if alive_mask[i] and bases[i] <= thr:
                cnt += 1
        if k0 + cnt == k:
            return k
        k = k0 + cnt
    # long cascade: sort the candidates once and iterate by bisection
    m = 0
    for i in range(bases.shape[0]):
        if alive_mask[i]:
            m += 1
    cand = np.empty(m)
    m = 0
    for i in range(bases.shape[0]):
        if alive_mask[i]:
            cand[m] = bases[i]
            m += 1
    cand.sort()
    while True:
        thr = alpha * ((c + k) / N)
        k_new = k0 + np.searchsorted(cand, thr, side="right")
        if k_new == k:
            return k
        k = k_new


@numba.njit(nogil=True)
def interacting(base0, streams, N, alpha, n, sqrtdt, dt, seed, bridge,
                audit, audit_levels):
    """Physical (= minimal) solution of the particle system on the grid.

    Returns per-step default counts, default steps and final positions.
    With ``audit`` set, ``audit_levels[j, i]`` receives the value particle
    i was tested with at step j: ``-inf`` for a direct or bridge hit, its
    base otherwise, ``nan`` if it had already defaulted.
    """
    counts = np.zeros(n + 1, dtype=np.int64)
    ds = np.full(N, -1, dtype=np.int64)
    fx = np.empty(N)
    b = base0.copy()
    x = np.empty(N)
    hit = np.zeros(N, dtype=np.bool_)
    cand = np.zeros(N, dtype=np.bool_)

    # t = 0: initial defaults seed a cascade
    k0 = 0
    for i in range(N):
        if b[i] <= 0.0:
            hit[i] = True
            k0 += 1
        else:
            cand[i] = True
        if audit:
            audit_levels[0, i] = -np.inf if hit[i] else b[i]
    k = _cascade(b, cand, k0, 0, N, alpha)
    c = k
    thr = alpha * (c / N)
    for i in range(N):
        if hit[i] or (cand[i] and b[i] <= thr):
            ds[i] = 0
            fx[i] = min(b[i] - thr, 0.0)
        else:
            x[i] = b[i] - thr
    counts[0] = c

    for j in range(n):
        thr_prev = alpha * (c / N)
        k0 = 0
        for i in range(N):
            hit[i] = False
            cand[i] = False
            if ds[i] >= 0:
                if audit:
                    audit_levels[j + 1, i] = np.nan
                continue
            u1, u2 = keyed_uniforms(seed, streams[i], j)
            b[i] = b[i] + sqrtdt * _ndtri(u1)
            if b[i] <= thr_prev:
                hit[i] = True
            elif bridge and x[i] > 0.0:
                e = 2.0 * x[i] * (b[i] - thr_prev) / dt
                if e < BRIDGE_CUTOFF and u2 < math.exp(-e):
                    hit[i] = True
            if hit[i]:
                k0 += 1
            else:
                cand[i] = True
            if audit:
                audit_levels[j + 1, i] = -np.inf if hit[i] else b[i]
        k = k0
        if k0 > 0:
            k = _cascade(b, cand, k0, c, N, alpha)
        c += k
        thr = alpha * (c / N)
        for i in range(N):
            if hit[i] or (cand[i] and b[i] <= thr):
                ds[i] = j + 1
                fx[i] = min(b[i] - thr, 0.0)
            elif cand[i]:
                x[i] = b[i] - thr
        counts[j + 1] = c
    for i in range(N):
        if ds[i] < 0:
            fx[i] = x[i]
    return counts, ds, fx


@numba.njit(cache=True, nogil=True)
def suffix_factor(m, diag, off):
    """Bottom-up elimination of tridiag(off, diag, off) on nodes 1..m-1.

    The coefficients for node i involve only nodes i..m-1, so one
    factorisation serves every suffix system L..m-1 with p[L-1] = 0.
    """
    c = np.zeros(m)
    e = np.zeros(m)
    e[m - 1] = diag
    c[m - 1] = off / diag
    for i in range(m - 2, 0, -1):
        e[i] = diag - off * c[i + 1]
        c[i] = off / e[i]
    return c, e


@numba.njit(cache=True, nogil=True)
def suffix_solve(c, e, off, p, lo, diag_lo, sup_lo):
    """In-place solve on nodes lo..m-1 with zero values at lo-1 and m.

    Row lo may differ from the uniform rows: ``diag_lo`` and ``sup_lo``
    are its diagonal and super-diagonal entries.
    """
    m = p.shape[0] - 1
    y = p  # reuse storage: y_i overwrites the right-hand side
    y[m - 1] = p[m - 1] / e[m - 1]
    for i in range(m - 2, lo, -1):
        y[i] = (p[i] - off * y[i + 1]) / e[i]
    if lo < m - 1:
        y[lo] = (p[lo] - sup_lo * y[lo + 1]) / (diag_lo - sup_lo * c[lo + 1])
    else:
        y[lo] = p[lo] / diag_lo
    for i in range(lo + 1, m):
        y[i] = y[i] - c[i] * y[i - 1]


@numba.njit(cache=True, nogil=True)
def heat_moving_boundary(p, a0, bidx, theta, r, snap_steps, capture_steps):
    """Survivor masses of a Brownian motion killed at a rising boundary.

    Works in the lab frame: ``p`` are nodal masses on y_i = i*dx and the
    nodes 0..bidx[j] are absorbing during [t_j, t_{j+1}). Each step is one
    implicit-Euler solve with ``r = dt / (2 dx^2)``, followed by zeroing
    the nodes swallowed by the boundary at t_{j+1}. The boundary itself
    lies ``theta[j] * dx`` to the left of the first live node, and that
    node's row uses the matching non-uniform (Shortley-Weller) stencil.
    Implicit Euler keeps the scheme monotone: a higher boundary can only
    lower every mass (for the sub-cell row this needs r >= theta^2 / 2).

    Returns absorbed mass and conservation residual per grid time,
    post-kick snapshots at ``snap_steps`` and pre-kick masses at
    ``capture_steps``.
    """
    m = p.shape[0] - 1
    n = bidx.shape[0] - 1
    c, e = suffix_factor(m, 1.0 + 2.0 * r, -r)
    absorbed = np.empty(n + 1)
    resid = np.empty(n + 1)
    snaps = np.zeros((snap_steps.shape[0], m + 1))
    caps = np.zeros((capture_steps.shape[0], m + 1))
    si = 0
    ci = 0
    p[m] = 0.0

    a = a0
    if ci < capture_steps.shape[0] and capture_steps[ci] == 0:
        caps[ci] = p
        ci += 1
    for i in range(min(bidx[0], m) + 1):
        a += p[i]
        p[i] = 0.0
    absorbed[0] = a
    resid[0] = a + p.sum() - 1.0
    if si < snap_steps.shape[0] and snap_steps[si] == 0:
        snaps[si] = p
        si += 1

    for j in range(n):
        lo = bidx[j] + 1
        if lo < m:
            before = 0.0
            for i in range(lo, m):
                before += p[i]
            th = theta[j]
            suffix_solve(c, e, -r, p, lo, 1.0 + 2.0 * r / th, -2.0 * r / (1.0 + th))
            after = 0.0
            for i in range(lo, m):
                after += p[i]
            a += before - after
        if ci < capture_steps.shape[0] and capture_steps[ci] == j + 1:
            caps[ci] = p
            ci += 1
        for i in range(lo, min(bidx[j + 1], m) + 1):
            a += p[i]
            p[i] = 0.0
        absorbed[j + 1] = a
        resid[j + 1] = a + p.sum() - 1.0
        if si < snap_steps.shape[0] and snap_steps[si] == j + 1:
            snaps[si] = p
            si += 1
    return absorbed, resid, snaps, caps
