"""Compiled cores: counter RNG, Glauber sweeps, walk simulation, detection.

Everything here is deterministic given the seeds in the argument lists; no
global state.  The scalar mixing functions mirror ``_rng`` exactly.

Environment kinds are passed as small integers:
    0 homogeneous, 1 product, 2 block-independent, 3 ising-two-kernel.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

U64 = np.uint64
_GOLD = U64(0x9E3779B97F4A7C15)
_M1 = U64(0xBF58476D1CE4E5B9)
_M2 = U64(0x94D049BB133111EB)
_H0 = U64(0x8E5851F42D1CB3A7)
_SH30 = U64(30)
_SH27 = U64(27)
_SH31 = U64(31)
_SH11 = U64(11)
_TO_UNIT = 2.0**-53

KIND_HOMOGENEOUS = 0
KIND_PRODUCT = 1
KIND_BLOCK = 2
KIND_ISING = 3

_TILE_CACHE_SLOTS = 32
_PACK_OFF = 1 << 20
_PACK_BASE = 1 << 21


@njit(cache=True, nogil=True, inline="always")
def _mix(z):
    z = (z ^ (z >> _SH30)) * _M1
    z = (z ^ (z >> _SH27)) * _M2
    return z ^ (z >> _SH31)


@njit(cache=True, nogil=True, inline="always")
def _u01(h):
    return (h >> _SH11) * _TO_UNIT


@njit(cache=True, nogil=True, inline="always")
def _hash2(seed, a, b):
    h = _mix(seed ^ (U64(a) * _GOLD + U64(1)))
    return _mix(h ^ (U64(b) * _GOLD + U64(2)))


@njit(cache=True, nogil=True)
def _hash_coords(seed, pos):
    h = seed ^ _H0
    for k in range(pos.shape[0]):
        h = _mix(h ^ (U64(pos[k]) * _GOLD + U64(k + 1)))
    return h


@njit(cache=True, nogil=True, inline="always")
def _stream_next(state):
    state = state + _GOLD
    return state, _u01(_mix(state))


@njit(cache=True, nogil=True)
def glauber_tile(spins, d, extents, key, beta, h, sweeps, boundary):
    """Systematic-scan Glauber on a box, all-(+1) start, fixed boundary spins.

    ``spins`` is a flat int8 buffer of size prod(extents), row-major.  Each
    site update draws its uniform from a counter keyed by (key, sweep, site),
    so the result is a pure function of the arguments.
    """
    n = 1
    for k in range(d):
        n *= extents[k]
    for i in range(n):
        spins[i] = 1
    strides = np.empty(d, np.int64)
    s = 1
    for k in range(d - 1, -1, -1):
        strides[k] = s
        s *= extents[k]
    coords = np.empty(d, np.int64)
    for sweep in range(sweeps):
        for idx in range(n):
            rem = idx
            for k in range(d):
                coords[k] = rem // strides[k]
                rem = rem % strides[k]
            ssum = 0
            for k in range(d):
                if coords[k] + 1 < extents[k]:
                    ssum += spins[idx + strides[k]]
                else:
                    ssum += boundary
                if coords[k] - 1 >= 0:
                    ssum += spins[idx - strides[k]]
                else:
                    ssum += boundary
            x = beta * ssum + h
            p_plus = 1.0 / (1.0 + math.exp(-2.0 * x))
            u = _u01(_hash2(key, sweep, idx))
            spins[idx] = 1 if u < p_plus else -1
    return spins


@njit(cache=True, nogil=True, inline="always")
def _tile_code(pos, d, side):
    code = np.int64(0)
    for k in range(d):
        tc = pos[k] // side
        code = code * _PACK_BASE + (tc + _PACK_OFF)
    return code


@njit(cache=True, nogil=True)
def _spin_at(pos, d, side, env_seed, beta, h, sweeps, boundary,
             cache_codes, cache_spins, rr):
    """Spin at a site from the tiled Ising field, with a small tile cache.

    Tiles are independent Glauber boxes keyed by (env_seed, tile coords);
    evicted tiles regenerate bit-identically, so the cache never affects the
    field.  Returns (spin, slot, rr).
    """
    code = _tile_code(pos, d, side)
    slot = -1
    for i in range(cache_codes.shape[0]):
        if cache_codes[i] == code:
            slot = i
            break
    if slot < 0:
        slot = rr
        rr = (rr + 1) % cache_codes.shape[0]
        extents = np.full(d, side, np.int64)
        key = _mix(env_seed ^ (U64(code) * _GOLD))
        glauber_tile(cache_spins[slot], d, extents, key, beta, h, sweeps, boundary)
        cache_codes[slot] = code
    flat = np.int64(0)
    for k in range(d):
        loc = pos[k] - (pos[k] // side) * side
        flat = flat * side + loc
    return cache_spins[slot, flat], slot, rr


@njit(cache=True, nogil=True, inline="always")
def _kernel_index(pos, d, kind, env_seed, wcum, block):
    """Mixture index of the site kernel for hash-keyed environments."""
    if kind == KIND_HOMOGENEOUS:
        return 0
    if kind == KIND_PRODUCT:
        u = _u01(_hash_coords(env_seed, pos))
    else:  # KIND_BLOCK: one draw per block
        bpos = np.empty(d, np.int64)
        for k in range(d):
            bpos[k] = pos[k] // block
        u = _u01(_hash_coords(env_seed, bpos))
    idx = 0
    for i in range(wcum.shape[0]):
        if u < wcum[i]:
            idx = i
            break
        idx = i
    return idx


@njit(cache=True, nogil=True)
def simulate_core(d, horizon, start, coupled, kappa,
                  alphabet_codes, is_ladder,
                  kind, env_seed, kernels, wcum, block,
                  beta, h, sweeps, boundary,
                  marks_seed, steps_seed):
    """Quenched or coupled walk; returns (positions, marks).

    Marks and step draws come from two disjoint splitmix streams, so the mark
    sequence is a product measure independent of the path (and reproducible
    on its own).  marks[t] = -1 encodes the zero mark.
    """
    positions = np.empty((horizon + 1, d), np.int64)
    marks = np.full(horizon, -1, np.int8)
    pos = np.empty(d, np.int64)
    for k in range(d):
        pos[k] = start[k]
        positions[0, k] = start[k]
    n_e = alphabet_codes.shape[0]
    inv = 1.0 / (1.0 - kappa * n_e)
    ms = marks_seed
    ss = steps_seed

    cache_codes = np.full(_TILE_CACHE_SLOTS, np.int64(-(1 << 62)), np.int64)
    tile_len = 1
    if kind == KIND_ISING:
        for _ in range(d):
            tile_len *= block
    cache_spins = np.zeros((_TILE_CACHE_SLOTS, tile_len), np.int8)
    rr = 0

    for t in range(horizon):
        step_code = -1
        if coupled and kappa > 0.0:
            ms, u1 = _stream_next(ms)
            if u1 < kappa * n_e:
                j = int(u1 / kappa)
                if j >= n_e:
                    j = n_e - 1
                step_code = alphabet_codes[j]
                marks[t] = step_code
        if step_code < 0:
            kidx = 0
            if kind == KIND_ISING:
                spin, _, rr = _spin_at(pos, d, block, env_seed, beta, h,
                                       sweeps, boundary, cache_codes,
                                       cache_spins, rr)
                kidx = 0 if spin > 0 else 1
            elif kind != KIND_HOMOGENEOUS:
                kidx = _kernel_index(pos, d, kind, env_seed, wcum, block)
            ss, u2 = _stream_next(ss)
            acc = 0.0
            step_code = 2 * d - 1
            for c in range(2 * d):
                w = kernels[kidx, c]
                if coupled:
                    w = (w - (kappa if is_ladder[c] else 0.0)) * inv
                acc += w
                if u2 < acc:
                    step_code = c
                    break
        axis = step_code >> 1
        if step_code & 1:
            pos[axis] -= 1
        else:
            pos[axis] += 1
        for k in range(d):
            positions[t + 1, k] = pos[k]
    return positions, marks


@njit(cache=True, nogil=True)
def kernel_index_at(pos, d, kind, env_seed, wcum, block,
                    beta, h, sweeps, boundary):
    """Mixture index at one site (3 = ising resolves the tile spin)."""
    if kind == KIND_ISING:
        cache_codes = np.full(1, np.int64(-(1 << 62)), np.int64)
        tile_len = 1
        for _ in range(d):
            tile_len *= block
        cache_spins = np.zeros((1, tile_len), np.int8)
        spin, _, _ = _spin_at(pos, d, block, env_seed, beta, h, sweeps,
                              boundary, cache_codes, cache_spins, 0)
        return 0 if spin > 0 else 1
    return _kernel_index(pos, d, kind, env_seed, wcum, block)


@njit(cache=True, nogil=True)
def cone_exit_scan(positions, from_time, ell, zeta, tol):
    """First t >= 1 with X_{from+t} outside C(X_from, ell, zeta), else -1."""
    T = positions.shape[0] - 1
    d = positions.shape[1]
    lsq = 0.0
    for k in range(d):
        lsq += ell[k] * ell[k]
    lnorm = math.sqrt(lsq)
    for t in range(from_time + 1, T + 1):
        dot = 0.0
        vsq = 0.0
        for k in range(d):
            dv = positions[t, k] - positions[from_time, k]
            dot += dv * ell[k]
            vsq += dv * dv
        if dot - zeta * math.sqrt(vsq) * lnorm < -tol:
            return t - from_time
    return -1


@njit(cache=True, nogil=True)
def detect_core(positions, marks, ell, zeta, L, pattern, tol):
    """Record + ladder-block + cone-survival detection along one path.

    Implements the attempt ladder: a candidate time n needs a strict record
    of X.ell at n-L and the L marks driving steps n-L+1..n equal to the
    ladder block; its cone survival is then checked from n.  Failed attempts
    skip to the observed exit time, a surviving attempt restarts the detector
    at its own vertex.  The trailing survivor is demoted (its survival is
    horizon-censored) and reported via the censored flag.

    Returns (taus, k_values, censored, survived_at_origin).
    For d <= 2 (or zeta == 0) survival checks use the two half-space forms of
    the cone and suffix minima; otherwise a direct forward scan.
    """
    T = marks.shape[0]
    d = positions.shape[1]
    p = pattern.shape[0]

    a = np.empty(T + 1, np.float64)
    for t in range(T + 1):
        acc = 0.0
        for k in range(d):
            acc += positions[t, k] * ell[k]
        a[t] = acc

    fast = zeta == 0.0 or d <= 2
    u = np.empty(T + 1, np.float64)
    w = np.empty(T + 1, np.float64)
    if zeta == 0.0 or d == 1:
        for t in range(T + 1):
            u[t] = a[t]
            w[t] = a[t]
    elif d == 2:
        c1 = math.sqrt(1.0 - zeta * zeta)
        c2 = zeta
        for t in range(T + 1):
            b = -positions[t, 0] * ell[1] + positions[t, 1] * ell[0]
            u[t] = c1 * a[t] - c2 * b
            w[t] = c1 * a[t] + c2 * b
    smu = np.empty(T + 1, np.float64)
    smw = np.empty(T + 1, np.float64)
    if fast:
        smu[T] = u[T]
        smw[T] = w[T]
        for t in range(T - 1, -1, -1):
            smu[t] = min(u[t], smu[t + 1])
            smw[t] = min(w[t], smw[t + 1])

    rec = np.zeros(T + 1, np.bool_)
    rec[0] = True
    running = a[0]
    for t in range(1, T + 1):
        if a[t] > running:
            rec[t] = True
            running = a[t]

    # r_run[t mod p] = consecutive pattern-aligned p-chunks ending at t
    r_buf = np.zeros(p, np.int64)
    need = L // p

    prov_taus = np.empty(T + 2, np.int64)
    prov_k = np.empty(T + 2, np.int64)
    n_prov = 0
    attempts = 0
    origin = 0
    r_cur = 0

    for n in range(1, T + 1):
        chunk_ok = False
        if n >= p:
            chunk_ok = True
            for j in range(p):
                if marks[n - p + j] != pattern[j]:
                    chunk_ok = False
                    break
        prev = r_buf[n % p]
        r_now = prev + 1 if chunk_ok else 0
        r_buf[n % p] = r_now

        if n < L or n < origin + L or n < r_cur:
            continue
        if not rec[n - L] or r_now < need:
            continue

        if fast:
            survived = smu[n] > u[n] - tol and smw[n] > w[n] - tol
        else:
            survived = cone_exit_scan(positions, n, ell, zeta, tol) < 0
        if survived:
            prov_taus[n_prov] = n
            prov_k[n_prov] = attempts + 1
            n_prov += 1
            attempts = 0
            origin = n
            r_cur = n
        else:
            attempts += 1
            if fast:
                t_exit = n + 1
                while u[t_exit] > u[n] - tol and w[t_exit] > w[n] - tol:
                    t_exit += 1
                r_cur = t_exit
            else:
                r_cur = n + cone_exit_scan(positions, n, ell, zeta, tol)

    if n_prov >= 1:
        kept = n_prov - 1
        censored = True
    else:
        kept = 0
        censored = attempts == 0

    if fast:
        survived_origin = smu[0] > u[0] - tol and smw[0] > w[0] - tol
    else:
        survived_origin = cone_exit_scan(positions, 0, ell, zeta, tol) < 0

    return prov_taus[:kept].copy(), prov_k[:kept].copy(), censored, survived_origin


@njit(cache=True, nogil=True)
def fresh_times_core(positions, ell):
    """Indices of strict records of X.ell, including time 0."""
    T = positions.shape[0] - 1
    d = positions.shape[1]
    out = np.empty(T + 1, np.int64)
    cnt = 0
    running = -np.inf
    for t in range(T + 1):
        acc = 0.0
        for k in range(d):
            acc += positions[t, k] * ell[k]
        if t == 0 or acc > running:
            out[cnt] = t
            cnt += 1
        if acc > running:
            running = acc
    return out[:cnt].copy()


@njit(cache=True, nogil=True)
def first_level_hit(positions, ell, r):
    """First n with X_n . ell >= r, or -1 within the record."""
    T = positions.shape[0] - 1
    d = positions.shape[1]
    for t in range(T + 1):
        acc = 0.0
        for k in range(d):
            acc += positions[t, k] * ell[k]
        if acc >= r:
            return t
    return -1
