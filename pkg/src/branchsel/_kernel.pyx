# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled step kernel: same contract and draw order as _fallback.py.

The elementwise arithmetic uses the same expression trees as the NumPy
fallback and the extension is compiled with -ffp-contract=off, so the two
kernels produce bit-identical populations from the same RngStream.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, isnan, sqrt

cnp.import_array()

from .errors import CapacityError


def advance_step(object pos_in, object clock_in, object ids_in, object parent_in,
                 double t0, double t1, double rate, double drift, double diffusion,
                 object next_id_in, object cap_in, object rng):
    """Advance flat population arrays from t0 to t1 (consumes its inputs).

    Returns (pos, clock, ids, parent, prev, src, next_id).
    """
    cdef long long next_id = next_id_in
    cdef long long cap = cap_in
    cdef double inv_rate = 1.0 / rate

    cdef cnp.ndarray pos_arr = pos_in
    cdef cnp.ndarray clock_arr = clock_in
    cdef cnp.ndarray ids_arr = ids_in
    cdef cnp.ndarray par_arr = parent_in

    cdef double[::1] pos = pos_arr
    cdef double[::1] clock = clock_arr
    cdef long long[::1] ids = ids_arr
    cdef long long[::1] par = par_arr

    cdef Py_ssize_t n = pos.shape[0]
    cdef Py_ssize_t i, j, bi, kc, cc, nb, nn
    cdef double d, tbv, newp

    # 1) draw clocks that were initialized lazily
    cdef Py_ssize_t k0 = 0
    for i in range(n):
        if isnan(clock[i]):
            k0 += 1
    cdef double[::1] e
    if k0 > 0:
        e = rng.exponentials(k0)
        j = 0
        for i in range(n):
            if isnan(clock[i]):
                clock[i] = t0 + inv_rate * e[j]
                j += 1

    cdef cnp.ndarray prev_arr = pos_arr.copy()
    cdef cnp.ndarray src_arr = np.arange(n, dtype=np.int64)
    cdef cnp.ndarray stime_arr = np.full(n, t0)
    cdef double[::1] prev = prev_arr
    cdef long long[::1] src = src_arr
    cdef double[::1] stime = stime_arr

    # 2) branch cascade
    cdef double[::1] z
    cdef cnp.ndarray npos_a, nclock_a, nprev_a, nstime_a, nids_a, npar_a, nsrc_a
    cdef double[::1] npos, nclock, nprev, nstime
    cdef long long[::1] nids, npar, nsrc
    while True:
        nb = 0
        for i in range(n):
            if clock[i] <= t1:
                nb += 1
        if nb == 0:
            break
        z = rng.normals(nb)
        e = rng.exponentials(2 * nb)

        nn = (n - nb) + 2 * nb
        npos_a = np.empty(nn)
        nclock_a = np.empty(nn)
        nprev_a = np.empty(nn)
        nstime_a = np.empty(nn)
        nids_a = np.empty(nn, dtype=np.int64)
        npar_a = np.empty(nn, dtype=np.int64)
        nsrc_a = np.empty(nn, dtype=np.int64)
        npos = npos_a; nclock = nclock_a; nprev = nprev_a
        nstime = nstime_a; nids = nids_a; npar = npar_a; nsrc = nsrc_a

        kc = 0
        cc = n - nb
        bi = 0
        for i in range(n):
            if clock[i] <= t1:
                tbv = clock[i]
                d = tbv - stime[i]
                newp = pos[i] + (drift * d + sqrt(diffusion * d) * z[bi])
                for j in range(2):
                    npos[cc] = newp
                    nclock[cc] = tbv + inv_rate * e[2 * bi + j]
                    nstime[cc] = tbv
                    nprev[cc] = prev[i]
                    nsrc[cc] = src[i]
                    npar[cc] = ids[i]
                    nids[cc] = next_id + 2 * bi + j
                    cc += 1
                bi += 1
            else:
                npos[kc] = pos[i]
                nclock[kc] = clock[i]
                nstime[kc] = stime[i]
                nprev[kc] = prev[i]
                nsrc[kc] = src[i]
                npar[kc] = par[i]
                nids[kc] = ids[i]
                kc += 1
        next_id += 2 * nb

        pos_arr = npos_a; clock_arr = nclock_a; prev_arr = nprev_a
        stime_arr = nstime_a; ids_arr = nids_a; par_arr = npar_a; src_arr = nsrc_a
        pos = npos; clock = nclock; prev = nprev
        stime = nstime; ids = nids; par = npar; src = nsrc
        n = nn
        if n > cap:
            raise CapacityError(
                f"population cap {cap} breached at t={t1}", time=t1)

    # 3) final move to t1
    z = rng.normals(n)
    for i in range(n):
        d = t1 - stime[i]
        pos[i] = pos[i] + (drift * d + sqrt(diffusion * d) * z[i])
    return pos_arr, clock_arr, ids_arr, par_arr, prev_arr, src_arr, next_id


# ---------------------------------------------------------------------------
# Fused multi-step runner
# ---------------------------------------------------------------------------

RULE_NONE = 0
RULE_LBAND = 1
RULE_STRIP = 3
RULE_BARRIER_BELOW = 4
RULE_BARRIER_ABOVE = 5


DEF BRIDGE_CUT = 18.420680743952367  # keep equal to selection._BRIDGE_CUT


cdef class _Buffers:
    """Capacity-managed working arrays for the fused loop."""
    cdef cnp.ndarray pos_a, clock_a, prev_a, stime_a, ids_a, par_a, flag_a
    cdef cnp.ndarray born_a, tb_a, prevv_a, pid_a
    cdef Py_ssize_t capacity, scratch

    def __cinit__(self, Py_ssize_t n0):
        self.capacity = max(64, 2 * n0)
        self.scratch = 64
        self.pos_a = np.empty(self.capacity)
        self.clock_a = np.empty(self.capacity)
        self.prev_a = np.empty(self.capacity)
        self.stime_a = np.empty(self.capacity)
        self.ids_a = np.empty(self.capacity, dtype=np.int64)
        self.par_a = np.empty(self.capacity, dtype=np.int64)
        self.flag_a = np.empty(self.capacity, dtype=np.int8)
        self.born_a = np.empty(self.scratch)
        self.tb_a = np.empty(self.scratch)
        self.prevv_a = np.empty(self.scratch)
        self.pid_a = np.empty(self.scratch, dtype=np.int64)

    cdef void grow(self, Py_ssize_t need, Py_ssize_t n):
        cdef Py_ssize_t cap = self.capacity
        while cap < need:
            cap *= 2
        if cap == self.capacity:
            return
        new = np.empty(cap); new[:n] = self.pos_a[:n]; self.pos_a = new
        new = np.empty(cap); new[:n] = self.clock_a[:n]; self.clock_a = new
        new = np.empty(cap); new[:n] = self.prev_a[:n]; self.prev_a = new
        new = np.empty(cap); new[:n] = self.stime_a[:n]; self.stime_a = new
        new = np.empty(cap, dtype=np.int64); new[:n] = self.ids_a[:n]; self.ids_a = new
        new = np.empty(cap, dtype=np.int64); new[:n] = self.par_a[:n]; self.par_a = new
        self.flag_a = np.empty(cap, dtype=np.int8)
        self.capacity = cap

    cdef void grow_scratch(self, Py_ssize_t need):
        cdef Py_ssize_t cap = self.scratch
        while cap < need:
            cap *= 2
        if cap == self.scratch:
            return
        self.born_a = np.empty(cap)
        self.tb_a = np.empty(cap)
        self.prevv_a = np.empty(cap)
        self.pid_a = np.empty(cap, dtype=np.int64)
        self.scratch = cap


def run_selected(object pos_in, object clock_in, object ids_in, object parent_in,
                 double t0, double dt, long long n_steps,
                 double rate, double drift, double diffusion,
                 object next_id_in, object cap_in,
                 int rule_code, double r_lo, double r_hi, double r_slope, double r_band,
                 object rng, object rec, object targets_in, object hi_times):
    """Run n_steps enforcement steps with the rule applied after each one.

    Draw-for-draw compatible with the Python driver in engine.simulate, so
    the resulting state and records are bit-identical to the fallback path.
    rec.record(t, pos) is called at the step indices listed in targets_in;
    upper-barrier hit times are appended to hi_times.

    Returns (pos, clock, ids, parent, next_id, extinct, t_end,
             n_selection_kills, n_lower_hits, n_upper_hits).
    """
    cdef long long next_id = next_id_in
    cdef long long cap = cap_in
    cdef double inv_rate = 1.0 / rate
    cdef Py_ssize_t n = (<cnp.ndarray> pos_in).shape[0]

    cdef _Buffers buf = _Buffers(n)
    buf.pos_a[:n] = pos_in
    buf.clock_a[:n] = clock_in
    buf.ids_a[:n] = ids_in
    buf.par_a[:n] = parent_in

    cdef cnp.ndarray targets_arr = np.asarray(targets_in, dtype=np.int64)
    cdef long long[::1] targets = targets_arr
    cdef Py_ssize_t n_targets = targets.shape[0]
    cdef Py_ssize_t ti = 0

    cdef double[::1] pos = buf.pos_a
    cdef double[::1] clock = buf.clock_a
    cdef double[::1] prev = buf.prev_a
    cdef double[::1] stime = buf.stime_a
    cdef long long[::1] ids = buf.ids_a
    cdef long long[::1] par = buf.par_a
    cdef double[::1] born = buf.born_a
    cdef double[::1] tb = buf.tb_a
    cdef double[::1] prevv = buf.prevv_a
    cdef long long[::1] pid = buf.pid_a

    cdef long long c_sel = 0, c_lo = 0, c_hi = 0
    cdef long long k
    cdef Py_ssize_t i, j, bi, kc, nb, k0, n_in, ui
    cdef double t = t0, t1, d, mx, thr, b_lo0, b_lo1, b_hi0, b_hi1, p, cut
    cdef double[::1] z, e, u
    cdef signed char[::1] flag
    cdef bint extinct = 0
    cdef bint has_lo = rule_code == RULE_STRIP or rule_code == RULE_BARRIER_BELOW
    cdef bint has_hi = rule_code == RULE_STRIP or rule_code == RULE_BARRIER_ABOVE
    cdef double sdt = diffusion * dt

    for k in range(1, n_steps + 1):
        t1 = t0 + k * dt

        # lazily drawn clocks (first step only in practice)
        k0 = 0
        for i in range(n):
            if isnan(clock[i]):
                k0 += 1
        if k0 > 0:
            e = rng.exponentials(k0)
            j = 0
            for i in range(n):
                if isnan(clock[i]):
                    clock[i] = t + inv_rate * e[j]
                    j += 1

        for i in range(n):
            prev[i] = pos[i]
            stime[i] = t

        # branch cascade
        while True:
            nb = 0
            for i in range(n):
                if clock[i] <= t1:
                    nb += 1
            if nb == 0:
                break
            if n + nb > cap:
                raise CapacityError(
                    f"population cap {cap} breached at t={t1}", time=t1)
            z = rng.normals(nb)
            e = rng.exponentials(2 * nb)
            buf.grow(n + nb, n)
            pos = buf.pos_a; clock = buf.clock_a; prev = buf.prev_a
            stime = buf.stime_a; ids = buf.ids_a; par = buf.par_a
            buf.grow_scratch(nb)
            born = buf.born_a; tb = buf.tb_a; prevv = buf.prevv_a; pid = buf.pid_a

            bi = 0
            for i in range(n):
                if clock[i] <= t1:
                    d = clock[i] - stime[i]
                    born[bi] = pos[i] + (drift * d + sqrt(diffusion * d) * z[bi])
                    tb[bi] = clock[i]
                    prevv[bi] = prev[i]
                    pid[bi] = ids[i]
                    bi += 1
            kc = 0
            for i in range(n):
                if clock[i] > t1:
                    if kc != i:
                        pos[kc] = pos[i]; clock[kc] = clock[i]
                        prev[kc] = prev[i]; stime[kc] = stime[i]
                        ids[kc] = ids[i]; par[kc] = par[i]
                    kc += 1
            for bi in range(nb):
                for j in range(2):
                    pos[kc] = born[bi]
                    clock[kc] = tb[bi] + inv_rate * e[2 * bi + j]
                    stime[kc] = tb[bi]
                    prev[kc] = prevv[bi]
                    par[kc] = pid[bi]
                    ids[kc] = next_id + 2 * bi + j
                    kc += 1
            next_id += 2 * nb
            n = kc

        # final move to t1
        z = rng.normals(n)
        for i in range(n):
            d = t1 - stime[i]
            pos[i] = pos[i] + (drift * d + sqrt(diffusion * d) * z[i])

        # selection
        if rule_code == RULE_LBAND:
            mx = pos[0]
            for i in range(1, n):
                if pos[i] > mx:
                    mx = pos[i]
            thr = mx - r_band
            kc = 0
            for i in range(n):
                if pos[i] >= thr:
                    if kc != i:
                        pos[kc] = pos[i]; clock[kc] = clock[i]
                        ids[kc] = ids[i]; par[kc] = par[i]
                    kc += 1
            c_sel += n - kc
            n = kc
        elif rule_code != RULE_NONE:
            # flags: 0 alive, 1 hit upper, 2 hit lower, 4/5 eligible for a draw
            flag = buf.flag_a
            b_lo0 = r_lo + r_slope * t
            b_lo1 = r_lo + r_slope * t1
            b_hi0 = r_hi + r_slope * t
            b_hi1 = r_hi + r_slope * t1
            cut = sdt * BRIDGE_CUT
            # endpoint kills, then upper-barrier eligibility
            n_in = 0
            for i in range(n):
                if has_hi and pos[i] >= b_hi1:
                    flag[i] = 1
                elif has_lo and pos[i] <= b_lo1:
                    flag[i] = 2
                elif has_hi and (b_hi0 - prev[i]) * (b_hi1 - pos[i]) <= cut:
                    flag[i] = 4
                    n_in += 1
                else:
                    flag[i] = 0
            if n_in > 0:
                u = rng.uniforms(n_in)
                ui = 0
                for i in range(n):
                    if flag[i] == 4:
                        p = exp(-2.0 * ((b_hi0 - prev[i]) * (b_hi1 - pos[i])) / sdt)
                        flag[i] = 1 if u[ui] < p else 0
                        ui += 1
            if has_lo:
                n_in = 0
                for i in range(n):
                    if flag[i] == 0 and (prev[i] - b_lo0) * (pos[i] - b_lo1) <= cut:
                        flag[i] = 5
                        n_in += 1
                if n_in > 0:
                    u = rng.uniforms(n_in)
                    ui = 0
                    for i in range(n):
                        if flag[i] == 5:
                            p = exp(-2.0 * ((prev[i] - b_lo0) * (pos[i] - b_lo1)) / sdt)
                            flag[i] = 2 if u[ui] < p else 0
                            ui += 1
            kc = 0
            for i in range(n):
                if flag[i] == 1:
                    c_hi += 1
                    hi_times.append(t1)
                elif flag[i] == 2:
                    c_lo += 1
                else:
                    if kc != i:
                        pos[kc] = pos[i]; clock[kc] = clock[i]
                        ids[kc] = ids[i]; par[kc] = par[i]
                    kc += 1
            n = kc

        t = t1
        if n == 0:
            extinct = 1
            break
        if ti < n_targets and k == targets[ti]:
            rec.record(t1, buf.pos_a[:n])
            ti += 1

    return (buf.pos_a[:n].copy(), buf.clock_a[:n].copy(),
            buf.ids_a[:n].copy(), buf.par_a[:n].copy(),
            next_id, bool(extinct), t,
            c_sel, c_lo, c_hi)
