# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twin of ``kernels.pure``.

Line-for-line transliteration of the reference event loop. CPython's ``math``
module and ``libc.math`` call the same libm, the module is built without
fast-math or FMA contraction, and every floating-point expression keeps the
reference operation order, so output is bit-identical to the pure backend.
Change nothing here without mirroring ``pure.py``.
"""

from libc.math cimport NAN, cos, isfinite, log, log1p, pow, sqrt
from libc.stdlib cimport free, realloc

import math

import numpy as np

from ..errors import NumericalError, ResourceLimitError

BACKEND_NAME = "cython"

cdef unsigned long long GAMMA = 0x9E3779B97F4A7C15ULL
cdef unsigned long long SEED_SALT = 0x6A09E667F3BCC909ULL
cdef double TWO_PI = 6.283185307179586
cdef double INV_2_53 = 1.0 / 9007199254740992.0

cdef int KIND_CSBP = 0
cdef int KIND_QPROCESS = 1
cdef int KIND_LEVY = 2
cdef int LEVY_STABLE = 1

SRC_BRANCH = 0
SRC_IMMIGRATION = 1


cdef inline unsigned long long mix64(unsigned long long z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline unsigned long long stream_key_c(
    unsigned long long seed, unsigned long long path_index, unsigned long long stream
) nogil:
    cdef unsigned long long z = mix64(seed * GAMMA + SEED_SALT)
    z = mix64(z + path_index * GAMMA)
    return mix64(z + stream * GAMMA)


cdef inline double u01(unsigned long long key, unsigned long long ctr) nogil:
    return <double> (mix64(key + ctr * GAMMA) >> 11) * INV_2_53


cdef inline double expo(unsigned long long key, unsigned long long ctr) nogil:
    return -log1p(-u01(key, ctr))


cdef inline double norm(unsigned long long key, unsigned long long ctr) nogil:
    cdef double u1 = <double> ((mix64(key + ctr * GAMMA) >> 11) + 1) * INV_2_53
    cdef double u2 = <double> (mix64(key + (ctr + 1) * GAMMA) >> 11) * INV_2_53
    return sqrt(-2.0 * log(u1)) * cos(TWO_PI * u2)


cdef struct DBuf:
    double* p
    Py_ssize_t n
    Py_ssize_t cap


cdef struct IBuf:
    signed char* p
    Py_ssize_t n
    Py_ssize_t cap


cdef inline int dpush(DBuf* b, double v) except -1:
    cdef double* q
    if b.n == b.cap:
        b.cap = b.cap * 2 if b.cap else 1024
        q = <double*> realloc(b.p, b.cap * sizeof(double))
        if q == NULL:
            raise MemoryError()
        b.p = q
    b.p[b.n] = v
    b.n += 1
    return 0


cdef inline int ipush(IBuf* b, signed char v) except -1:
    cdef signed char* q
    if b.n == b.cap:
        b.cap = b.cap * 2 if b.cap else 1024
        q = <signed char*> realloc(b.p, b.cap * sizeof(signed char))
        if q == NULL:
            raise MemoryError()
        b.p = q
    b.p[b.n] = v
    b.n += 1
    return 0


cdef object dtake(DBuf* b):
    arr = np.empty(b.n, dtype=np.float64)
    cdef double[::1] mv = arr
    cdef Py_ssize_t i
    for i in range(b.n):
        mv[i] = b.p[i]
    return arr


cdef object itake(IBuf* b):
    arr = np.empty(b.n, dtype=np.int8)
    cdef signed char[::1] mv = arr
    cdef Py_ssize_t i
    for i in range(b.n):
        mv[i] = b.p[i]
    return arr


def simulate_path(
    int kind,
    double a,
    double sigma,
    int levy_kind,
    double s1,
    double s2,
    double p_mix,
    double jump_coef,
    double star_rate,
    double m1,
    double m2_star,
    double x0,
    double T,
    double dt,
    double eps,
    object seed,
    object path_index,
    long long max_jumps,
    int keep_thinned,
):
    """See ``kernels.pure.simulate_path``; identical contract and output."""
    cdef unsigned long long sd = seed & 0xFFFFFFFFFFFFFFFF
    cdef unsigned long long pi = path_index & 0xFFFFFFFFFFFFFFFF
    cdef unsigned long long kb = stream_key_c(sd, pi, 0)
    cdef unsigned long long ke = stream_key_c(sd, pi, 1)
    cdef unsigned long long kr = stream_key_c(sd, pi, 2)
    cdef unsigned long long knu = stream_key_c(sd, pi, 3)
    cdef unsigned long long km = stream_key_c(sd, pi, 4)
    cdef unsigned long long kie = stream_key_c(sd, pi, 5)
    cdef unsigned long long kir = stream_key_c(sd, pi, 6)
    cdef unsigned long long cb = 0, ce = 0, cr = 0, cnu = 0, cm = 0, cie = 0, cir = 0

    cdef long long n_steps = <long long> math.ceil(T / dt - 1e-12)
    cdef bint diffusive = kind != KIND_LEVY

    cdef DBuf times, values, db, disp, ev, iv
    cdef DBuf at, ar, anu, au, azpre, azpost
    cdef IBuf asrc, aacc
    times.p = values.p = db.p = disp.p = ev.p = iv.p = NULL
    at.p = ar.p = anu.p = au.p = azpre.p = azpost.p = NULL
    asrc.p = NULL
    aacc.p = NULL
    times.n = values.n = db.n = disp.n = ev.n = iv.n = 0
    at.n = ar.n = anu.n = au.n = azpre.n = azpost.n = 0
    asrc.n = aacc.n = 0
    times.cap = values.cap = db.cap = disp.cap = ev.cap = iv.cap = 0
    at.cap = ar.cap = anu.cap = au.cap = azpre.cap = azpost.cap = 0
    asrc.cap = aacc.cap = 0

    cdef double z = x0
    cdef bint absorbed = False
    cdef double abs_time = -1.0
    cdef double first_zero = -1.0
    cdef long long ncand = 0
    cdef long long nimm = 0

    cdef long long j
    cdef double t0, t1, z0, rate, tau, cur, te, dBi, sz
    cdef double ur, unu, umark, nu, r, zpre, us, e1, e2
    cdef Py_ssize_t i, m
    cdef int src
    cdef bint acc

    try:
        dpush(&times, 0.0)
        dpush(&values, x0)
        for j in range(1, n_steps + 1):
            t0 = times.p[times.n - 1]
            t1 = j * dt if j < n_steps else T
            if absorbed:
                dpush(&times, t1)
                dpush(&values, 0.0)
                dpush(&db, 0.0)
                dpush(&disp, 0.0)
                continue
            z0 = z

            # candidate epochs for this step, rates frozen at the step start
            ev.n = 0
            rate = jump_coef if kind == KIND_LEVY else z0 * jump_coef
            if rate > 0.0:
                tau = t0 + expo(ke, ce) / rate
                ce += 1
                while tau <= t1:
                    dpush(&ev, tau)
                    ncand += 1
                    if ncand + nimm > max_jumps:
                        raise ResourceLimitError(
                            f"event budget {max_jumps} exhausted near t={tau:.6g}"
                        )
                    tau = tau + expo(ke, ce) / rate
                    ce += 1
            iv.n = 0
            if star_rate > 0.0:
                tau = t0 + expo(kie, cie) / star_rate
                cie += 1
                while tau <= t1:
                    dpush(&iv, tau)
                    nimm += 1
                    if ncand + nimm > max_jumps:
                        raise ResourceLimitError(
                            f"event budget {max_jumps} exhausted near t={tau:.6g}"
                        )
                    tau = tau + expo(kie, cie) / star_rate
                    cie += 1

            i = 0
            m = 0
            cur = t0
            while True:
                if i < ev.n and (m >= iv.n or ev.p[i] <= iv.p[m]):
                    te = ev.p[i]
                    src = 0
                    i += 1
                elif m < iv.n:
                    te = iv.p[m]
                    src = 1
                    m += 1
                else:
                    te = t1
                    src = -1
                tau = te - cur
                dBi = 0.0
                if tau > 0.0:
                    dBi = sqrt(tau) * norm(kb, cb)
                    cb += 2
                    if diffusive:
                        sz = sqrt(z) if z > 0.0 else 0.0
                        z = z + (a - m1) * z * tau + sigma * sz * dBi
                        if kind == KIND_QPROCESS:
                            z = z + (sigma * sigma + m2_star) * tau
                    else:
                        z = z + (a - m1) * tau + sigma * dBi
                    if not isfinite(z):
                        raise NumericalError(f"state became non-finite near t={te:.6g}")

                if kind == KIND_CSBP and z <= 0.0:
                    # hit zero during the diffusive move: dead from this epoch on
                    z = 0.0
                    absorbed = True
                    abs_time = te
                    dpush(&times, te)
                    dpush(&values, 0.0)
                    dpush(&db, dBi)
                    dpush(&disp, 0.0)
                    if te < t1:
                        dpush(&times, t1)
                        dpush(&values, 0.0)
                        dpush(&db, 0.0)
                        dpush(&disp, 0.0)
                    break
                if kind == KIND_QPROCESS and z <= 0.0:
                    z = 0.0
                    if first_zero < 0.0:
                        first_zero = te

                if src < 0:
                    dpush(&times, t1)
                    dpush(&values, z)
                    dpush(&db, dBi)
                    dpush(&disp, 0.0)
                    break
                if src == 0:
                    ur = u01(kr, cr)
                    cr += 1
                    if levy_kind == LEVY_STABLE:
                        r = eps * pow(1.0 - ur, s1)
                    else:
                        r = eps - log1p(-ur) * s1
                    unu = u01(knu, cnu)
                    cnu += 1
                    umark = u01(km, cm)
                    cm += 1
                    zpre = z
                    if kind == KIND_LEVY:
                        # no thinning for the raw driver; draw is still consumed
                        nu = NAN
                        acc = True
                    else:
                        nu = unu * z0
                        acc = nu <= zpre
                    if acc:
                        z = zpre + r
                    if acc or keep_thinned:
                        dpush(&at, te)
                        dpush(&ar, r)
                        dpush(&anu, nu)
                        dpush(&au, umark)
                        dpush(&azpre, zpre)
                        dpush(&azpost, z)
                        ipush(&asrc, 0)
                        ipush(&aacc, 1 if acc else 0)
                    dpush(&times, te)
                    dpush(&values, z)
                    dpush(&db, dBi)
                    dpush(&disp, r if acc else 0.0)
                else:
                    if levy_kind == LEVY_STABLE:
                        us = u01(kir, cir)
                        cir += 1
                        r = eps * pow(1.0 - us, s2)
                    else:
                        us = u01(kir, cir)
                        cir += 1
                        e1 = expo(kir, cir)
                        cir += 1
                        if us < p_mix:
                            r = eps + s1 * e1
                        else:
                            e2 = expo(kir, cir)
                            cir += 1
                            r = eps + s1 * (e1 + e2)
                    zpre = z
                    z = zpre + r
                    dpush(&at, te)
                    dpush(&ar, r)
                    dpush(&anu, NAN)
                    dpush(&au, NAN)
                    dpush(&azpre, zpre)
                    dpush(&azpost, z)
                    ipush(&asrc, 1)
                    ipush(&aacc, 1)
                    dpush(&times, te)
                    dpush(&values, z)
                    dpush(&db, dBi)
                    dpush(&disp, r)
                cur = te

        return (
            dtake(&times),
            dtake(&values),
            dtake(&db),
            dtake(&disp),
            dtake(&at),
            dtake(&ar),
            dtake(&anu),
            dtake(&au),
            dtake(&azpre),
            dtake(&azpost),
            itake(&asrc),
            itake(&aacc),
            abs_time,
            first_zero,
            ncand,
            nimm,
        )
    finally:
        free(times.p)
        free(values.p)
        free(db.p)
        free(disp.p)
        free(ev.p)
        free(iv.p)
        free(at.p)
        free(ar.p)
        free(anu.p)
        free(au.p)
        free(azpre.p)
        free(azpost.p)
        free(asrc.p)
        free(aacc.p)
