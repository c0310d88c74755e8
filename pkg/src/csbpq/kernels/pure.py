"""Pure-Python path kernel.

Reference implementation of the event loop. The compiled twin in
``_engine_cy.pyx`` follows it line for line and must produce bit-identical
output: both use the same SplitMix64 draws, the same libm calls (CPython's
``math`` and ``libc.math`` resolve to the same library) and the same
floating-point operation order. Any change here must be mirrored there.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import NumericalError, ResourceLimitError
from ..rng import (
    GAMMA,
    MASK64,
    STREAM_BROWNIAN,
    STREAM_IMM_EPOCH,
    STREAM_IMM_SIZE,
    STREAM_JUMP_EPOCH,
    STREAM_JUMP_SIZE,
    STREAM_MARK,
    STREAM_NU,
    TWO_PI,
    _INV_2_53,
    mix64,
    stream_key,
)

BACKEND_NAME = "pure"

_KIND_CSBP = 0
_KIND_QPROCESS = 1
_KIND_LEVY = 2
_LEVY_STABLE = 1

# atom source tags
SRC_BRANCH = 0
SRC_IMMIGRATION = 1


def _u01(key: int, ctr: int) -> float:
    return (mix64((key + ctr * GAMMA) & MASK64) >> 11) * _INV_2_53


def _expo(key: int, ctr: int) -> float:
    return -math.log1p(-_u01(key, ctr))


def _norm(key: int, ctr: int) -> float:
    u1 = ((mix64((key + ctr * GAMMA) & MASK64) >> 11) + 1) * _INV_2_53
    u2 = (mix64((key + (ctr + 1) * GAMMA) & MASK64) >> 11) * _INV_2_53
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(TWO_PI * u2)


def simulate_path(
    kind: int,
    a: float,
    sigma: float,
    levy_kind: int,
    s1: float,
    s2: float,
    p_mix: float,
    jump_coef: float,
    star_rate: float,
    m1: float,
    m2_star: float,
    x0: float,
    T: float,
    dt: float,
    eps: float,
    seed: int,
    path_index: int,
    max_jumps: int,
    keep_thinned: int,
):
    """Walk one path on the union of the Euler grid and the event epochs.

    Returns plain arrays; the wrapper in ``simulate`` dresses them up.  Layout:
    ``(times, values, db, disp, at, ar, anu, au, azpre, azpost, asrc, aacc,
    absorption_time, first_zero_time, n_candidates, n_immigration)``.
    """
    kb = stream_key(seed, path_index, STREAM_BROWNIAN)
    ke = stream_key(seed, path_index, STREAM_JUMP_EPOCH)
    kr = stream_key(seed, path_index, STREAM_JUMP_SIZE)
    knu = stream_key(seed, path_index, STREAM_NU)
    km = stream_key(seed, path_index, STREAM_MARK)
    kie = stream_key(seed, path_index, STREAM_IMM_EPOCH)
    kir = stream_key(seed, path_index, STREAM_IMM_SIZE)
    cb = ce = cr = cnu = cm = cie = cir = 0

    n_steps = int(math.ceil(T / dt - 1e-12))
    diffusive = kind != _KIND_LEVY

    times = [0.0]
    values = [x0]
    db = []    # Brownian increment over (times[i], times[i+1]]
    disp = []  # jump displacement applied at times[i+1]

    at: list[float] = []
    ar: list[float] = []
    anu: list[float] = []
    au: list[float] = []
    azpre: list[float] = []
    azpost: list[float] = []
    asrc: list[int] = []
    aacc: list[int] = []

    z = x0
    absorbed = False
    abs_time = -1.0
    first_zero = -1.0
    ncand = 0
    nimm = 0

    for j in range(1, n_steps + 1):
        t0 = times[-1]
        t1 = j * dt if j < n_steps else T
        if absorbed:
            times.append(t1)
            values.append(0.0)
            db.append(0.0)
            disp.append(0.0)
            continue
        z0 = z

        # candidate epochs for this step, rates frozen at the step start
        ev: list[float] = []
        rate = jump_coef if kind == _KIND_LEVY else z0 * jump_coef
        if rate > 0.0:
            tau = t0 + _expo(ke, ce) / rate
            ce += 1
            while tau <= t1:
                ev.append(tau)
                ncand += 1
                if ncand + nimm > max_jumps:
                    raise ResourceLimitError(
                        f"event budget {max_jumps} exhausted near t={tau:.6g}"
                    )
                tau = tau + _expo(ke, ce) / rate
                ce += 1
        iv: list[float] = []
        if star_rate > 0.0:
            tau = t0 + _expo(kie, cie) / star_rate
            cie += 1
            while tau <= t1:
                iv.append(tau)
                nimm += 1
                if ncand + nimm > max_jumps:
                    raise ResourceLimitError(
                        f"event budget {max_jumps} exhausted near t={tau:.6g}"
                    )
                tau = tau + _expo(kie, cie) / star_rate
                cie += 1

        i = 0
        m = 0
        cur = t0
        while True:
            if i < len(ev) and (m >= len(iv) or ev[i] <= iv[m]):
                te = ev[i]
                src = SRC_BRANCH
                i += 1
            elif m < len(iv):
                te = iv[m]
                src = SRC_IMMIGRATION
                m += 1
            else:
                te = t1
                src = -1
            tau = te - cur
            dBi = 0.0
            if tau > 0.0:
                dBi = math.sqrt(tau) * _norm(kb, cb)
                cb += 2
                if diffusive:
                    sz = math.sqrt(z) if z > 0.0 else 0.0
                    z = z + (a - m1) * z * tau + sigma * sz * dBi
                    if kind == _KIND_QPROCESS:
                        z = z + (sigma * sigma + m2_star) * tau
                else:
                    z = z + (a - m1) * tau + sigma * dBi
                if not math.isfinite(z):
                    raise NumericalError(f"state became non-finite near t={te:.6g}")

            if kind == _KIND_CSBP and z <= 0.0:
                # hit zero during the diffusive move: dead from this epoch on
                z = 0.0
                absorbed = True
                abs_time = te
                times.append(te)
                values.append(0.0)
                db.append(dBi)
                disp.append(0.0)
                if te < t1:
                    times.append(t1)
                    values.append(0.0)
                    db.append(0.0)
                    disp.append(0.0)
                break
            if kind == _KIND_QPROCESS and z <= 0.0:
                z = 0.0
                if first_zero < 0.0:
                    first_zero = te

            if src < 0:
                times.append(t1)
                values.append(z)
                db.append(dBi)
                disp.append(0.0)
                break
            if src == SRC_BRANCH:
                ur = _u01(kr, cr)
                cr += 1
                if levy_kind == _LEVY_STABLE:
                    r = eps * math.pow(1.0 - ur, s1)
                else:
                    r = eps - math.log1p(-ur) * s1
                unu = _u01(knu, cnu)
                cnu += 1
                umark = _u01(km, cm)
                cm += 1
                zpre = z
                if kind == _KIND_LEVY:
                    # no thinning for the raw driver; draw is still consumed
                    nu = math.nan
                    acc = True
                else:
                    nu = unu * z0
                    acc = nu <= zpre
                if acc:
                    z = zpre + r
                if acc or keep_thinned:
                    at.append(te)
                    ar.append(r)
                    anu.append(nu)
                    au.append(umark)
                    azpre.append(zpre)
                    azpost.append(z)
                    asrc.append(SRC_BRANCH)
                    aacc.append(1 if acc else 0)
                times.append(te)
                values.append(z)
                db.append(dBi)
                disp.append(r if acc else 0.0)
            else:
                if levy_kind == _LEVY_STABLE:
                    us = _u01(kir, cir)
                    cir += 1
                    r = eps * math.pow(1.0 - us, s2)
                else:
                    us = _u01(kir, cir)
                    cir += 1
                    e1 = _expo(kir, cir)
                    cir += 1
                    if us < p_mix:
                        r = eps + s1 * e1
                    else:
                        e2 = _expo(kir, cir)
                        cir += 1
                        r = eps + s1 * (e1 + e2)
                zpre = z
                z = zpre + r
                at.append(te)
                ar.append(r)
                anu.append(math.nan)
                au.append(math.nan)
                azpre.append(zpre)
                azpost.append(z)
                asrc.append(SRC_IMMIGRATION)
                aacc.append(1)
                times.append(te)
                values.append(z)
                db.append(dBi)
                disp.append(r)
            cur = te

    return (
        np.asarray(times, dtype=np.float64),
        np.asarray(values, dtype=np.float64),
        np.asarray(db, dtype=np.float64),
        np.asarray(disp, dtype=np.float64),
        np.asarray(at, dtype=np.float64),
        np.asarray(ar, dtype=np.float64),
        np.asarray(anu, dtype=np.float64),
        np.asarray(au, dtype=np.float64),
        np.asarray(azpre, dtype=np.float64),
        np.asarray(azpost, dtype=np.float64),
        np.asarray(asrc, dtype=np.int8),
        np.asarray(aacc, dtype=np.int8),
        abs_time,
        first_zero,
        ncand,
        nimm,
    )
