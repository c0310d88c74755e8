"""Scalar kernel inputs derived from a mechanism and a simulation config.

Both kernel backends receive the same prepared floats, so tail masses and
sampler constants are computed once here (in Python, from the closed forms)
and bit-identical inputs reach either backend.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import DomainError
from ..mechanism import (
    BranchingMechanism,
    ExponentialJumps,
    Stable,
    Zero,
    compensated_mass,
    dropped_immigration_mass,
    levy_tail_rate,
)

KIND_CSBP = 0
KIND_QPROCESS = 1
KIND_LEVY = 2

LEVY_ZERO = 0
LEVY_STABLE = 1
LEVY_EXP = 2


@dataclass(frozen=True)
class KernelParams:
    """Flat argument pack for ``simulate_path`` (either backend)."""

    kind: int
    a: float
    sigma: float
    levy_kind: int
    s1: float        # stable: plain inverse-CDF exponent; exp: 1/b
    s2: float        # stable: size-biased exponent; exp: unused
    p_mix: float     # exp size-biased mixture weight; stable: unused
    jump_coef: float # plain tail mass above eps (per unit state for branching)
    star_rate: float # size-biased tail mass (immigration epoch rate)
    m1: float        # compensated mass on [eps, 1)
    m2_star: float   # dropped immigration mass on (0, eps)
    x0: float
    T: float
    dt: float
    eps: float
    seed: int
    path_index: int
    max_jumps: int
    keep_thinned: bool

    def args(self) -> tuple:
        return (
            self.kind, self.a, self.sigma, self.levy_kind,
            self.s1, self.s2, self.p_mix,
            self.jump_coef, self.star_rate, self.m1, self.m2_star,
            self.x0, self.T, self.dt, self.eps,
            self.seed, self.path_index, self.max_jumps,
            1 if self.keep_thinned else 0,
        )


def build_params(
    mech: BranchingMechanism,
    x0: float,
    kind: int,
    T: float,
    dt: float,
    eps: float,
    seed: int,
    path_index: int,
    max_jumps: int,
    keep_thinned: bool,
) -> KernelParams:
    if kind not in (KIND_CSBP, KIND_QPROCESS, KIND_LEVY):
        raise DomainError(f"unknown process kind {kind}")
    if kind != KIND_LEVY and not x0 > 0:
        raise DomainError(f"branching paths need a positive start, got x0={x0}")
    if not (T > 0 and dt > 0 and dt <= T):
        raise DomainError(f"need 0 < dt <= T, got dt={dt}, T={T}")
    if not 0 < eps <= 1:
        raise DomainError(f"need 0 < eps <= 1, got eps={eps}")
    if max_jumps <= 0:
        raise DomainError(f"need a positive event budget, got {max_jumps}")

    levy = mech.levy
    s1 = s2 = p_mix = 0.0
    if isinstance(levy, Zero):
        levy_kind = LEVY_ZERO
    elif isinstance(levy, Stable):
        levy_kind = LEVY_STABLE
        s1 = -1.0 / levy.alpha
        s2 = -1.0 / (levy.alpha - 1.0)
    else:
        assert isinstance(levy, ExponentialJumps)
        levy_kind = LEVY_EXP
        s1 = 1.0 / levy.b
        p_mix = eps / (eps + 1.0 / levy.b)

    jump_coef = levy_tail_rate(levy, eps, "plain") if levy_kind else 0.0
    star_rate = (
        levy_tail_rate(levy, eps, "size_biased")
        if (levy_kind and kind == KIND_QPROCESS)
        else 0.0
    )
    m1 = compensated_mass(levy, eps) if levy_kind else 0.0
    m2_star = (
        dropped_immigration_mass(levy, eps)
        if (levy_kind and kind == KIND_QPROCESS)
        else 0.0
    )
    return KernelParams(
        kind=kind, a=mech.a, sigma=mech.sigma, levy_kind=levy_kind,
        s1=s1, s2=s2, p_mix=p_mix,
        jump_coef=jump_coef, star_rate=star_rate, m1=m1, m2_star=m2_star,
        x0=float(x0), T=float(T), dt=float(dt), eps=float(eps),
        seed=int(seed), path_index=int(path_index),
        max_jumps=int(max_jumps), keep_thinned=bool(keep_thinned),
    )
