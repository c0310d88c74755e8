"""Branching mechanisms built from a drift, a diffusion, and a jump measure.

A mechanism is the triple (a, sigma, levy) entering

    psi(l) = -a*l + sigma^2 l^2 / 2 + int_0^inf (e^{-l r} - 1 + l r 1{r<1}) levy(dr)

with jump measures restricted to a closed parametric family: no jumps, a
power-law (stable) tail ``k r^{-(alpha+1)}`` with alpha in (1, 2), or an
exponential density ``c e^{-b r}``.  Everything downstream (Laplace solver,
path kernels, conditioning) consumes mechanisms through the closed forms here;
quadrature only appears as a cross-check and in the extinction-time integral.

Sign conventions: ``rho = psi'(0+)`` so the process mean is ``x e^{-rho t}``;
rho > 0 is subcritical, rho < 0 supercritical.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Literal, Union

import numpy as np
from scipy.integrate import quad
from scipy.special import gammainc

from .errors import ConfigError, DomainError

CRITICAL_ATOL = 1e-12

# resolution of the dyadic tail-exponent probe in almost-sure-extinction
# detection; power tails with exponent within this of 1 are misclassified
_TAIL_RATIO_TOL = 1e-4

TailWeight = Literal["plain", "size_biased"]


@dataclass(frozen=True)
class Zero:
    """No jumps."""


@dataclass(frozen=True)
class Stable:
    """Power-law jump density ``k * r**-(alpha+1)`` on (0, inf).

    The index is restricted to the open interval (1, 2): below it the mean
    jump size diverges, at 2 the measure degenerates into the Brownian part
    (use ``sigma`` instead).
    """

    k: float
    alpha: float

    def __post_init__(self) -> None:
        if not (self.k > 0 and math.isfinite(self.k)):
            raise DomainError(f"stable intensity k must be positive, got {self.k}")
        if self.alpha == 2:
            raise DomainError(
                "stable index 2 is the Brownian case; set sigma on the "
                "mechanism instead of a jump measure"
            )
        if not (1.0 < self.alpha < 2.0):
            raise DomainError(
                f"stable index must lie in (1, 2), got {self.alpha}"
            )


@dataclass(frozen=True)
class ExponentialJumps:
    """Exponential jump density ``c * exp(-b r)`` on (0, inf)."""

    c: float
    b: float

    def __post_init__(self) -> None:
        if not (self.c > 0 and math.isfinite(self.c)):
            raise DomainError(f"jump intensity c must be positive, got {self.c}")
        if not (self.b > 0 and math.isfinite(self.b)):
            raise DomainError(f"jump decay b must be positive, got {self.b}")


LevyMeasure = Union[Zero, Stable, ExponentialJumps]


class Criticality(enum.Enum):
    SUBCRITICAL = "subcritical"
    CRITICAL = "critical"
    SUPERCRITICAL = "supercritical"


# ---------------------------------------------------------------------------
# jump-measure functionals


def levy_density(levy: LevyMeasure, r: float) -> float:
    """Density of the jump measure at r > 0."""
    if r <= 0:
        raise DomainError(f"jump sizes are positive, got r={r}")
    if isinstance(levy, Zero):
        return 0.0
    if isinstance(levy, Stable):
        return levy.k * r ** (-levy.alpha - 1.0)
    return levy.c * math.exp(-levy.b * r)


def levy_tail_rate(levy: LevyMeasure, eps: float, weight: TailWeight = "plain") -> float:
    """Mass of the jump measure above ``eps``.

    ``plain`` integrates the measure itself (the candidate-epoch rate per unit
    of state), ``size_biased`` integrates ``r * levy(dr)`` (the immigration
    epoch rate of the conditioned process).
    """
    if eps <= 0:
        raise DomainError(f"tail cutoff must be positive, got eps={eps}")
    if isinstance(levy, Zero):
        return 0.0
    if isinstance(levy, Stable):
        k, al = levy.k, levy.alpha
        if weight == "plain":
            return k / al * eps**-al
        return k / (al - 1.0) * eps ** (1.0 - al)
    c, b = levy.c, levy.b
    if weight == "plain":
        return c / b * math.exp(-b * eps)
    return c * (eps / b + 1.0 / b**2) * math.exp(-b * eps)


def compensated_mass(levy: LevyMeasure, eps: float) -> float:
    """``int_[eps,1) r levy(dr)``: the drift removed when jumps in [eps, 1)
    are simulated raw instead of compensated.  Zero once eps >= 1."""
    if eps <= 0:
        raise DomainError(f"tail cutoff must be positive, got eps={eps}")
    if eps >= 1.0 or isinstance(levy, Zero):
        return 0.0
    if isinstance(levy, Stable):
        k, al = levy.k, levy.alpha
        return k / (al - 1.0) * (eps ** (1.0 - al) - 1.0)
    c, b = levy.c, levy.b
    antider = lambda r: -c * (r / b + 1.0 / b**2) * math.exp(-b * r)
    return antider(1.0) - antider(eps)


def dropped_immigration_mass(levy: LevyMeasure, eps: float) -> float:
    """``int_(0,eps) r^2 levy(dr)``: mean of the immigration jumps below the
    simulation cutoff, re-added to the conditioned process as drift."""
    if eps <= 0:
        raise DomainError(f"tail cutoff must be positive, got eps={eps}")
    if isinstance(levy, Zero):
        return 0.0
    if isinstance(levy, Stable):
        k, al = levy.k, levy.alpha
        return k / (2.0 - al) * eps ** (2.0 - al)
    c, b = levy.c, levy.b
    e = math.exp(-b * eps)
    return c * (2.0 / b**3 - (eps**2 / b + 2.0 * eps / b**2 + 2.0 / b**3) * e)


def first_moment_tail(levy: LevyMeasure, cut: float) -> float:
    """``int_[cut,inf) r levy(dr)`` (finite for every family in the enum)."""
    return levy_tail_rate(levy, cut, "size_biased") if not isinstance(levy, Zero) else 0.0


def sample_levy_jump(
    levy: LevyMeasure,
    eps: float,
    weight: TailWeight,
    rng: np.random.Generator,
    size: int | None = None,
):
    """Draw jump sizes from the tail of the measure above ``eps``.

    Sampling is exact: inverse CDF for the power-law family and the plain
    exponential tail, and a two-component mixture (memoryless shift) for the
    size-biased exponential tail.  Returns a scalar when ``size`` is None.
    """
    if isinstance(levy, Zero):
        raise DomainError("the zero measure has no jumps to sample")
    if eps <= 0:
        raise DomainError(f"tail cutoff must be positive, got eps={eps}")
    n = 1 if size is None else int(size)
    u = rng.random(n)
    if isinstance(levy, Stable):
        ex = -1.0 / levy.alpha if weight == "plain" else -1.0 / (levy.alpha - 1.0)
        out = eps * (1.0 - u) ** ex
    else:
        b = levy.b
        if weight == "plain":
            out = eps - np.log1p(-u) / b
        else:
            # density on [eps, inf) is prop. to r e^{-b r}; with s = r - eps it
            # splits into eps*Exp(b) + s*Exp(b) parts, i.e. an Exp/Gamma(2) mix
            p = eps / (eps + 1.0 / b)
            e1 = -np.log1p(-rng.random(n))
            e2 = -np.log1p(-rng.random(n))
            s = np.where(u < p, e1, e1 + e2) / b
            out = eps + s
    return out if size is not None else float(out[0])


def _levy_quad(levy: LevyMeasure, f: Callable[[float], float], lo: float, hi: float) -> float:
    if isinstance(levy, Zero):
        return 0.0
    val, _ = quad(lambda r: f(r) * levy_density(levy, r), lo, hi, limit=200)
    return val


# ---------------------------------------------------------------------------
# the mechanism


@dataclass(frozen=True)
class BranchingMechanism:
    """Drift / diffusion / jump triple defining psi."""

    a: float
    sigma: float
    levy: LevyMeasure

    def __post_init__(self) -> None:
        if not math.isfinite(self.a):
            raise DomainError(f"drift must be finite, got a={self.a}")
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise DomainError(f"diffusion must be nonnegative, got sigma={self.sigma}")
        if not isinstance(self.levy, (Zero, Stable, ExponentialJumps)):
            raise DomainError(f"unknown jump measure {self.levy!r}")
        # integrability int (1 ^ r^2) levy(dr) < inf, checked numerically at
        # construction so a future family cannot silently violate it; only
        # finiteness matters here, so quadrature accuracy warnings are noise
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            mass = _levy_quad(self.levy, lambda r: min(1.0, r * r), 0.0, 1.0)
            mass += _levy_quad(self.levy, lambda r: 1.0, 1.0, math.inf)
        if not math.isfinite(mass):
            raise DomainError("jump measure fails the (1 ^ r^2) integrability test")

    # -- psi and friends ----------------------------------------------------

    def _jump_integral(self, lam: float) -> float:
        levy = self.levy
        if isinstance(levy, Zero):
            return 0.0
        if isinstance(levy, Stable):
            k, al = levy.k, levy.alpha
            coef = k * math.gamma(2.0 - al) / (al * (al - 1.0))
            return coef * lam**al - lam * k / (al - 1.0)
        c, b = levy.c, levy.b
        j01 = (1.0 - (1.0 + b) * math.exp(-b)) / b**2
        return -c * lam / (b * (lam + b)) + lam * c * j01

    def _jump_integral_prime(self, lam: float) -> float:
        levy = self.levy
        if isinstance(levy, Zero):
            return 0.0
        if isinstance(levy, Stable):
            k, al = levy.k, levy.alpha
            return k / (al - 1.0) * (math.gamma(2.0 - al) * lam ** (al - 1.0) - 1.0)
        c, b = levy.c, levy.b
        j01 = (1.0 - (1.0 + b) * math.exp(-b)) / b**2
        return -c / (lam + b) ** 2 + c * j01

    def psi(self, lam: float) -> float:
        """Branching mechanism at lam >= 0."""
        if lam < 0:
            raise DomainError(f"psi domain is [0, inf), got {lam}")
        return -self.a * lam + 0.5 * self.sigma**2 * lam * lam + self._jump_integral(lam)

    def psi_prime(self, lam: float) -> float:
        """Derivative of psi; at 0 this is the (negated) mean growth rate."""
        if lam < 0:
            raise DomainError(f"psi' domain is [0, inf), got {lam}")
        if not math.isfinite(first_moment_tail(self.levy, 1.0)):
            raise DomainError("first moment of the jump tail is infinite")
        return -self.a + self.sigma**2 * lam + self._jump_integral_prime(lam)

    @property
    def rho(self) -> float:
        """psi'(0+); the mean of the process is x * exp(-rho t)."""
        return self.psi_prime(0.0)

    def classify(self, atol: float = CRITICAL_ATOL) -> Criticality:
        r = self.rho
        if abs(r) <= atol:
            return Criticality.CRITICAL
        return Criticality.SUBCRITICAL if r > 0 else Criticality.SUPERCRITICAL

    def phi(self, theta: float) -> float:
        """Immigration mechanism of the process conditioned on non-extinction:
        phi(theta) = psi'(theta) - psi'(0+).  Nonnegative and nondecreasing."""
        if theta < 0:
            raise DomainError(f"phi domain is [0, inf), got {theta}")
        return self.psi_prime(theta) - self.rho

    def mean(self, x: float, t: float) -> float:
        """First moment of the unconditioned process started at x."""
        return x * math.exp(-self.rho * t)

    # -- quadrature cross-checks --------------------------------------------

    def psi_quadrature(self, lam: float) -> float:
        """psi evaluated with adaptive quadrature instead of closed forms."""
        if lam < 0:
            raise DomainError(f"psi domain is [0, inf), got {lam}")
        small = _levy_quad(self.levy, lambda r: math.exp(-lam * r) - 1.0 + lam * r, 0.0, 1.0)
        big = _levy_quad(self.levy, lambda r: math.exp(-lam * r) - 1.0, 1.0, math.inf)
        return -self.a * lam + 0.5 * self.sigma**2 * lam * lam + small + big

    def truncated_psi(self, eps: float) -> Callable[[float], float]:
        """Mechanism of the simulated dynamics when jumps below ``eps`` are
        dropped together with their compensator.

        The returned callable is ``psi`` minus the (0, eps) part of the jump
        integral.  It is the exact branching mechanism of the path kernels'
        jump handling, so comparing ensembles against it isolates
        time-discretisation error from tail truncation.  The correction is in
        closed form (twice-by-parts plus an incomplete gamma for the power
        tail) because it sits inside ODE right-hand sides where quadrature
        noise would stall the step controller.
        """
        if not 0 < eps <= 1.0:
            raise DomainError(
                f"truncation correction implemented for eps in (0, 1], got {eps}"
            )
        levy = self.levy

        def correction(lam: float) -> float:
            # int_0^eps (e^{-lam r} - 1 + lam r) levy(dr)
            if isinstance(levy, Zero) or lam == 0.0:
                return 0.0
            if isinstance(levy, Stable):
                k, al = levy.k, levy.alpha
                f = math.exp(-lam * eps) - 1.0 + lam * eps
                fp = lam * (1.0 - math.exp(-lam * eps))
                tail = (
                    lam**al
                    * math.gamma(2.0 - al)
                    * gammainc(2.0 - al, lam * eps)
                )
                return k * (
                    -f * eps**-al / al
                    + fp * eps ** (1.0 - al) / (al * (1.0 - al))
                    - tail / (al * (1.0 - al))
                )
            c, b = levy.c, levy.b
            lb = lam + b
            return c * (
                -math.expm1(-lb * eps) / lb
                + math.expm1(-b * eps) / b
                + lam * (1.0 - (1.0 + b * eps) * math.exp(-b * eps)) / b**2
            )

        def psi_eps(lam: float) -> float:
            if lam < 0:
                raise DomainError(f"psi domain is [0, inf), got {lam}")
            return self.psi(lam) - correction(lam)

        return psi_eps

    # -- regularity ----------------------------------------------------------

    def check_regularity(self) -> "RegularityReport":
        """Sufficient-condition checks: conservativity and a.s. extinction.

        Conservativity holds when psi(0) = 0 and |psi'(0+)| < inf, which every
        mechanism in the closed family satisfies; it is still evaluated rather
        than assumed.  Almost-sure extinction additionally needs psi to grow
        fast enough for ``int^inf dx/psi(x)`` to converge; that integral is
        probed with dyadic quadrature blocks and a geometric tail estimate.
        For supercritical mechanisms the extinction flag is not applicable.
        """
        conservative = abs(self.psi(0.0)) <= 1e-12 and math.isfinite(self.rho)
        crit = self.classify()
        if crit is Criticality.SUPERCRITICAL:
            return RegularityReport(self, conservative, None, "supercritical: extinction flag not applicable")
        if self.psi(1.0) <= 0.0:
            # degenerate flat mechanism (all coefficients zero): the state
            # never moves, so it certainly never reaches zero
            return RegularityReport(self, conservative, False, "psi vanishes: upper integral diverges")

        # ints I_n over [2^n, 2^{n+1}); a power tail psi ~ c x^p gives the
        # exactly geometric ratio 2^{1-p}, so the block ratio separates
        # convergent (p > 1) from divergent tails down to _TAIL_RATIO_TOL
        blocks = []
        lo = 1.0
        for _ in range(60):
            hi = 2.0 * lo
            val, _ = quad(lambda x: 1.0 / self.psi(x), lo, hi, limit=100)
            blocks.append(val)
            lo = hi
        if not math.isfinite(blocks[-1]) or blocks[-1] <= 0:
            return RegularityReport(self, conservative, False, "psi tail not positive: upper integral diverges")
        ratios = [blocks[i + 1] / blocks[i] for i in range(len(blocks) - 5, len(blocks) - 1)]
        ratio = sorted(ratios)[len(ratios) // 2]
        extinct = ratio < 1.0 - _TAIL_RATIO_TOL
        note = f"dyadic tail ratio {ratio:.6g} ({'convergent' if extinct else 'divergent'} upper integral)"
        return RegularityReport(self, conservative, extinct, note)


@dataclass(frozen=True)
class RegularityReport:
    """Outcome of the sufficient-condition checks; extinction is None when the
    mechanism is supercritical."""

    mechanism: BranchingMechanism
    conservative: bool
    almost_sure_extinction: bool | None
    note: str


# ---------------------------------------------------------------------------
# factories and serialization


def quadratic_mechanism(scale: float = 1.0) -> BranchingMechanism:
    """Pure-diffusion critical mechanism with psi(l) = scale * l^2."""
    if scale <= 0:
        raise DomainError(f"scale must be positive, got {scale}")
    return BranchingMechanism(a=0.0, sigma=math.sqrt(2.0 * scale), levy=Zero())


def stable_mechanism(k: float, alpha: float) -> BranchingMechanism:
    """Critical pure-jump mechanism with psi(l) = k Gamma(2-alpha)/(alpha(alpha-1)) l^alpha.

    The drift ``a = -k/(alpha-1)`` cancels the linear term produced by the
    r < 1 compensation cutoff, which is the drift convention under which the
    time-change decomposition of stable paths holds without a residual drift.
    """
    levy = Stable(k=k, alpha=alpha)
    return BranchingMechanism(a=-k / (alpha - 1.0), sigma=0.0, levy=levy)


def normalized_stable_mechanism(alpha: float) -> BranchingMechanism:
    """Stable mechanism scaled so psi(l) = l**alpha exactly."""
    k = alpha * (alpha - 1.0) / math.gamma(2.0 - alpha)
    return stable_mechanism(k, alpha)


_LEVY_KINDS = {"zero", "stable", "expjumps"}


def levy_to_json(levy: LevyMeasure) -> dict:
    if isinstance(levy, Zero):
        return {"kind": "zero"}
    if isinstance(levy, Stable):
        return {"kind": "stable", "k": levy.k, "alpha": levy.alpha}
    return {"kind": "expjumps", "c": levy.c, "b": levy.b}


def mechanism_to_json(mech: BranchingMechanism) -> dict:
    return {"a": mech.a, "sigma": mech.sigma, "levy": levy_to_json(mech.levy)}


def _require_number(obj: dict, key: str, where: str) -> float:
    if key not in obj:
        raise ConfigError(f"{where}.{key}: missing required field")
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {val!r}")
    return float(val)


def levy_from_json(obj, where: str = "levy") -> LevyMeasure:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object, got {obj!r}")
    kind = obj.get("kind")
    if kind not in _LEVY_KINDS:
        raise ConfigError(f"{where}.kind: expected one of {sorted(_LEVY_KINDS)}, got {kind!r}")
    fields = {"zero": set(), "stable": {"k", "alpha"}, "expjumps": {"c", "b"}}[kind]
    unknown = set(obj) - fields - {"kind"}
    if unknown:
        raise ConfigError(f"{where}.{sorted(unknown)[0]}: unknown field")
    try:
        if kind == "zero":
            return Zero()
        if kind == "stable":
            return Stable(
                k=_require_number(obj, "k", where),
                alpha=_require_number(obj, "alpha", where),
            )
        return ExponentialJumps(
            c=_require_number(obj, "c", where),
            b=_require_number(obj, "b", where),
        )
    except DomainError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def mechanism_from_json(obj, where: str = "mechanism") -> BranchingMechanism:
    """Parse {"a": ..., "sigma": ..., "levy": {...}}, rejecting unknown keys
    with the full path to the offending field."""
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object, got {obj!r}")
    unknown = set(obj) - {"a", "sigma", "levy"}
    if unknown:
        raise ConfigError(f"{where}.{sorted(unknown)[0]}: unknown field")
    if "levy" not in obj:
        raise ConfigError(f"{where}.levy: missing required field")
    levy = levy_from_json(obj["levy"], where=f"{where}.levy")
    try:
        return BranchingMechanism(
            a=_require_number(obj, "a", where),
            sigma=_require_number(obj, "sigma", where),
            levy=levy,
        )
    except DomainError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
