"""Conditioning on non-extinction: weights, rejection, marking, drift removal.

Three independent routes to the conditioned law live here. Importance
weighting reweighs unconditioned paths by the martingale density e^{rho t}
Z_t / x; rejection keeps paths that survive far beyond the window of
interest; direct simulation of the conditioned SDE is in ``simulate``. The
jump-marking rule splits every recorded jump of an unconditioned path into a
retained branching jump or an immigrant, which is the pathwise mechanism
behind the conditioned dynamics, and the drift-corrected Brownian residual
isolates its Girsanov part.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DomainError, StatisticalError
from .laplace import survival_probability
from .mechanism import BranchingMechanism, Criticality
from .simulate import SimConfig, SimPath, iter_paths
from .stats import DEFAULT_MULTIPLIER, EstimateWithCI, WeightedMoments

S_LADDER_BASE = (1.0, 2.0, 5.0, 10.0, 20.0)


@dataclass(frozen=True)
class WeightedSample:
    """A functional evaluation paired with its change-of-measure weight."""

    value: float
    weight: float


def hweight(path: SimPath, mech: BranchingMechanism, t: float) -> float:
    """Density of the conditioned law on the first t units of path time.

    Equals e^{rho t} Z_t / x; zero exactly on paths already extinct at t.
    """
    if path.kind != "csbp":
        raise DomainError("weights apply to unconditioned branching paths")
    if t < 0 or t > path.times[-1]:
        raise DomainError(f"t={t} outside the simulated horizon")
    return math.exp(mech.rho * t) * path.value_at(t) / path.x0


def importance_expectation(
    paths: Iterable[SimPath],
    mech: BranchingMechanism,
    t: float,
    functional: Callable[[SimPath], float],
    multiplier: float = DEFAULT_MULTIPLIER,
) -> EstimateWithCI:
    """Conditioned-law expectation of a path functional by reweighting.

    Streams the paths once; the estimator is self-normalized, so the
    martingale normalization is enforced empirically rather than assumed.
    """
    acc = WeightedMoments()
    for path in paths:
        acc.add(functional(path), hweight(path, mech, t))
    if acc.n == 0:
        raise DomainError("importance expectation needs a nonempty ensemble")
    return acc.estimate(multiplier)


# ------------------------------------------------------------- rejection --


@dataclass(frozen=True)
class RejectionEstimate:
    """Survival-conditioned estimate plus its acceptance bookkeeping."""

    estimate: EstimateWithCI
    t: float
    s: float
    n_total: int
    n_accepted: int
    acceptance_rate: float
    acceptance_stderr: float
    acceptance_oracle: float

    @property
    def acceptance_consistent(self) -> bool:
        """Observed acceptance within the band of the survival oracle."""
        band = self.estimate.multiplier * self.acceptance_stderr
        return abs(self.acceptance_rate - self.acceptance_oracle) <= band


def survival_conditioned_expectation(
    mech: BranchingMechanism,
    x: float,
    t: float,
    s: float,
    functional: Callable[[SimPath], float],
    n_paths: int,
    config: SimConfig,
    multiplier: float = DEFAULT_MULTIPLIER,
) -> RejectionEstimate:
    """E[F | no extinction up to t + s], the finite-horizon surrogate of the
    conditioned law (exact in the s -> infinity limit).

    Simulates unconditioned paths on [0, t+s] and keeps the survivors. The
    acceptance rate is reported against the survival-probability oracle.
    """
    if s <= 0:
        raise DomainError(f"need s > 0, got s={s}")
    if n_paths < 2:
        raise DomainError(f"need at least 2 paths, got {n_paths}")
    if mech.rho < 0:
        # survival conditioning targets the non-extinction limit, which only
        # exists when extinction is certain
        raise DomainError("survival conditioning needs rho >= 0")
    horizon = t + s
    cfg = SimConfig(
        T=horizon, dt=config.dt, eps=config.eps, seed=config.seed,
        path_index=config.path_index, max_jumps=config.max_jumps,
        keep_thinned=config.keep_thinned,
    )
    acc = WeightedMoments()
    n_accepted = 0
    for path in iter_paths("csbp", mech, x, cfg, n_paths):
        if path.absorbed:
            continue
        n_accepted += 1
        acc.add(functional(path))
    if n_accepted == 0:
        raise StatisticalError(
            f"no path survived to t+s={horizon:g}; "
            "increase the ensemble size or reduce s"
        )
    if n_accepted == 1:
        raise StatisticalError(
            f"a single path survived to t+s={horizon:g}; no stderr is available. "
            "increase the ensemble size or reduce s"
        )
    rate = n_accepted / n_paths
    rate_err = math.sqrt(rate * (1.0 - rate) / n_paths)
    return RejectionEstimate(
        estimate=acc.estimate(multiplier),
        t=t,
        s=s,
        n_total=n_paths,
        n_accepted=n_accepted,
        acceptance_rate=rate,
        acceptance_stderr=rate_err,
        acceptance_oracle=survival_probability(mech, x, horizon),
    )


def s_ladder(mech: BranchingMechanism, base: Sequence[float] = S_LADDER_BASE) -> list[float]:
    """Conditioning horizons for the limit exhibit: multiples of the mean
    lifetime 1/rho when subcritical, the base values verbatim when critical."""
    crit = mech.classify()
    if crit is Criticality.SUPERCRITICAL:
        raise DomainError("conditioning ladder needs rho >= 0")
    if crit is Criticality.SUBCRITICAL:
        return [b / mech.rho for b in base]
    return list(base)


# ---------------------------------------------------------------- marking --


RETAINED = "retained"
IMMIGRANT = "immigrant"
NULL = "null"


@dataclass(frozen=True)
class MarkedAtom:
    """Outcome of the jump classification rule for one recorded atom.

    ``delta_big`` is the retained branching jump as a (size, selection) pair,
    the zero pair otherwise; ``delta_star`` is the immigrant size, 0 when the
    atom was retained or void. At most one of the two is nonzero.
    """

    t: float
    delta_big: tuple[float, float]
    delta_star: float

    @property
    def kind(self) -> str:
        if self.delta_star > 0.0:
            return IMMIGRANT
        if self.delta_big != (0.0, 0.0):
            return RETAINED
        return NULL


def mark_jumps(path: SimPath) -> list[MarkedAtom]:
    """Classify every recorded jump atom as retained or immigrant.

    The rule compares the atom's independent uniform mark against the
    pre/post state ratio at the exact jump epoch: marks above the ratio
    become immigrants of size r (when the atom was a real jump), marks below
    keep the jump as branching noise, and atoms sitting on an extinct state
    are void. Thinned candidates have equal pre and post states, hence ratio
    one, and are always retained.
    """
    if path.kind != "csbp":
        raise DomainError("the marking rule applies to unconditioned branching paths")
    out = []
    for i in range(len(path.atom_times)):
        t = float(path.atom_times[i])
        r = float(path.atom_sizes[i])
        nu = float(path.atom_nu[i])
        u = float(path.atom_marks[i])
        z_pre = float(path.atom_z_pre[i])
        z_post = float(path.atom_z_post[i])
        if math.isnan(u):
            raise DomainError(f"atom at t={t:g} carries no uniform mark")
        if z_post == 0.0:
            out.append(MarkedAtom(t=t, delta_big=(0.0, 0.0), delta_star=0.0))
        elif u > z_pre / z_post:
            accepted = nu <= z_pre
            out.append(
                MarkedAtom(t=t, delta_big=(0.0, 0.0), delta_star=r if accepted else 0.0)
            )
        else:
            out.append(MarkedAtom(t=t, delta_big=(r, nu), delta_star=0.0))
    return out


# --------------------------------------------------------------- girsanov --


def girsanov_residual(path: SimPath, mech: BranchingMechanism) -> np.ndarray:
    """Per-interval increments of the drift-corrected Brownian motion.

    Subtracts sigma times the trapezoidal integral of Z^{-1/2} from each
    recorded Brownian increment; under the conditioned law the cumulative sum
    is again a standard Brownian motion. Jump epochs use the pre-jump state
    as the right endpoint, matching the left limits in the correction term.
    """
    times = path.times
    values = path.values
    db = path.brownian_increments
    disp = path.jump_displacements
    if mech.sigma == 0.0:
        return db.copy()
    pre = values[1:] - disp  # state at the right endpoint before any jump
    left = values[:-1]
    tau = np.diff(times)
    active = tau > 0
    t_bad = math.inf
    bad_left = np.where((left <= 0) & active)[0]
    bad_pre = np.where((pre <= 0) & active)[0]
    if bad_left.size:
        t_bad = times[bad_left[0]]
    if bad_pre.size:
        t_bad = min(t_bad, times[bad_pre[0] + 1])
    if math.isfinite(t_bad):
        raise DomainError(
            f"state is not positive at t={t_bad:g}; "
            "the drift correction needs a strictly positive path"
        )
    g = np.zeros_like(db)
    np.divide(1.0, np.sqrt(left), out=g, where=active)
    gr = np.zeros_like(db)
    np.divide(1.0, np.sqrt(pre), out=gr, where=active)
    return db - mech.sigma * 0.5 * (g + gr) * tau
