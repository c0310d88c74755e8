"""Time changes between spectrally positive Levy paths and branching paths.

Running the internal clock of a Levy path at speed 1/X turns it into a
branching path; running a branching path at speed Z undoes it. Both clocks
accumulate trapezoidally over the recorded grid, using the left limit at
jump epochs so the integrand stays predictable. The stable reduction at the
end rewrites a conditioned stable path as state-scaled alpha-stable noise
plus an independent subordinator, atom by atom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .mechanism import Stable, compensated_mass, dropped_immigration_mass
from .simulate import SRC_BRANCH, SRC_IMMIGRATION, SimPath

# relative state level treated as the hitting of zero; below it the clock
# integrand 1/X is no longer resolvable on the grid
ABSORB_CAP_FRACTION = 1e-9


@dataclass(frozen=True)
class TimeChange:
    """Matched nondecreasing grids of one Lamperti clock.

    ``target_times[i]`` is the accumulated clock at ``source_times[i]``; the
    mapping stops at the first hitting of zero, so both arrays may be shorter
    than the source path grid.
    """

    source_times: np.ndarray
    target_times: np.ndarray

    @property
    def clock_integral(self) -> np.ndarray:
        return self.target_times

    def __post_init__(self) -> None:
        if len(self.source_times) != len(self.target_times):
            raise DomainError("clock grids must have matching lengths")
        if np.any(np.diff(self.target_times) < 0):
            raise DomainError("clock must be nondecreasing")


def _left_right(path: SimPath) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    tau = np.diff(path.times)
    left = path.values[:-1]
    right = path.values[1:] - path.jump_displacements
    return tau, left, right


def _reciprocal_clock(path: SimPath) -> tuple[np.ndarray, int, bool]:
    """Cumulative integral of 1/X up to the first visit below the cap.

    Returns (clock values, index of the last mapped source epoch, absorbed).
    The terminal sub-interval of an absorbed path uses the left-limit rate
    only: the true hitting time sits below grid resolution and a capped
    1/X value there would dominate the whole integral.
    """
    tau, left, right = _left_right(path)
    cap = path.x0 * ABSORB_CAP_FRACTION
    dead = np.nonzero(right < cap)[0]
    stop = int(dead[0]) if dead.size else len(tau)
    inc = tau[:stop] * 0.5 * (1.0 / left[:stop] + 1.0 / right[:stop])
    clock = np.concatenate([[0.0], np.cumsum(inc)])
    if dead.size:
        clock = np.append(clock, clock[-1] + tau[stop] / left[stop])
        return clock, stop + 1, True
    return clock, stop, False


def _mass_clock(path: SimPath) -> tuple[np.ndarray, int, bool]:
    """Cumulative integral of Z, stopped where the state reaches zero."""
    tau, left, right = _left_right(path)
    dead = np.nonzero(left <= 0.0)[0]
    stop = int(dead[0]) if dead.size else len(tau)
    inc = tau[:stop] * 0.5 * (left[:stop] + np.maximum(right[:stop], 0.0))
    clock = np.concatenate([[0.0], np.cumsum(inc)])
    return clock, stop, dead.size > 0


def lamperti_clock(path: SimPath) -> TimeChange:
    """The clock of the applicable direction: 1/X for a Levy path, Z for a
    branching path."""
    if path.kind == "levy":
        clock, stop, _ = _reciprocal_clock(path)
    else:
        clock, stop, _ = _mass_clock(path)
    return TimeChange(source_times=path.times[: stop + 1], target_times=clock)


def _map_atoms(path: SimPath, src_times: np.ndarray, out_times: np.ndarray):
    """Carry atom records across the clock; epochs beyond the mapped segment
    are dropped, the rest keep every coordinate except the epoch itself."""
    keep = path.atom_times <= src_times[-1]
    mapped = np.interp(path.atom_times[keep], src_times, out_times)
    return keep, mapped


def _derived(path: SimPath, kind, times, values, db, disp, keep, atom_times,
             absorption_time, first_zero_time) -> SimPath:
    return SimPath(
        kind=kind,
        x0=path.x0,
        config=path.config,
        mechanism=path.mechanism,
        times=times,
        values=values,
        brownian_increments=db,
        jump_displacements=disp,
        atom_times=atom_times,
        atom_sizes=path.atom_sizes[keep],
        atom_nu=path.atom_nu[keep],
        atom_marks=path.atom_marks[keep],
        atom_z_pre=path.atom_z_pre[keep],
        atom_z_post=path.atom_z_post[keep],
        atom_source=path.atom_source[keep],
        atom_accepted=path.atom_accepted[keep],
        absorption_time=absorption_time,
        first_zero_time=first_zero_time,
        n_candidates=path.n_candidates,
        n_immigration=path.n_immigration,
    )


def levy_to_csbp(xpath: SimPath) -> SimPath:
    """Time-change a Levy path into a branching path, absorbing at the first
    hitting of zero.

    The output grid is the image of the source grid under the clock
    inf{s: int_0^s du/X_u > t}; values, jumps and atom records carry over
    unchanged (the state itself is preserved, only its clock moves). The
    noise columns are copied verbatim and keep their source-time meaning, so
    the derived path supports law checks and further time changes but not
    noise-replay consumers.
    """
    if xpath.kind != "levy":
        raise DomainError("levy_to_csbp expects a Levy driver path")
    if xpath.x0 <= 0:
        raise DomainError("the time change needs a positive start")
    clock, last, absorbed = _reciprocal_clock(xpath)
    src = xpath.times[: last + 1]
    values = xpath.values[: last + 1].copy()
    disp = xpath.jump_displacements[:last].copy()
    if absorbed:
        # the state is dead at the terminal epoch whatever the raw value was
        values[-1] = 0.0
        keep = xpath.atom_times <= src[-2] if len(src) >= 2 else np.zeros(0, bool)
        mapped = np.interp(xpath.atom_times[keep], src[:-1], clock[:-1])
        disp[-1] = 0.0
    else:
        keep, mapped = _map_atoms(xpath, src, clock)
    t_abs = float(clock[-1]) if absorbed else None
    return _derived(
        xpath, "csbp", clock, values, xpath.brownian_increments[:last].copy(),
        disp, keep, mapped, t_abs, t_abs,
    )


def csbp_to_levy(zpath: SimPath) -> SimPath:
    """Time-change a branching path back into its Levy driver.

    The clock inf{s: int_0^s Z_u du > t} exhausts at extinction, so the
    output of an absorbed input simply stops at the final (zero) state.
    """
    if zpath.kind != "csbp":
        raise DomainError("csbp_to_levy expects an unconditioned branching path")
    clock, last, _ = _mass_clock(zpath)
    src = zpath.times[: last + 1]
    keep, mapped = _map_atoms(zpath, src, clock)
    return _derived(
        zpath, "levy", clock, zpath.values[: last + 1].copy(),
        zpath.brownian_increments[:last].copy(),
        zpath.jump_displacements[:last].copy(), keep, mapped, None, None,
    )


# --------------------------------------------------------- stable reduction


def _require_stable(path: SimPath) -> Stable:
    levy = path.mechanism.levy
    if not isinstance(levy, Stable):
        raise DomainError("the stable reduction needs a stable jump measure")
    return levy


def stable_theta_atoms(qpath: SimPath, alpha: float) -> list[tuple[float, float]]:
    """Branching jump atoms rescaled by the pre-jump state.

    Each accepted branching atom (t, r) of a conditioned stable path becomes
    (t, r / Z_{t-}^{1/alpha}); thinned candidates and immigration atoms are
    dropped. ``alpha`` is used as given, so synthetic paths can exercise the
    formula at parameter values outside the simulable range.
    """
    _require_stable(qpath)
    if qpath.kind != "qprocess":
        raise DomainError("theta atoms are defined for conditioned paths")
    if not 1.0 < alpha <= 2.0:
        raise DomainError(f"need alpha in (1, 2], got {alpha}")
    out = []
    inv = 1.0 / alpha
    for i in range(len(qpath.atom_times)):
        if qpath.atom_source[i] != SRC_BRANCH or not qpath.atom_accepted[i]:
            continue
        z_pre = float(qpath.atom_z_pre[i])
        if z_pre <= 0.0:
            continue
        out.append(
            (float(qpath.atom_times[i]), float(qpath.atom_sizes[i]) / z_pre**inv)
        )
    return out


@dataclass(frozen=True)
class StableDecomposition:
    """State increments split into scaled stable noise and a subordinator.

    ``x_increments[i]`` and ``s_increments[i]`` live on the sub-interval
    ending at ``times[i+1]``; ``residuals`` holds the cumulative
    reconstruction error Z_t - Z_0 - int Z^{1/alpha} dX - S_t at each epoch,
    which is floating-point noise when the decomposition applies.
    """

    times: np.ndarray
    x_increments: np.ndarray
    s_increments: np.ndarray
    residuals: np.ndarray


def stable_decompose(qpath: SimPath, alpha: float) -> StableDecomposition:
    """Split a conditioned pure-jump stable path into its two drivers.

    The drift of the simulated path is exactly the compensation of the
    sub-threshold scaled jumps, so it belongs to the X part; the immigration
    atoms plus the small-immigrant mean drift form the subordinator S. The
    left-point rule prices the compensation at the sub-interval start, and
    jumps use the exact recorded pre-jump state.
    """
    levy = _require_stable(qpath)
    if abs(alpha - levy.alpha) > 1e-12:
        raise DomainError(
            f"alpha {alpha} does not match the mechanism alpha {levy.alpha}"
        )
    if qpath.mechanism.sigma != 0.0:
        raise DomainError("the decomposition needs a pure-jump mechanism")
    canonical_a = -levy.k / (levy.alpha - 1.0)
    if not math.isclose(qpath.mechanism.a, canonical_a, rel_tol=1e-12, abs_tol=0.0):
        raise DomainError(
            "the decomposition needs the self-compensating stable drift "
            f"a={canonical_a}, got a={qpath.mechanism.a}"
        )
    if qpath.kind != "qprocess":
        raise DomainError("the decomposition is defined for conditioned paths")

    eps = qpath.config.eps
    drift_coef = qpath.mechanism.a - compensated_mass(levy, eps)
    m2_star = dropped_immigration_mass(levy, eps)
    times = qpath.times
    values = qpath.values
    tau = np.diff(times)
    left = values[:-1]
    n = len(tau)

    inv = 1.0 / alpha
    x_inc = drift_coef * left ** (1.0 - inv) * tau
    s_inc = m2_star * tau
    recon = drift_coef * left * tau + m2_star * tau

    idx = np.searchsorted(times, qpath.atom_times)
    for i in range(len(qpath.atom_times)):
        if not qpath.atom_accepted[i]:
            continue
        j = int(idx[i]) - 1  # atom applies at the end of sub-interval j
        r = float(qpath.atom_sizes[i])
        if qpath.atom_source[i] == SRC_IMMIGRATION:
            s_inc[j] += r
            recon[j] += r
        else:
            z_pre = float(qpath.atom_z_pre[i])
            theta = r / z_pre**inv
            x_inc[j] += theta
            recon[j] += z_pre**inv * theta
    residuals = np.empty(n + 1)
    residuals[0] = 0.0
    residuals[1:] = values[1:] - values[0] - np.cumsum(recon)
    return StableDecomposition(
        times=times, x_increments=x_inc, s_increments=s_inc, residuals=residuals
    )
