"""Pathwise simulation of the branching SDE, its conditioned variant and the
driving spectrally positive Lévy process.

The state walks the union of the Euler grid and the exact event epochs, so
recorded jump atoms sit at their true times (the marking and time-change
layers consume them directly). Branching jumps above the truncation level are
produced by thinning: candidate epochs arrive at the rate bound frozen at the
step start, and a candidate is kept when its selection coordinate does not
exceed the pre-jump state. Dropped small jumps are compensated by drift.

Paths are reproducible: a path is a pure function of (seed, path_index,
config, mechanism), independent of backend and of how an ensemble is
scheduled.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator

import numpy as np

from . import kernels
from .errors import DomainError, ResourceLimitError
from .kernels import KIND_CSBP, KIND_LEVY, KIND_QPROCESS, build_params
from .mechanism import BranchingMechanism, Criticality

SRC_BRANCH = kernels.SRC_BRANCH
SRC_IMMIGRATION = kernels.SRC_IMMIGRATION
_SOURCE_NAMES = {SRC_BRANCH: "branch", SRC_IMMIGRATION: "immigration"}

_KIND_IDS = {"csbp": KIND_CSBP, "qprocess": KIND_QPROCESS, "levy": KIND_LEVY}


@dataclass(frozen=True)
class SimConfig:
    """Discretization and reproducibility knobs shared by all process kinds.

    ``eps`` is the small-jump truncation level: jumps below it are replaced
    by their compensating drift, so it is an explicit accuracy knob, not an
    implementation detail.
    """

    T: float
    dt: float = 1e-3
    eps: float = 1e-2
    seed: int = 0
    path_index: int = 0
    max_jumps: int = 10_000_000
    keep_thinned: bool = False

    def __post_init__(self) -> None:
        if not (self.T > 0 and self.dt > 0 and self.dt <= self.T):
            raise DomainError(f"need 0 < dt <= T, got dt={self.dt}, T={self.T}")
        if not 0 < self.eps <= 1:
            raise DomainError(f"need 0 < eps <= 1, got eps={self.eps}")
        if self.max_jumps <= 0:
            raise DomainError(f"need a positive event budget, got {self.max_jumps}")
        if self.path_index < 0:
            raise DomainError(f"path_index must be >= 0, got {self.path_index}")


@dataclass(frozen=True)
class JumpAtom:
    """One recorded point of the driving jump measure.

    ``nu`` is the selection coordinate compared against the pre-jump state
    (NaN for immigration atoms and for raw Lévy paths, where no thinning
    happens); ``u`` is the independent uniform mark consumed by the jump
    classification rule.
    """

    t: float
    r: float
    nu: float
    u: float
    z_pre: float
    z_post: float
    source: str
    accepted: bool


@dataclass
class SimPath:
    """One simulated trajectory plus its noise records.

    ``times`` contains every Euler boundary and every event epoch;
    ``brownian_increments[i]`` is the increment over
    ``(times[i], times[i+1]]`` and ``jump_displacements[i]`` the jump applied
    at ``times[i+1]``. Atom columns hold the recorded jump measure points
    (only accepted ones unless the config asked to keep thinned candidates).
    """

    kind: str
    x0: float
    config: SimConfig
    mechanism: BranchingMechanism
    times: np.ndarray
    values: np.ndarray
    brownian_increments: np.ndarray
    jump_displacements: np.ndarray
    atom_times: np.ndarray
    atom_sizes: np.ndarray
    atom_nu: np.ndarray
    atom_marks: np.ndarray
    atom_z_pre: np.ndarray
    atom_z_post: np.ndarray
    atom_source: np.ndarray
    atom_accepted: np.ndarray
    absorption_time: float | None
    first_zero_time: float | None
    n_candidates: int
    n_immigration: int
    _atoms: list[JumpAtom] | None = field(default=None, repr=False)

    @property
    def atoms(self) -> list[JumpAtom]:
        """Atom records as objects (columns are the primary storage)."""
        if self._atoms is None:
            self._atoms = [
                JumpAtom(
                    t=float(self.atom_times[i]),
                    r=float(self.atom_sizes[i]),
                    nu=float(self.atom_nu[i]),
                    u=float(self.atom_marks[i]),
                    z_pre=float(self.atom_z_pre[i]),
                    z_post=float(self.atom_z_post[i]),
                    source=_SOURCE_NAMES[int(self.atom_source[i])],
                    accepted=bool(self.atom_accepted[i]),
                )
                for i in range(len(self.atom_times))
            ]
        return self._atoms

    @property
    def final(self) -> float:
        return float(self.values[-1])

    @property
    def absorbed(self) -> bool:
        return self.absorption_time is not None

    def value_at(self, t: float) -> float:
        """State at time t (right-continuous; exact at recorded epochs).

        An absorbed path stays at zero forever, so queries past its last
        recorded epoch return 0.0 instead of failing.
        """
        if t > self.times[-1] and self.absorbed and t >= (self.absorption_time or 0.0):
            return 0.0
        if not 0 <= t <= self.times[-1]:
            raise DomainError(f"t={t} outside the simulated horizon")
        idx = int(np.searchsorted(self.times, t, side="right")) - 1
        return float(self.values[idx])


def _pack(kind: str, mech: BranchingMechanism, x0: float, config: SimConfig, out) -> SimPath:
    (times, values, db, disp, at, ar, anu, au, azpre, azpost, asrc, aacc,
     abs_time, first_zero, ncand, nimm) = out
    return SimPath(
        kind=kind,
        x0=x0,
        config=config,
        mechanism=mech,
        times=times,
        values=values,
        brownian_increments=db,
        jump_displacements=disp,
        atom_times=at,
        atom_sizes=ar,
        atom_nu=anu,
        atom_marks=au,
        atom_z_pre=azpre,
        atom_z_post=azpost,
        atom_source=asrc,
        atom_accepted=aacc.astype(bool),
        absorption_time=abs_time if abs_time >= 0 else None,
        first_zero_time=first_zero if first_zero >= 0 else None,
        n_candidates=ncand,
        n_immigration=nimm,
    )


def _check_pre(kind: str, mech: BranchingMechanism) -> None:
    if kind == "csbp":
        report = mech.check_regularity()
        if not report.conservative:
            raise DomainError("mechanism is not conservative; paths may explode")
    elif kind == "qprocess":
        # The conditioned SDE needs rho = psi'(0+) finite and nonnegative.
        # Almost-sure extinction is the standing assumption behind the
        # conditioning interpretation but the degenerate linear case is still
        # a well-posed SDE, so it is documented rather than enforced.
        if mech.classify() is Criticality.SUPERCRITICAL:
            raise DomainError("conditioning on non-extinction needs rho >= 0")


def _params_proto(kind: str, mech: BranchingMechanism, x0: float, config: SimConfig):
    return build_params(
        mech, x0, _KIND_IDS[kind], config.T, config.dt, config.eps,
        config.seed, config.path_index, config.max_jumps, config.keep_thinned,
    )


def _simulate(kind: str, mech: BranchingMechanism, x0: float, config: SimConfig) -> SimPath:
    _check_pre(kind, mech)
    out = kernels.simulate_path(*_params_proto(kind, mech, x0, config).args())
    return _pack(kind, mech, x0, config, out)


def simulate_csbp(mech: BranchingMechanism, x: float, config: SimConfig) -> SimPath:
    """One branching path from x > 0; absorbed and frozen at zero."""
    return _simulate("csbp", mech, x, config)


def simulate_qprocess(mech: BranchingMechanism, x: float, config: SimConfig) -> SimPath:
    """One path of the process conditioned never to go extinct.

    Adds the immigration terms to the branching dynamics: extra epochs at the
    size-biased tail rate, the squared diffusion coefficient as drift, and the
    mean of the dropped small immigration jumps as drift. Discretization can
    still touch 0 (recorded in ``first_zero_time``); the state is clamped and
    continues.
    """
    return _simulate("qprocess", mech, x, config)


def simulate_levy(mech: BranchingMechanism, x0: float, config: SimConfig) -> SimPath:
    """The spectrally positive Lévy process with Laplace exponent psi."""
    return _simulate("levy", mech, x0, config)


def iter_paths(
    kind: str,
    mech: BranchingMechanism,
    x0: float,
    config: SimConfig,
    n_paths: int,
) -> Iterator[SimPath]:
    """Yield paths with consecutive path indices, one at a time.

    Streaming counterpart of :func:`run_ensemble` for consumers that reduce
    paths themselves without holding the whole ensemble.
    """
    if n_paths <= 0:
        raise DomainError(f"need n_paths > 0, got {n_paths}")
    _check_pre(kind, mech)
    proto = _params_proto(kind, mech, x0, config)
    for i in range(n_paths):
        p = replace(proto, path_index=config.path_index + i)
        cfg = replace(config, path_index=config.path_index + i)
        yield _pack(kind, mech, x0, cfg, kernels.simulate_path(*p.args()))


def _run_chunk(kind, mech, x0, config, start, stop, reduce_path, skip_budget):
    proto = _params_proto(kind, mech, x0, config)
    out = []
    for i in range(start, stop):
        p = replace(proto, path_index=config.path_index + i)
        cfg = replace(config, path_index=config.path_index + i)
        try:
            raw = kernels.simulate_path(*p.args())
        except ResourceLimitError:
            if not skip_budget:
                raise
            out.append(None)
            continue
        out.append(reduce_path(_pack(kind, mech, x0, cfg, raw)))
    return out


def run_ensemble(
    kind: str,
    mech: BranchingMechanism,
    x0: float,
    config: SimConfig,
    n_paths: int,
    reduce_path: Callable[[SimPath], object],
    workers: int = 1,
    skip_budget_errors: bool = False,
) -> list:
    """Reduce ``n_paths`` independent paths to a list in path-index order.

    ``reduce_path`` maps each path to a small value so ensembles never hold
    more than one path at a time. Output is identical for any ``workers``
    (chunks are concatenated in index order, never completion order); with
    workers > 1 the reducer must be picklable.

    ``skip_budget_errors`` replaces paths that exhaust ``max_jumps`` with
    None instead of raising; callers doing heavy-tailed ensembles account for
    the skips explicitly.
    """
    if n_paths <= 0:
        raise DomainError(f"need n_paths > 0, got {n_paths}")
    if kind not in _KIND_IDS:
        raise DomainError(f"unknown process kind {kind!r}")
    _check_pre(kind, mech)

    if workers <= 1:
        return _run_chunk(kind, mech, x0, config, 0, n_paths, reduce_path, skip_budget_errors)
    chunk = max(1, -(-n_paths // (workers * 4)))
    results: list = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(
                _run_chunk, kind, mech, x0, config,
                s, min(s + chunk, n_paths), reduce_path, skip_budget_errors,
            )
            for s in range(0, n_paths, chunk)
        ]
        for f in futures:
            results.extend(f.result())
    return results
