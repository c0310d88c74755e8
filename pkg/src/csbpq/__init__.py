"""Simulation and verification of continuous-state branching processes and
their conditionings on never going extinct.

The package has three layers: closed-form machinery (mechanism, laplace),
pathwise simulation with a compiled kernel and a pure-Python fallback
(simulate, kernels), and the conditioning / time-change / verification
toolbox built on top (conditioning, lamperti, stats, verify). ``csbpq.cli``
exposes all of it as a command line.
"""

from ._version import __version__
from .conditioning import (
    MarkedAtom,
    RejectionEstimate,
    girsanov_residual,
    hweight,
    importance_expectation,
    mark_jumps,
    s_ladder,
    survival_conditioned_expectation,
)
from .errors import (
    ConfigError,
    CsbpqError,
    DomainError,
    NumericalError,
    ResourceLimitError,
    StatisticalError,
    UnsupportedMechanismError,
)
from .lamperti import (
    StableDecomposition,
    TimeChange,
    csbp_to_levy,
    lamperti_clock,
    levy_to_csbp,
    stable_decompose,
    stable_theta_atoms,
)
from .laplace import (
    closed_form_u,
    csbp_laplace,
    qprocess_laplace,
    solve_u,
    survival_probability,
    u_infinity,
)
from .mechanism import (
    BranchingMechanism,
    Criticality,
    ExponentialJumps,
    Stable,
    Zero,
    mechanism_from_json,
    mechanism_to_json,
    normalized_stable_mechanism,
    quadratic_mechanism,
    stable_mechanism,
)
from .simulate import (
    JumpAtom,
    SimConfig,
    SimPath,
    iter_paths,
    run_ensemble,
    simulate_csbp,
    simulate_levy,
    simulate_qprocess,
)
from .verify import SuiteReport, run_suite

__all__ = [
    "__version__",
    # mechanism
    "BranchingMechanism",
    "Criticality",
    "ExponentialJumps",
    "Stable",
    "Zero",
    "mechanism_from_json",
    "mechanism_to_json",
    "normalized_stable_mechanism",
    "quadratic_mechanism",
    "stable_mechanism",
    # transforms
    "closed_form_u",
    "csbp_laplace",
    "qprocess_laplace",
    "solve_u",
    "survival_probability",
    "u_infinity",
    # simulation
    "JumpAtom",
    "SimConfig",
    "SimPath",
    "iter_paths",
    "run_ensemble",
    "simulate_csbp",
    "simulate_levy",
    "simulate_qprocess",
    # conditioning
    "MarkedAtom",
    "RejectionEstimate",
    "girsanov_residual",
    "hweight",
    "importance_expectation",
    "mark_jumps",
    "s_ladder",
    "survival_conditioned_expectation",
    # time change
    "StableDecomposition",
    "TimeChange",
    "csbp_to_levy",
    "lamperti_clock",
    "levy_to_csbp",
    "stable_decompose",
    "stable_theta_atoms",
    # verification
    "SuiteReport",
    "run_suite",
    # errors
    "ConfigError",
    "CsbpqError",
    "DomainError",
    "NumericalError",
    "ResourceLimitError",
    "StatisticalError",
    "UnsupportedMechanismError",
]
