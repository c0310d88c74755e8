"""Measure-change machinery: weights, rejection, marking, drift removal.

Statistical targets come from the Laplace solver (an independent code path)
or from closed forms derived by hand; synthetic paths pin down the exact
contract of the marking rule and the drift correction.
"""

import math

import numpy as np
import pytest
from scipy import integrate

from csbpq.conditioning import (
    IMMIGRANT,
    NULL,
    RETAINED,
    MarkedAtom,
    RejectionEstimate,
    WeightedSample,
    girsanov_residual,
    hweight,
    importance_expectation,
    mark_jumps,
    s_ladder,
    survival_conditioned_expectation,
)
from csbpq.errors import DomainError, StatisticalError
from csbpq.laplace import qprocess_laplace, survival_probability
from csbpq.mechanism import BranchingMechanism, ExponentialJumps, Zero, stable_mechanism
from csbpq.simulate import SimConfig, SimPath, iter_paths, simulate_csbp, simulate_qprocess
from csbpq.stats import WeightedMoments, campbell_check, weighted_mean_ci

QUADRATIC = BranchingMechanism(a=0.0, sigma=math.sqrt(2.0), levy=Zero())
FELLER = BranchingMechanism(a=-1.0, sigma=math.sqrt(2.0), levy=Zero())
EXPJUMPS = BranchingMechanism(a=-0.5, sigma=1.0, levy=ExponentialJumps(c=3.0, b=2.0))


def _synthetic_path(
    kind="csbp",
    x0=1.0,
    times=(0.0, 0.5, 1.0),
    values=(1.0, 1.0, 1.0),
    db=None,
    disp=None,
    atoms=(),
):
    """Hand-built SimPath; atoms are (t, r, nu, u, z_pre, z_post) tuples."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    n = len(times) - 1
    cols = list(zip(*atoms)) if atoms else [[]] * 6
    return SimPath(
        kind=kind,
        x0=x0,
        config=SimConfig(T=float(times[-1])),
        mechanism=QUADRATIC,
        times=times,
        values=values,
        brownian_increments=np.asarray(db if db is not None else [0.0] * n),
        jump_displacements=np.asarray(disp if disp is not None else [0.0] * n),
        atom_times=np.asarray(cols[0], dtype=float),
        atom_sizes=np.asarray(cols[1], dtype=float),
        atom_nu=np.asarray(cols[2], dtype=float),
        atom_marks=np.asarray(cols[3], dtype=float),
        atom_z_pre=np.asarray(cols[4], dtype=float),
        atom_z_post=np.asarray(cols[5], dtype=float),
        atom_source=np.zeros(len(atoms), dtype=np.int8),
        atom_accepted=np.asarray(
            [a[2] <= a[4] for a in atoms] if atoms else [], dtype=np.int8
        ),
        absorption_time=None,
        first_zero_time=None,
        n_candidates=len(atoms),
        n_immigration=0,
    )


# ----------------------------------------------------------------- hweight


def test_hweight_at_zero_is_one():
    path = simulate_csbp(FELLER, 2.0, SimConfig(T=0.5, dt=0.05, seed=1))
    assert hweight(path, FELLER, 0.0) == 1.0


def test_hweight_absorbed_path_is_zero():
    for idx in range(200):
        path = simulate_csbp(FELLER, 0.05, SimConfig(T=4.0, dt=0.01, seed=0, path_index=idx))
        if path.absorbed:
            assert hweight(path, FELLER, 4.0) == 0.0
            return
    pytest.fail("no absorbed path found")


def test_hweight_rejects_conditioned_paths():
    path = simulate_qprocess(QUADRATIC, 1.0, SimConfig(T=0.5, dt=0.05, seed=2))
    with pytest.raises(DomainError, match="unconditioned"):
        hweight(path, QUADRATIC, 0.5)


def test_hweight_rejects_time_beyond_horizon():
    path = simulate_csbp(FELLER, 1.0, SimConfig(T=0.5, dt=0.05, seed=3))
    with pytest.raises(DomainError, match="horizon"):
        hweight(path, FELLER, 0.75)


def test_mean_weight_is_one():
    # martingale normalization on a subcritical ensemble
    cfg = SimConfig(T=1.0, dt=1e-3, seed=101)
    acc = WeightedMoments()
    for path in iter_paths("csbp", FELLER, 1.0, cfg, 3000):
        acc.add(hweight(path, FELLER, 1.0))
    est = acc.estimate()
    assert est.covers(1.0), (est.mean, est.half_width)


def test_weighted_sample_feeds_stats():
    est = weighted_mean_ci([WeightedSample(1.0, 2.0), WeightedSample(3.0, 1.0)])
    assert est.mean == pytest.approx(5.0 / 3.0)


# ------------------------------------------------------------- importance


def test_importance_normalization_is_exact():
    cfg = SimConfig(T=0.5, dt=0.01, seed=5)
    paths = iter_paths("csbp", QUADRATIC, 1.0, cfg, 64)
    est = importance_expectation(paths, QUADRATIC, 0.5, lambda p: 1.0)
    assert est.mean == 1.0
    assert est.stderr == 0.0


def test_importance_empty_ensemble_rejected():
    with pytest.raises(DomainError, match="nonempty"):
        importance_expectation([], QUADRATIC, 0.5, lambda p: 1.0)


def test_importance_first_moment_quadratic():
    # E of the state at 1 under the conditioned law, started at 1:
    # second moment over first moment of the plain process = (1 + 2t + ...)
    cfg = SimConfig(T=1.0, dt=1e-3, seed=7)
    paths = iter_paths("csbp", QUADRATIC, 1.0, cfg, 4000)
    est = importance_expectation(paths, QUADRATIC, 1.0, lambda p: p.final)
    assert est.covers(3.0), (est.mean, est.half_width)


def test_importance_laplace_functional_quadratic():
    target = math.exp(-0.5) / 4.0
    oracle = qprocess_laplace(QUADRATIC, 1.0, 1.0, 1.0)
    assert oracle == pytest.approx(target, rel=1e-8)
    cfg = SimConfig(T=1.0, dt=1e-3, seed=8)
    paths = iter_paths("csbp", QUADRATIC, 1.0, cfg, 4000)
    est = importance_expectation(
        paths, QUADRATIC, 1.0, lambda p: math.exp(-p.final)
    )
    assert est.covers(target), (est.mean, est.half_width)


# -------------------------------------------------------------- rejection


def test_rejection_constant_functional():
    cfg = SimConfig(T=1.0, dt=0.01, seed=11)
    rej = survival_conditioned_expectation(
        QUADRATIC, 1.0, 0.5, 0.5, lambda p: 1.0, 500, cfg
    )
    assert rej.estimate.mean == 1.0
    assert rej.estimate.stderr == 0.0
    assert rej.n_accepted <= rej.n_total
    assert rej.acceptance_rate == rej.n_accepted / rej.n_total


def test_rejection_acceptance_rate_matches_survival_oracle():
    # started at 1 with quadratic branching, survival to time 2 has
    # probability 1 - exp(-1/2)
    cfg = SimConfig(T=1.0, dt=5e-4, seed=12)
    rej = survival_conditioned_expectation(
        QUADRATIC, 1.0, 1.0, 1.0, lambda p: 1.0, 4000, cfg
    )
    assert rej.acceptance_oracle == pytest.approx(1.0 - math.exp(-0.5), rel=1e-6)
    assert rej.acceptance_consistent, (
        rej.acceptance_rate,
        rej.acceptance_oracle,
        rej.acceptance_stderr,
    )


def test_rejection_validation():
    cfg = SimConfig(T=1.0, dt=0.01, seed=13)
    with pytest.raises(DomainError, match="s > 0"):
        survival_conditioned_expectation(QUADRATIC, 1.0, 1.0, 0.0, lambda p: 1.0, 10, cfg)
    with pytest.raises(DomainError, match="2 paths"):
        survival_conditioned_expectation(QUADRATIC, 1.0, 1.0, 1.0, lambda p: 1.0, 1, cfg)
    super_ = BranchingMechanism(a=0.5, sigma=1.0, levy=Zero())
    with pytest.raises(DomainError, match="rho"):
        survival_conditioned_expectation(super_, 1.0, 1.0, 1.0, lambda p: 1.0, 10, cfg)


def test_rejection_no_survivors():
    # tiny initial mass and a long horizon: survival needs a miracle
    cfg = SimConfig(T=1.0, dt=0.01, seed=14)
    with pytest.raises(StatisticalError, match="survived"):
        survival_conditioned_expectation(
            QUADRATIC, 1e-4, 1.0, 49.0, lambda p: 1.0, 10, cfg
        )


def test_sladder_scaling():
    assert s_ladder(QUADRATIC) == [1.0, 2.0, 5.0, 10.0, 20.0]
    sub = BranchingMechanism(a=-2.0, sigma=1.0, levy=Zero())
    assert s_ladder(sub) == pytest.approx([0.5, 1.0, 2.5, 5.0, 10.0])
    super_ = BranchingMechanism(a=0.5, sigma=1.0, levy=Zero())
    with pytest.raises(DomainError, match="rho"):
        s_ladder(super_)


# ---------------------------------------------------------------- marking


def test_marking_rule_frozen_examples():
    # one jump of size 1 from state 1 to 2: ratio 1/2 splits the mark range
    atom = (0.3, 1.0, 0.4, 0.7, 1.0, 2.0)
    (m,) = mark_jumps(_synthetic_path(atoms=[atom]))
    assert m.kind == IMMIGRANT
    assert m.delta_big == (0.0, 0.0)
    assert m.delta_star == 1.0

    atom = (0.3, 1.0, 0.4, 0.3, 1.0, 2.0)
    (m,) = mark_jumps(_synthetic_path(atoms=[atom]))
    assert m.kind == RETAINED
    assert m.delta_big == (1.0, 0.4)
    assert m.delta_star == 0.0

    atom = (0.3, 1.0, 0.4, 0.7, 0.0, 0.0)
    (m,) = mark_jumps(_synthetic_path(atoms=[atom]))
    assert m.kind == NULL
    assert m.delta_big == (0.0, 0.0)
    assert m.delta_star == 0.0


def test_marking_thinned_atoms_always_retained():
    # rejected candidate: state does not move, ratio is 1, mark below it
    atom = (0.3, 1.0, 5.0, 0.999, 2.0, 2.0)
    (m,) = mark_jumps(_synthetic_path(atoms=[atom]))
    assert m.kind == RETAINED
    assert m.delta_big == (1.0, 5.0)


def test_marking_requires_marks():
    atom = (0.3, 1.0, 0.4, math.nan, 1.0, 2.0)
    with pytest.raises(DomainError, match="mark"):
        mark_jumps(_synthetic_path(atoms=[atom]))


def test_marking_rejects_conditioned_paths():
    path = simulate_qprocess(QUADRATIC, 1.0, SimConfig(T=0.2, dt=0.05, seed=2))
    with pytest.raises(DomainError, match="unconditioned"):
        mark_jumps(path)


@pytest.mark.parametrize("keep_thinned", [False, True])
def test_marking_partition_invariant(keep_thinned):
    stable = stable_mechanism(k=1.0, alpha=1.5)
    seen = 0
    for idx in range(40):
        path = simulate_csbp(
            stable, 1.0,
            SimConfig(T=1.0, dt=0.01, seed=33, eps=0.05,
                      keep_thinned=keep_thinned, path_index=idx),
        )
        marked = mark_jumps(path)
        assert len(marked) == len(path.atom_times)
        kinds = [m.kind for m in marked]
        # each atom lands in exactly one class
        for m in marked:
            big = m.delta_big != (0.0, 0.0)
            star = m.delta_star > 0.0
            assert not (big and star)
        # real jump sizes are partitioned between retained and immigrant
        accepted = sorted(
            r for r, acc in zip(path.atom_sizes, path.atom_accepted) if acc
        )
        partitioned = sorted(
            [m.delta_star for m in marked if m.kind == IMMIGRANT]
            + [
                m.delta_big[0]
                for m, nu_ok in zip(marked, path.atom_nu <= path.atom_z_pre)
                if m.kind == RETAINED and nu_ok
            ]
        )
        assert partitioned == pytest.approx(accepted)
        seen += len(marked)
        if not keep_thinned:
            assert all(k != NULL for k in kinds) or path.absorbed
    assert seen > 50  # the ensemble actually exercised the rule


def test_marked_atom_kind_property():
    assert MarkedAtom(0.1, (1.0, 0.5), 0.0).kind == RETAINED
    assert MarkedAtom(0.1, (0.0, 0.0), 2.0).kind == IMMIGRANT
    assert MarkedAtom(0.1, (0.0, 0.0), 0.0).kind == NULL


def _expjumps_marked_ensemble(n_paths, T=1.0, seed=77):
    """Per-path marked atoms plus the horizon weight under EXPJUMPS."""
    rows = []
    for idx in range(n_paths):
        cfg = SimConfig(T=T, dt=1e-3, seed=seed, path_index=idx, eps=0.01)
        path = simulate_csbp(EXPJUMPS, 1.0, cfg)
        rows.append((mark_jumps(path), hweight(path, EXPJUMPS, T)))
    return rows


def test_marked_immigrant_intensity():
    # under the conditioned law the immigrant atoms form a Poisson measure
    # with size intensity r * density(r); count atoms of size >= 1
    c, b, T = 3.0, 2.0, 1.0
    target = T * integrate.quad(lambda r: r * c * math.exp(-b * r), 1.0, np.inf)[0]
    rows = _expjumps_marked_ensemble(3000, T=T)
    rep = campbell_check(
        ([m.delta_star for m in marked] for marked, _ in rows),
        f=lambda s: 1.0 if s >= 1.0 else 0.0,
        target=target,
        weights=(w for _, w in rows),
        name="immigrants",
    )
    assert rep.passed, (rep.estimate, rep.target, rep.band)


def test_marked_retained_intensity():
    # retained real jumps keep the state-dependent rate Z_s * density
    c, b, T = 3.0, 2.0, 1.0
    rho = EXPJUMPS.rho
    psi2 = EXPJUMPS.sigma**2 + integrate.quad(
        lambda r: r * r * c * math.exp(-b * r), 0.0, np.inf
    )[0]
    x = 1.0
    # integral over [0, T] of the conditioned mean started at x
    mean_integral = (psi2 / rho) * (T - (1.0 - math.exp(-rho * T)) / rho) + x * (
        1.0 - math.exp(-rho * T)
    ) / rho
    tail = integrate.quad(lambda r: c * math.exp(-b * r), 1.0, np.inf)[0]
    rows = _expjumps_marked_ensemble(3000, T=T)
    rep = campbell_check(
        (
            [m.delta_big[0] for m in marked if m.kind == RETAINED]
            for marked, _ in rows
        ),
        f=lambda s: 1.0 if s >= 1.0 else 0.0,
        target=mean_integral * tail,
        weights=(w for _, w in rows),
        name="retained",
    )
    assert rep.passed, (rep.estimate, rep.target, rep.band)


# --------------------------------------------------------------- girsanov


def test_girsanov_zero_sigma_returns_increments():
    pure_jump = BranchingMechanism(a=-0.2, sigma=0.0, levy=ExponentialJumps(c=1.0, b=1.0))
    path = simulate_csbp(pure_jump, 1.0, SimConfig(T=0.5, dt=0.05, seed=21))
    res = girsanov_residual(path, pure_jump)
    np.testing.assert_array_equal(res, path.brownian_increments)


def test_girsanov_constant_path_closed_form():
    mech = BranchingMechanism(a=0.0, sigma=1.0, levy=Zero())
    path = _synthetic_path(
        times=(0.0, 0.4, 1.0), values=(1.0, 1.0, 1.0), db=(0.1, -0.2)
    )
    res = girsanov_residual(path, mech)
    # B increments minus the elapsed time: integrand is exactly 1
    assert res == pytest.approx([0.1 - 0.4, -0.2 - 0.6])
    assert res.sum() == pytest.approx((0.1 - 0.2) - 1.0)


def test_girsanov_names_first_bad_epoch():
    mech = BranchingMechanism(a=0.0, sigma=1.0, levy=Zero())
    path = _synthetic_path(times=(0.0, 0.25, 1.0), values=(1.0, 0.0, 1.0))
    with pytest.raises(DomainError, match="t=0.25"):
        girsanov_residual(path, mech)


def test_girsanov_rejects_absorbed_paths():
    for idx in range(200):
        path = simulate_csbp(
            FELLER, 0.05, SimConfig(T=4.0, dt=0.01, seed=0, path_index=idx)
        )
        if path.absorbed:
            with pytest.raises(DomainError, match="positive"):
                girsanov_residual(path, FELLER)
            return
    pytest.fail("no absorbed path found")


def test_girsanov_weighted_moments():
    # under the conditioned measure the corrected increments sum to a
    # standard Brownian motion: weighted mean 0 and weighted variance t
    cfg = SimConfig(T=1.0, dt=1e-3, seed=23)
    mean_acc = WeightedMoments()
    var_acc = WeightedMoments()
    for path in iter_paths("csbp", FELLER, 1.0, cfg, 3000):
        if path.absorbed:
            mean_acc.add(0.0, 0.0)
            var_acc.add(0.0, 0.0)
            continue
        w = hweight(path, FELLER, 1.0)
        b1 = float(girsanov_residual(path, FELLER).sum())
        mean_acc.add(b1, w)
        var_acc.add(b1 * b1, w)
    mean_est = mean_acc.estimate()
    var_est = var_acc.estimate()
    assert mean_est.covers(0.0), (mean_est.mean, mean_est.half_width)
    assert var_est.covers(1.0), (var_est.mean, var_est.half_width)


# ------------------------------------------------- three-estimator cross --


def test_three_estimators_agree():
    """Direct conditioned SDE, importance weighting and rejection all target
    the same Laplace functional; the analytic value anchors all three."""
    target = math.exp(-0.5) / 4.0
    n = 3000

    direct = WeightedMoments()
    for path in iter_paths("qprocess", QUADRATIC, 1.0, SimConfig(T=1.0, dt=1e-3, seed=41), n):
        direct.add(math.exp(-path.final))
    d = direct.estimate()

    paths = iter_paths("csbp", QUADRATIC, 1.0, SimConfig(T=1.0, dt=1e-3, seed=42), n)
    imp = importance_expectation(paths, QUADRATIC, 1.0, lambda p: math.exp(-p.final))

    rej = survival_conditioned_expectation(
        QUADRATIC, 1.0, 1.0, 20.0, lambda p: math.exp(-p.value_at(1.0)),
        n, SimConfig(T=1.0, dt=2e-3, seed=43),
    ).estimate

    assert d.covers(target), (d.mean, d.half_width)
    assert imp.covers(target), (imp.mean, imp.half_width)
    # the rejection route still carries O(1/s) conditioning bias at s=20
    assert abs(rej.mean - target) <= rej.half_width + 0.01, (rej.mean, rej.stderr)
    for a, b in ((d, imp), (d, rej), (imp, rej)):
        gap = abs(a.mean - b.mean)
        band = 3.0 * math.hypot(a.stderr, b.stderr) + 0.01
        assert gap <= band, (a.mean, b.mean, band)


def test_rejection_estimate_fields():
    rej = RejectionEstimate(
        estimate=weighted_mean_ci([(1.0, 1.0), (1.0, 1.0)]),
        t=1.0, s=2.0, n_total=10, n_accepted=2,
        acceptance_rate=0.2, acceptance_stderr=0.1, acceptance_oracle=0.25,
    )
    assert rej.acceptance_consistent
