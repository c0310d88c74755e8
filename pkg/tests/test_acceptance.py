"""Acceptance gate: the eleven headline checks at full scale, one test each.

Every stochastic check runs from a frozen seed at the stated ensemble size
and compares against an independently derived target (closed form, ODE
oracle, or cross-estimator agreement), never against recorded output.
Budget: a few minutes single-core; the heavy ensembles are shared through
module fixtures.
"""

import json
import math
import time

import numpy as np
import pytest

from csbpq.laplace import closed_form_u, csbp_laplace, solve_u
from csbpq.mechanism import normalized_stable_mechanism, quadratic_mechanism
from csbpq.simulate import SimConfig, run_ensemble
from csbpq.stats import WeightedMoments
from csbpq.verify import FELLER, QUADRATIC, STABLE_15, run_suite

N_FULL = 100_000
SEED = 0

THETAS = (0.1, 1.0, 10.0)
NORMALIZED_STABLE = normalized_stable_mechanism(1.5)


def _report(label: str, estimate: float, target: float, band: float) -> None:
    gap = abs(estimate - target)
    flag = "PASS" if gap <= band else "FAIL"
    print(f"[{flag}] {label}: estimate={estimate:.6f} target={target:.6f} "
          f"|gap|={gap:.2e} band={band:.2e}")
    assert gap <= band, label


def _mean(samples) -> WeightedMoments:
    acc = WeightedMoments()
    for s in samples:
        acc.add(float(s))
    return acc


# --------------------------------------------------------------- fixtures --


def _feller_reduce(path):
    return (math.exp(-path.final), path.value_at(0.5), path.final)


@pytest.fixture(scope="module")
def feller_ensemble():
    cfg = SimConfig(T=1.0, dt=1e-3, eps=1e-2, seed=SEED)
    rows = run_ensemble("csbp", FELLER, 1.0, cfg, N_FULL, _feller_reduce)
    return np.asarray(rows)


@pytest.fixture(scope="module")
def marking_report():
    return run_suite("marking", seed=SEED)


# -------------------------------------------------------------- criteria --


def test_criterion_01_ode_matches_closed_forms():
    start = time.perf_counter()
    grid = np.linspace(0.0, 10.0, 41)
    worst = 0.0
    for mech in (QUADRATIC, NORMALIZED_STABLE):
        for theta in THETAS:
            curve = solve_u(mech, theta, grid)
            for t in grid:
                want = closed_form_u(mech, theta, float(t))
                err = abs(float(curve(float(t))) - want) / max(want, 1e-300)
                worst = max(worst, err)
    elapsed = time.perf_counter() - start
    print(f"[{'PASS' if worst <= 1e-8 else 'FAIL'}] criterion 1: "
          f"worst rel err={worst:.2e} (tol 1e-8), {elapsed:.2f}s")
    assert worst <= 1e-8
    assert elapsed < 1.0


def test_criterion_02_semigroup_property():
    start = time.perf_counter()
    ts = ss = (0.5, 1.0, 2.0, 3.0, 5.0)
    worst = 0.0
    for mech in (QUADRATIC, NORMALIZED_STABLE):
        for theta in THETAS:
            outer = solve_u(mech, theta, np.linspace(0.0, 10.0, 21))
            for s in ss:
                inner = solve_u(mech, float(outer(s)), ts)
                for t in ts:
                    direct = float(outer(t + s))
                    err = abs(float(inner(t)) - direct) / max(direct, 1e-300)
                    worst = max(worst, err)
    elapsed = time.perf_counter() - start
    print(f"[{'PASS' if worst <= 1e-8 else 'FAIL'}] criterion 2: "
          f"worst rel err={worst:.2e} over 5x5x3 grid x2 mechanisms, {elapsed:.2f}s")
    assert worst <= 1e-8
    assert elapsed < 1.0


def test_criterion_03_sde_matches_laplace_oracle(feller_ensemble):
    est = _mean(feller_ensemble[:, 0]).estimate()
    target = csbp_laplace(FELLER, 1.0, 1.0, 1.0)
    _report("criterion 3: E exp(-Z_1), Feller subcritical, N=1e5",
            est.mean, target, 3.0 * est.stderr)


def test_criterion_04_martingale_property(feller_ensemble):
    rho = FELLER.rho
    for t, col in ((0.5, 1), (1.0, 2)):
        est = _mean(math.exp(rho * t) * feller_ensemble[:, col]).estimate()
        _report(f"criterion 4: mean exp(rho t) Z_t at t={t}",
                est.mean, 1.0, 3.0 * est.stderr)


def test_criterion_05_conditioned_sde_matches_oracles():
    cfg = SimConfig(T=1.0, dt=1e-3, eps=1e-2, seed=SEED)
    lap = _mean(run_ensemble("qprocess", QUADRATIC, 1.0, cfg, N_FULL,
                             lambda p: math.exp(-p.final))).estimate()
    _report("criterion 5a: conditioned E exp(-Z_1), critical quadratic, N=1e5",
            lap.mean, math.exp(-0.5) / 4.0, 3.0 * lap.stderr)
    mean = _mean(run_ensemble("qprocess", FELLER, 1.0, cfg, N_FULL,
                              lambda p: p.final)).estimate()
    _report("criterion 5b: conditioned mean Z_1, Feller subcritical, N=1e5",
            mean.mean, 2.0 - math.exp(-1.0), 3.0 * mean.stderr)


def test_criterion_06_three_estimator_agreement():
    report = run_suite("qprocess", seed=SEED, n_paths=20_000)
    for check in report.checks:
        flag = "PASS" if check.passed else "FAIL"
        print(f"[{flag}] criterion 6: {check.name} estimate={check.estimate:.5f} "
              f"band={check.band:.5f}")
    assert report.passed


def test_criterion_07_marking_construction(marking_report):
    wanted = [c for c in marking_report.checks
              if c.name.startswith(("campbell[", "box", "boxes["))]
    assert len(wanted) >= 7
    for check in wanted:
        flag = "PASS" if check.passed else "FAIL"
        print(f"[{flag}] criterion 7: {check.name} estimate={check.estimate:.4f} "
              f"target={check.target:.4f} band={check.band:.4f}")
        assert check.passed, check.name


def test_criterion_08_girsanov_residual(marking_report):
    wanted = [c for c in marking_report.checks if c.name.startswith("girsanov[")]
    assert len(wanted) == 2
    for check in wanted:
        flag = "PASS" if check.passed else "FAIL"
        print(f"[{flag}] criterion 8: {check.name} estimate={check.estimate:.4f} "
              f"target={check.target:.4f} band={check.band:.4f}")
        assert check.passed, check.name


def test_criterion_09_lamperti_round_trip():
    # the reciprocal-clock route carries an O(dt) bias (about -0.01 at
    # dt=1e-3 for the subcritical diffusion); the refined step puts it well
    # inside the 3 sigma band instead of hiding it behind a small ensemble
    report = run_suite("lamperti", seed=SEED, n_paths=4_000, dt=2.5e-4)
    for check in report.checks:
        flag = "PASS" if check.passed else "FAIL"
        print(f"[{flag}] criterion 9: {check.name} estimate={check.estimate:.5f} "
              f"target={check.target:.5f} band={check.band:.5f}")
    assert report.passed


def _collision_count(path):
    accepted = path.atom_accepted
    branch = set(path.atom_times[accepted & (path.atom_source == 0)].tolist())
    immigration = set(path.atom_times[accepted & (path.atom_source == 1)].tolist())
    return len(branch & immigration)


def test_criterion_10_stable_reduction():
    report = run_suite("stable", seed=SEED, n_paths=2_000)
    for check in report.checks:
        flag = "PASS" if check.passed else "FAIL"
        print(f"[{flag}] criterion 10: {check.name} estimate={check.estimate:.5f} "
              f"band={check.band:.5f}")
    assert report.passed
    # dedicated sweep: the two jump families may never share an epoch. The
    # size-biased immigration has an infinite mean, so a rare giant
    # immigrant can exhaust any event budget; those paths are skipped and
    # accounted for rather than silently truncated.
    cfg = SimConfig(T=0.02, dt=1e-3, eps=0.1, seed=SEED + 1, max_jumps=200_000)
    results = run_ensemble("qprocess", STABLE_15, 1.0, cfg, N_FULL,
                           _collision_count, skip_budget_errors=True)
    skipped = sum(1 for r in results if r is None)
    collisions = sum(r for r in results if r is not None)
    ok = collisions == 0 and skipped <= N_FULL // 100
    print(f"[{'PASS' if ok else 'FAIL'}] criterion 10: simultaneous jump epochs "
          f"= {collisions} over {N_FULL - skipped} paths "
          f"(skip fraction {skipped / N_FULL:.2%})")
    assert collisions == 0
    assert skipped <= N_FULL // 100


def test_criterion_11_determinism():
    docs = [
        json.dumps(run_suite("martingale", seed=5, n_paths=500).to_json(), sort_keys=True)
        for _ in range(2)
    ]
    same = docs[0] == docs[1]
    print(f"[{'PASS' if same else 'FAIL'}] criterion 11: "
          f"rerun with the same seed is bit-identical ({len(docs[0])} bytes)")
    assert same
