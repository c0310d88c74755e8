"""Estimator and assertion machinery.

The stderr formula is frozen against hand-computed examples and a
brute-force bootstrap oracle; the assertion helpers get both synthetic
exact cases and direct-simulation oracles.
"""

import math
import random
from dataclasses import dataclass

import numpy as np
import pytest

from csbpq.errors import DomainError, StatisticalError
from csbpq.mechanism import BranchingMechanism, Zero
from csbpq.simulate import SimConfig, iter_paths
from csbpq.stats import (
    Box,
    EstimateWithCI,
    WeightedMoments,
    campbell_check,
    martingale_check,
    mean_ci,
    poisson_box_test,
    weighted_mean_ci,
)


# ------------------------------------------------------------ EstimateWithCI


def test_half_width_and_covers():
    est = EstimateWithCI(mean=1.0, stderr=0.1, n=10, multiplier=3.0)
    assert est.half_width == pytest.approx(0.3)
    assert est.covers(1.29)
    assert not est.covers(1.31)


def test_z_score_degenerate_stderr():
    est = EstimateWithCI(mean=2.0, stderr=0.0, n=5)
    assert est.z_score(2.0) == 0.0
    assert est.z_score(1.0) == math.inf
    assert est.z_score(3.0) == -math.inf


# ------------------------------------------------------------ weighted mean


def test_constant_samples_have_zero_stderr():
    est = weighted_mean_ci([(5.0, 1.0), (5.0, 1.0), (5.0, 1.0)])
    assert est.mean == 5.0
    assert est.stderr == 0.0
    assert est.n == 3


def test_two_point_sample_frozen():
    # {0,1} with unit weights: mean 1/2, unbiased stderr
    # sqrt(sum (v-mean)^2 / (n-1)) / sqrt(n) = 1/2
    est = weighted_mean_ci([(0.0, 1.0), (1.0, 1.0)], multiplier=1.0)
    assert est.mean == pytest.approx(0.5)
    assert est.stderr == pytest.approx(0.5)


def test_zero_weight_removes_sample():
    est = weighted_mean_ci([(3.0, 2.0), (7.0, 0.0)])
    assert est.mean == pytest.approx(3.0)
    assert est.stderr == 0.0


def test_unit_weights_match_textbook_formulas():
    rng = np.random.default_rng(7)
    vals = rng.normal(size=500)
    est = weighted_mean_ci((v, 1.0) for v in vals)
    assert est.mean == pytest.approx(vals.mean(), rel=1e-10, abs=1e-12)
    assert est.stderr == pytest.approx(
        vals.std(ddof=1) / math.sqrt(len(vals)), rel=1e-10
    )
    same = mean_ci(vals)
    assert same.mean == est.mean
    assert same.stderr == est.stderr


def test_stderr_against_bootstrap_oracle():
    # the unbiased formula should agree with a brute-force resampling
    # estimate of the sampling error of the mean
    rng = np.random.default_rng(11)
    vals = rng.exponential(size=200)
    est = mean_ci(vals)
    boot = np.empty(4000)
    for i in range(4000):
        boot[i] = rng.choice(vals, size=vals.size, replace=True).mean()
    assert est.stderr == pytest.approx(boot.std(ddof=1), rel=0.15)


def test_duck_typed_samples():
    @dataclass
    class S:
        value: float
        weight: float

    a = weighted_mean_ci([S(1.0, 2.0), S(3.0, 1.0)])
    b = weighted_mean_ci([(1.0, 2.0), (3.0, 1.0)])
    assert a == b


def test_permutation_invariance():
    rng = np.random.default_rng(3)
    samples = [(float(v), float(w)) for v, w in zip(rng.normal(size=300), rng.random(300))]
    base = weighted_mean_ci(samples)
    shuffled = samples[:]
    random.Random(5).shuffle(shuffled)
    other = weighted_mean_ci(shuffled)
    assert other.mean == pytest.approx(base.mean, rel=1e-12)
    assert other.stderr == pytest.approx(base.stderr, rel=1e-12)


def test_merge_matches_single_stream():
    rng = np.random.default_rng(9)
    samples = [(float(v), float(w)) for v, w in zip(rng.normal(size=90), rng.random(90))]
    whole = WeightedMoments()
    for v, w in samples:
        whole.add(v, w)
    chunks = []
    for lo in range(0, 90, 30):
        c = WeightedMoments()
        for v, w in samples[lo : lo + 30]:
            c.add(v, w)
        chunks.append(c)
    left = chunks[0].merge(chunks[1]).merge(chunks[2])
    right = chunks[0].merge(chunks[1].merge(chunks[2]))
    for m in (left, right):
        assert m.n == whole.n
        assert m.estimate().mean == pytest.approx(whole.estimate().mean, rel=1e-12)
        assert m.estimate().stderr == pytest.approx(whole.estimate().stderr, rel=1e-12)


def test_weight_validation():
    acc = WeightedMoments()
    with pytest.raises(DomainError, match="weights"):
        acc.add(1.0, -0.5)
    with pytest.raises(DomainError, match="weights"):
        acc.add(1.0, math.nan)
    with pytest.raises(DomainError, match="weights"):
        acc.add(1.0, math.inf)


def test_all_zero_weights_rejected():
    with pytest.raises(StatisticalError, match="weights"):
        weighted_mean_ci([(1.0, 0.0), (2.0, 0.0)])


def test_too_few_samples_rejected():
    with pytest.raises(DomainError, match="2 samples"):
        weighted_mean_ci([(1.0, 1.0)])
    with pytest.raises(DomainError, match="2 samples"):
        weighted_mean_ci([])


def test_effective_sample_size():
    acc = WeightedMoments()
    for _ in range(8):
        acc.add(1.0, 1.0)
    assert acc.effective_n == pytest.approx(8.0)
    lop = WeightedMoments()
    lop.add(1.0, 1.0)
    lop.add(2.0, 0.0)
    assert lop.effective_n == pytest.approx(1.0)
    assert WeightedMoments().effective_n == 0.0


# ---------------------------------------------------------- martingale check


@dataclass
class _FlatPath:
    """Stub exposing just what martingale_check consumes."""

    x0: float
    level: float

    def value_at(self, t: float) -> float:
        return self.level if t > 0 else self.x0


def test_martingale_check_exact_at_t0():
    mech = BranchingMechanism(a=-1.0, sigma=math.sqrt(2.0), levy=Zero())
    paths = [_FlatPath(2.0, 1.0), _FlatPath(2.0, 3.0), _FlatPath(2.0, 2.5)]
    (rep,) = martingale_check(paths, mech, [0.0])
    assert rep.estimate == pytest.approx(2.0)
    assert rep.stderr == 0.0
    assert rep.passed
    assert rep.name == "martingale[t=0]"


def test_martingale_check_refuses_supercritical():
    mech = BranchingMechanism(a=0.5, sigma=1.0, levy=Zero())
    with pytest.raises(DomainError, match="supercritical|subcritical"):
        martingale_check([_FlatPath(1.0, 1.0)], mech, [0.5])


def test_martingale_check_empty_ensemble():
    mech = BranchingMechanism(a=-1.0, sigma=1.0, levy=Zero())
    with pytest.raises(DomainError, match="path"):
        martingale_check([], mech, [0.5])


def test_martingale_check_on_simulated_ensemble():
    mech = BranchingMechanism(a=-1.0, sigma=math.sqrt(2.0), levy=Zero())
    cfg = SimConfig(T=1.0, dt=0.01, seed=424)
    paths = iter_paths("csbp", mech, 1.0, cfg, 2000)
    reports = martingale_check(paths, mech, [0.0, 0.5, 1.0])
    for rep in reports:
        assert rep.passed, f"{rep.name}: {rep.estimate} vs {rep.target} +- {rep.band}"


# ------------------------------------------------------------ campbell check


def test_campbell_zero_function_is_exact():
    rep = campbell_check([[1.0, 2.0], [0.5]], f=lambda r: 0.0, target=0.0)
    assert rep.estimate == 0.0
    assert rep.stderr == 0.0
    assert rep.passed


def test_campbell_infinite_target_rejected():
    with pytest.raises(DomainError, match="finite"):
        campbell_check([[1.0], [2.0]], f=lambda r: r, target=math.inf)


def test_campbell_poisson_sanity():
    # homogeneous rate-3 atoms on [0,1]; counting them recovers the rate
    rng = np.random.default_rng(21)
    per_path = [[1.0] * rng.poisson(3.0) for _ in range(4000)]
    rep = campbell_check(per_path, f=lambda r: 1.0, target=3.0)
    assert rep.passed, (rep.estimate, rep.band)
    assert rep.stderr == pytest.approx(math.sqrt(3.0 / 4000), rel=0.15)


def test_campbell_constant_weights_match_unweighted():
    rng = np.random.default_rng(22)
    per_path = [list(rng.exponential(size=rng.poisson(2.0))) for _ in range(300)]
    a = campbell_check(per_path, f=lambda r: r, target=2.0)
    b = campbell_check(per_path, f=lambda r: r, target=2.0, weights=[2.0] * 300)
    assert b.estimate == pytest.approx(a.estimate, rel=1e-12)


# ------------------------------------------------------------- box test


def _poisson_field(rng, n_paths, rate, t_hi=1.0, s_hi=1.0):
    """Homogeneous Poisson atoms on [0, t_hi) x [0, s_hi)."""
    out = []
    for _ in range(n_paths):
        k = rng.poisson(rate)
        out.append(list(zip(rng.uniform(0, t_hi, k), rng.uniform(0, s_hi, k))))
    return out


def test_box_test_passes_on_true_poisson():
    rng = np.random.default_rng(31)
    atoms = _poisson_field(rng, 3000, rate=5.0)
    boxes = [Box(0.0, 0.5, 0.0, 1.0), Box(0.5, 1.0, 0.0, 1.0)]
    rep = poisson_box_test(atoms, boxes, [2.5, 2.5])
    assert rep.passed
    assert all(b.passed for b in rep.boxes)
    assert rep.effective_n == pytest.approx(3000.0)
    (corr,) = rep.correlations
    assert abs(corr[2]) <= corr[3]


def test_box_test_flags_duplicated_box():
    rng = np.random.default_rng(32)
    atoms = _poisson_field(rng, 500, rate=5.0)
    box = Box(0.0, 1.0, 0.0, 1.0)
    rep = poisson_box_test(atoms, [box, box], [5.0, 5.0])
    assert not rep.passed
    (corr,) = rep.correlations
    assert corr[2] == pytest.approx(1.0)


def test_box_test_zero_mean_box():
    rng = np.random.default_rng(33)
    atoms = _poisson_field(rng, 200, rate=4.0)
    dead = Box(0.0, 1.0, 2.0, 3.0)  # outside the size support
    rep = poisson_box_test(atoms, [Box(0.0, 1.0, 0.0, 1.0), dead], [4.0, 0.0])
    assert rep.passed
    # one stray atom in the dead box must fail it outright
    atoms[0] = atoms[0] + [(0.5, 2.5)]
    rep = poisson_box_test(atoms, [Box(0.0, 1.0, 0.0, 1.0), dead], [4.0, 0.0])
    assert not rep.passed
    assert not rep.boxes[1].passed


def test_box_test_empty_box_with_large_mean_fails():
    rng = np.random.default_rng(34)
    atoms = _poisson_field(rng, 200, rate=4.0)
    rep = poisson_box_test(atoms, [Box(0.0, 1.0, 5.0, 6.0)], [4.0])
    assert not rep.passed
    assert rep.boxes[0].estimate == 0.0


def test_box_test_validation():
    atoms = [[(0.1, 0.1)], [(0.2, 0.2)]]
    with pytest.raises(DomainError, match="per box"):
        poisson_box_test(atoms, [Box(0, 1, 0, 1)], [1.0, 2.0])
    with pytest.raises(DomainError, match=">= 0"):
        poisson_box_test(atoms, [Box(0, 1, 0, 1)], [-1.0])
    with pytest.raises(DomainError, match="2 paths"):
        poisson_box_test([[(0.1, 0.1)]], [Box(0, 1, 0, 1)], [1.0])


def test_box_test_weighted_zero_total_weight():
    atoms = [[(0.1, 0.1)], [(0.2, 0.2)]]
    with pytest.raises(StatisticalError, match="weights"):
        poisson_box_test(atoms, [Box(0, 1, 0, 1)], [1.0], weights=[0.0, 0.0])


def test_report_json_schema():
    est = weighted_mean_ci([(1.0, 1.0), (2.0, 1.0)])
    from csbpq.stats import report_from_estimate

    rep = report_from_estimate("demo", est, 1.5, seed=9)
    js = rep.to_json()
    assert set(js) == {"name", "estimate", "stderr", "target", "band", "pass", "n", "seed"}
    assert js["pass"] is True
    assert js["seed"] == 9
