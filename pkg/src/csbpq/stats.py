"""Estimators and statistical assertions for path ensembles.

The workhorse is the self-normalized (ratio) importance estimator with a
delta-method standard error; with unit weights it reduces exactly to the
textbook sample mean and stderr. Assertions come back as small report objects
carrying the estimate, the target and the band, ready for JSON serialization.

Band policy: 3*stderr for single checks, 4*stderr for per-member checks of
multi-part families (box tests), keeping the false-failure rate of a whole
suite around the percent level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DomainError, StatisticalError
from .mechanism import BranchingMechanism, Criticality

DEFAULT_MULTIPLIER = 3.0
BOX_MULTIPLIER = 4.0


@dataclass(frozen=True)
class EstimateWithCI:
    """Point estimate with a symmetric confidence band."""

    mean: float
    stderr: float
    n: int
    multiplier: float = DEFAULT_MULTIPLIER

    @property
    def half_width(self) -> float:
        return self.multiplier * self.stderr

    def covers(self, target: float) -> bool:
        return abs(self.mean - target) <= self.half_width

    def z_score(self, target: float) -> float:
        dev = self.mean - target
        if self.stderr == 0.0:
            return 0.0 if dev == 0.0 else math.inf if dev > 0 else -math.inf
        return dev / self.stderr


@dataclass(frozen=True)
class CheckReport:
    """One statistical assertion in the shared report schema."""

    name: str
    estimate: float
    stderr: float
    target: float
    band: float
    passed: bool
    n: int
    seed: int | None = None

    def to_json(self) -> dict:
        # numpy scalars sneak in through accumulator arithmetic; bool/int
        # coercion keeps the document plain JSON
        return {
            "name": self.name,
            "estimate": float(self.estimate),
            "stderr": float(self.stderr),
            "target": float(self.target),
            "band": float(self.band),
            "pass": bool(self.passed),
            "n": int(self.n),
            "seed": None if self.seed is None else int(self.seed),
        }


def report_from_estimate(
    name: str, est: EstimateWithCI, target: float, seed: int | None = None
) -> CheckReport:
    return CheckReport(
        name=name,
        estimate=est.mean,
        stderr=est.stderr,
        target=target,
        band=est.half_width,
        passed=est.covers(target),
        n=est.n,
        seed=seed,
    )


@dataclass
class WeightedMoments:
    """Mergeable accumulator behind the ratio estimator.

    Stores plain power sums, so partial aggregates from different workers
    combine by addition in any order.
    """

    n: int = 0
    w_sum: float = 0.0
    w2_sum: float = 0.0
    wv_sum: float = 0.0
    w2v_sum: float = 0.0
    w2v2_sum: float = 0.0

    def add(self, value: float, weight: float = 1.0) -> None:
        if weight < 0 or not math.isfinite(weight):
            raise DomainError(f"weights must be finite and >= 0, got {weight}")
        self.n += 1
        w2 = weight * weight
        self.w_sum += weight
        self.w2_sum += w2
        self.wv_sum += weight * value
        self.w2v_sum += w2 * value
        self.w2v2_sum += w2 * value * value

    def merge(self, other: "WeightedMoments") -> "WeightedMoments":
        return WeightedMoments(
            n=self.n + other.n,
            w_sum=self.w_sum + other.w_sum,
            w2_sum=self.w2_sum + other.w2_sum,
            wv_sum=self.wv_sum + other.wv_sum,
            w2v_sum=self.w2v_sum + other.w2v_sum,
            w2v2_sum=self.w2v2_sum + other.w2v2_sum,
        )

    def estimate(self, multiplier: float = DEFAULT_MULTIPLIER) -> EstimateWithCI:
        if self.n < 2:
            raise DomainError(f"need at least 2 samples, got {self.n}")
        if self.w_sum <= 0.0:
            raise StatisticalError("all weights are zero; estimator undefined")
        r = self.wv_sum / self.w_sum
        # sum of (w_i (v_i - r))^2 from the stored power sums
        dev2 = self.w2v2_sum - 2.0 * r * self.w2v_sum + r * r * self.w2_sum
        dev2 = max(dev2, 0.0)  # guard tiny negative round-off
        stderr = math.sqrt(dev2 * self.n / (self.n - 1)) / self.w_sum
        return EstimateWithCI(mean=r, stderr=stderr, n=self.n, multiplier=multiplier)

    @property
    def effective_n(self) -> float:
        """Kish effective sample size of the weights."""
        return self.w_sum**2 / self.w2_sum if self.w2_sum > 0 else 0.0


def _unpack(sample) -> tuple[float, float]:
    if hasattr(sample, "value") and hasattr(sample, "weight"):
        return float(sample.value), float(sample.weight)
    v, w = sample
    return float(v), float(w)


def weighted_mean_ci(samples: Iterable, multiplier: float = DEFAULT_MULTIPLIER) -> EstimateWithCI:
    """Self-normalized weighted mean of (value, weight) samples.

    Accepts anything with ``value``/``weight`` attributes or 2-sequences.
    With unit weights this is exactly the sample mean with stderr s/sqrt(n).
    """
    acc = WeightedMoments()
    for s in samples:
        v, w = _unpack(s)
        acc.add(v, w)
    return acc.estimate(multiplier)


def mean_ci(values: Iterable[float], multiplier: float = DEFAULT_MULTIPLIER) -> EstimateWithCI:
    """Unweighted sample mean with its standard error."""
    acc = WeightedMoments()
    for v in values:
        acc.add(float(v))
    return acc.estimate(multiplier)


# ----------------------------------------------------------------- checks --


def martingale_check(
    paths: Iterable,
    mech: BranchingMechanism,
    t_grid: Sequence[float],
    multiplier: float = DEFAULT_MULTIPLIER,
    seed: int | None = None,
) -> list[CheckReport]:
    """Constancy of the compensated mean: E[e^{rho t} Z_t] = x at each t.

    Streams unconditioned paths once; refuses supercritical mechanisms, whose
    rho would flip the sign of the compensation.
    """
    if mech.classify() is Criticality.SUPERCRITICAL:
        raise DomainError("martingale check needs a subcritical or critical mechanism")
    rho = mech.rho
    grid = [float(t) for t in t_grid]
    accs = [WeightedMoments() for _ in grid]
    x0 = None
    for path in paths:
        if x0 is None:
            x0 = path.x0
        for t, acc in zip(grid, accs):
            acc.add(math.exp(rho * t) * path.value_at(t))
    if x0 is None:
        raise DomainError("martingale check needs at least one path")
    reports = []
    for t, acc in zip(grid, accs):
        est = acc.estimate(multiplier)
        reports.append(report_from_estimate(f"martingale[t={t:g}]", est, x0, seed))
    return reports


def campbell_check(
    atom_sizes_per_path: Iterable[Sequence[float]],
    f: Callable[[float], float],
    target: float,
    weights: Iterable[float] | None = None,
    multiplier: float = DEFAULT_MULTIPLIER,
    name: str = "campbell",
    seed: int | None = None,
) -> CheckReport:
    """Mean-measure identity for a point process: E sum_n f(size_n) = target.

    ``atom_sizes_per_path`` holds one list of atom size coordinates per path;
    ``weights`` (optional) are per-path importance weights aligned with it.
    """
    if not math.isfinite(target):
        raise DomainError(f"campbell target must be finite, got {target}")
    acc = WeightedMoments()
    if weights is None:
        for sizes in atom_sizes_per_path:
            acc.add(math.fsum(f(s) for s in sizes))
    else:
        for sizes, w in zip(atom_sizes_per_path, weights):
            acc.add(math.fsum(f(s) for s in sizes), w)
    est = acc.estimate(multiplier)
    return report_from_estimate(name, est, target, seed)


@dataclass(frozen=True)
class Box:
    """Half-open time x size region [t0, t1) x [s0, s1)."""

    t0: float
    t1: float
    s0: float
    s1: float

    def contains(self, t: float, s: float) -> bool:
        return self.t0 <= t < self.t1 and self.s0 <= s < self.s1


@dataclass(frozen=True)
class BoxTestReport:
    boxes: list[CheckReport]
    correlations: list[tuple[int, int, float, float]]  # (i, j, corr, bound)
    effective_n: float
    passed: bool

    def to_json(self) -> dict:
        return {
            "boxes": [b.to_json() for b in self.boxes],
            "correlations": [
                {"i": int(i), "j": int(j), "corr": float(c), "bound": float(b)}
                for (i, j, c, b) in self.correlations
            ],
            "effective_n": float(self.effective_n),
            "pass": bool(self.passed),
        }


def poisson_box_test(
    atom_points_per_path: Iterable[Sequence[tuple[float, float]]],
    boxes: Sequence[Box],
    expected: Sequence[float],
    weights: Iterable[float] | None = None,
    z_multiplier: float = BOX_MULTIPLIER,
    seed: int | None = None,
) -> BoxTestReport:
    """Counts in disjoint boxes: right means, vanishing cross correlation.

    Per-box z-scores must stay within ``z_multiplier`` standard errors of the
    expected mean; pairwise weighted correlations of counts must stay within
    ``z_multiplier / sqrt(effective n)``. A box with expected mean 0 passes
    only if every observed count is 0.
    """
    if len(boxes) != len(expected):
        raise DomainError("one expected mean per box is required")
    for mu in expected:
        if not math.isfinite(mu) or mu < 0:
            raise DomainError(f"expected box means must be finite and >= 0, got {mu}")

    counts = []
    wlist = []
    if weights is None:
        for pts in atom_points_per_path:
            counts.append([sum(1 for (t, s) in pts if b.contains(t, s)) for b in boxes])
            wlist.append(1.0)
    else:
        for pts, w in zip(atom_points_per_path, weights):
            counts.append([sum(1 for (t, s) in pts if b.contains(t, s)) for b in boxes])
            wlist.append(float(w))
    if len(counts) < 2:
        raise DomainError("box test needs at least 2 paths")
    cnt = np.asarray(counts, dtype=float)
    w = np.asarray(wlist)
    if np.any(w < 0):
        raise DomainError("weights must be >= 0")
    if w.sum() <= 0:
        raise StatisticalError("all weights are zero; box test undefined")

    n = len(w)
    reports = []
    all_pass = True
    for k, (box, mu) in enumerate(zip(boxes, expected)):
        acc = WeightedMoments()
        for c, wi in zip(cnt[:, k], w):
            acc.add(c, wi)
        est = acc.estimate(z_multiplier)
        # a zero-mean box models an impossible region: no band, no atoms
        ok = est.covers(mu) if mu > 0 else not cnt[:, k].any()
        reports.append(
            CheckReport(
                name=f"box[{k}]",
                estimate=est.mean,
                stderr=est.stderr,
                target=mu,
                band=est.half_width,
                passed=ok,
                n=n,
                seed=seed,
            )
        )
        all_pass = all_pass and ok

    wn = w / w.sum()
    n_eff = 1.0 / float((wn**2).sum())
    bound = z_multiplier / math.sqrt(n_eff)
    means = wn @ cnt
    centered = cnt - means
    cov = (wn[:, None] * centered).T @ centered
    sd = np.sqrt(np.diag(cov))
    corr_rows = []
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            if sd[i] == 0.0 or sd[j] == 0.0:
                c = 0.0
            else:
                c = float(cov[i, j] / (sd[i] * sd[j]))
            corr_rows.append((i, j, c, bound))
            all_pass = all_pass and abs(c) <= bound
    return BoxTestReport(
        boxes=reports, correlations=corr_rows, effective_n=n_eff, passed=all_pass
    )
