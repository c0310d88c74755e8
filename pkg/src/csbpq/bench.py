"""Backend micro-benchmark, runnable as ``python3 -m csbpq.bench``.

Times the compiled engine against the pure-Python reference on identical
workloads inside one process. The two must produce bit-identical paths, so
the benchmark doubles as an equivalence check: mismatching checksums mean a
broken build and a nonzero exit.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

from ._version import __version__
from . import kernels
from .kernels import KIND_CSBP, KIND_QPROCESS, build_params, pure
from .mechanism import mechanism_to_json, quadratic_mechanism, stable_mechanism

try:
    from .kernels import _engine_cy
except ImportError:
    _engine_cy = None

_CASES = (
    ("quadratic/csbp", quadratic_mechanism(), KIND_CSBP),
    ("stable/qprocess", stable_mechanism(1.0, 1.5), KIND_QPROCESS),
)


def _run(impl, workload) -> tuple[float, float, int]:
    start = time.perf_counter()
    checksum = 0.0
    epochs = 0
    for args in workload:
        out = impl.simulate_path(*args)
        values = out[1]
        checksum += float(values[-1]) + float(values.sum())
        epochs += len(values)
    return time.perf_counter() - start, checksum, epochs


def run_bench(
    n_paths: int = 20,
    T: float = 1.0,
    dt: float = 1e-3,
    eps: float = 0.05,
    seed: int = 0,
) -> dict:
    cases = []
    for label, mech, kind_id in _CASES:
        workload = [
            build_params(mech, 1.0, kind_id, T, dt, eps, seed, i, 10_000_000, False).args()
            for i in range(n_paths)
        ]
        pure_s, pure_sum, epochs = _run(pure, workload)
        case = {
            "label": label,
            "mechanism": mechanism_to_json(mech),
            "epochs": epochs,
            "pure": {"seconds": pure_s, "per_path_ms": 1e3 * pure_s / n_paths},
            "cython": None,
            "speedup": None,
            "checksums_match": None,
        }
        if _engine_cy is not None:
            cy_s, cy_sum, _ = _run(_engine_cy, workload)
            case["cython"] = {"seconds": cy_s, "per_path_ms": 1e3 * cy_s / n_paths}
            case["speedup"] = pure_s / cy_s if cy_s > 0 else float("inf")
            case["checksums_match"] = cy_sum == pure_sum
        cases.append(case)
    return {
        "version": __version__,
        "active_backend": kernels.backend(),
        "compiled_available": _engine_cy is not None,
        "n_paths": n_paths,
        "T": T,
        "dt": dt,
        "eps": eps,
        "seed": seed,
        "cases": cases,
    }


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="csbpq.bench",
        description="Time the compiled path engine against the pure-Python reference.",
    )
    parser.add_argument("--paths", type=int, default=20)
    parser.add_argument("--T", type=float, default=1.0)
    parser.add_argument("--dt", type=float, default=1e-3)
    parser.add_argument("--eps", type=float, default=0.05)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    report = run_bench(n_paths=args.paths, T=args.T, dt=args.dt, eps=args.eps, seed=args.seed)
    print(json.dumps(report, sort_keys=True, indent=2))
    if any(case["checksums_match"] is False for case in report["cases"]):
        print("backend outputs disagree; the compiled engine is broken", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
