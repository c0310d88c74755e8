"""Command-line front end.

Every subcommand resolves one RunConfig (config file, inline mechanism, and
flag overrides, in that order), runs deterministically from its seed, and
writes machine-readable outputs that embed the mechanism, the fully resolved
config, the seed and the package version. Replaying an embedded config
reproduces the files byte for byte.

Exit codes: 0 success, 1 statistical check failure, 2 usage or configuration
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import functools
import json
import math
import sys
from pathlib import Path

import numpy as np

from ._version import __version__
from .conditioning import hweight, mark_jumps, s_ladder, survival_conditioned_expectation
from .config import (
    CONDITION_MODES,
    LAMPERTI_DIRECTIONS,
    VERIFY_SUITES,
    RunConfig,
    parse_config,
)
from .errors import ConfigError, DomainError, NumericalError, StatisticalError
from .lamperti import csbp_to_levy, levy_to_csbp
from .mechanism import mechanism_to_json
from .pathio import (
    LAPLACE_CSV_HEADER,
    MARKED_CSV_HEADER,
    PATH_CSV_HEADER,
    laplace_csv_rows,
    marked_csv_rows,
    path_csv_rows,
    write_csv,
    write_path_bundle,
)
from .simulate import SimConfig, run_ensemble, simulate_csbp, simulate_levy, simulate_qprocess
from .stats import WeightedMoments
from .verify import run_suite

EXIT_PASS = 0
EXIT_STATISTICAL = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

_SIMULATE = {"csbp": simulate_csbp, "qprocess": simulate_qprocess, "levy": simulate_levy}


# ------------------------------------------------------------- resolution --


def _base_config(args: argparse.Namespace, need_mechanism: bool) -> RunConfig | None:
    if args.config is not None:
        try:
            raw = Path(args.config).read_bytes()
        except OSError as exc:
            raise ConfigError(f"config: cannot read {args.config}: {exc}") from exc
        return parse_config(raw)
    mech_text = getattr(args, "mech", None)
    if mech_text is None:
        if need_mechanism:
            raise ConfigError("no mechanism: pass --config FILE or --mech JSON")
        return None
    try:
        mech_obj = json.loads(mech_text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--mech: not valid JSON ({exc})") from exc
    horizon = getattr(args, "T", None)
    doc = {"mechanism": mech_obj, "sim": {"T": 1.0 if horizon is None else horizon}}
    return parse_config(json.dumps(doc))


def _resolve(args: argparse.Namespace, need_mechanism: bool = True) -> RunConfig | None:
    """Config file or inline mechanism, then flag overrides, then revalidate."""
    cfg = _base_config(args, need_mechanism)
    if cfg is None:
        return None
    sim_kw = {}
    for name in ("T", "dt", "eps"):
        value = getattr(args, name, None)
        if value is not None:
            sim_kw[name] = value
    if args.seed is not None:
        sim_kw["seed"] = args.seed
    sim = dataclasses.replace(cfg.sim, **sim_kw) if sim_kw else cfg.sim
    top_kw = {}
    for flag, field_name in (
        ("x", "x0"),
        ("paths", "n_paths"),
        ("theta", "theta"),
        ("t", "t"),
        ("mode", "mode"),
        ("s", "s"),
        ("direction", "direction"),
        ("multiplier", "multiplier"),
        ("prefix", "out_prefix"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            top_kw[field_name] = value
    cfg = dataclasses.replace(cfg, sim=sim, **top_kw)
    # flag overrides skipped the parser's range checks; one round trip
    # through the file representation reapplies all of them and guarantees
    # the embedded config replays cleanly
    return parse_config(json.dumps(cfg.to_json()))


def _emit(args: argparse.Namespace, cfg: RunConfig | None, name: str, body: dict) -> Path:
    seed = cfg.sim.seed if cfg is not None else (args.seed or 0)
    doc = {
        "command": name,
        "version": __version__,
        "seed": seed,
        "mechanism": cfg.to_json()["mechanism"] if cfg is not None else None,
        "config": cfg.to_json() if cfg is not None else None,
    }
    doc.update(body)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prefix = cfg.out_prefix if cfg is not None else "run"
    target = out_dir / f"{prefix}_{name}.json"
    target.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return target


def _write_rows(args: argparse.Namespace, cfg: RunConfig, stem: str, header, rows) -> Path:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    target = out_dir / f"{cfg.out_prefix}_{stem}.csv"
    with open(target, "w", encoding="utf-8", newline="") as handle:
        write_csv(handle, header, rows)
    return target


# ------------------------------------------------------------ subcommands --


def _cmd_mechanism(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    mech = cfg.mechanism
    if args.action == "validate":
        print(f"mechanism ok: {json.dumps(mechanism_to_json(mech), sort_keys=True)}")
        return EXIT_PASS
    report = mech.check_regularity()
    body = {
        "criticality": mech.classify().value,
        "rho": mech.rho,
        "conservative": report.conservative,
        "almost_sure_extinction": report.almost_sure_extinction,
        "note": report.note,
        "psi": {repr(lam): mech.psi(lam) for lam in (0.5, 1.0, 2.0)},
    }
    target = _emit(args, cfg, "mechanism", body)
    print(f"wrote {target}")
    print(json.dumps(body, sort_keys=True, indent=2))
    return EXIT_PASS


def _parse_thetas(text: str) -> list[float]:
    try:
        thetas = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"--thetas: expected comma-separated numbers, got {text!r}") from exc
    if not thetas or any(th <= 0 for th in thetas):
        raise ConfigError(f"--thetas: need positive values, got {text!r}")
    return thetas


def _cmd_laplace(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    thetas = _parse_thetas(args.thetas)
    if args.t_points < 2:
        raise ConfigError(f"--t-points: need at least 2, got {args.t_points}")
    horizon = cfg.sim.T
    grid = np.linspace(horizon / args.t_points, horizon, args.t_points)
    rows = laplace_csv_rows(cfg.mechanism, cfg.x0, thetas, grid)
    csv_path = _write_rows(args, cfg, "laplace", LAPLACE_CSV_HEADER, rows)
    target = _emit(args, cfg, "laplace", {
        "csv": csv_path.name,
        "rows": len(rows),
        "thetas": thetas,
        "t_grid": [float(t) for t in grid],
    })
    print(f"wrote {csv_path} and {target}")
    return EXIT_PASS


def _workers(args: argparse.Namespace) -> int:
    if args.threads < 1:
        raise ConfigError(f"--threads: need at least 1, got {args.threads}")
    return args.threads


def _summarize_path(theta: float, path) -> tuple[float, float, float]:
    # module level so process workers can pickle it
    return (path.final, 1.0 if path.absorbed else 0.0, math.exp(-theta * path.final))


def _transform_at(theta: float, t: float, path) -> float:
    return math.exp(-theta * path.value_at(t))


def _weighted_transform(mech, theta: float, t: float, path) -> tuple[float, float]:
    return _transform_at(theta, t, path), hweight(path, mech, t)


def _weighted_immigrant_count(mech, t: float, path) -> tuple[float, float]:
    count = sum(
        1.0
        for atom in mark_jumps(path)
        if atom.kind == "immigrant" and atom.delta_star >= 1.0 and atom.t <= t
    )
    return count, hweight(path, mech, t)


def _cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    kind = "qprocess" if args.qprocess else "csbp"
    theta = cfg.theta
    stats = run_ensemble(kind, cfg.mechanism, cfg.x0, cfg.sim, cfg.n_paths,
                         functools.partial(_summarize_path, theta),
                         workers=_workers(args))
    finals = WeightedMoments()
    transforms = WeightedMoments()
    absorbed = 0.0
    for final, hit, lap in stats:
        finals.add(final)
        transforms.add(lap)
        absorbed += hit
    sample = _SIMULATE[kind](cfg.mechanism, cfg.x0, cfg.sim)
    csv_path = _write_rows(args, cfg, "path", PATH_CSV_HEADER, path_csv_rows(sample))
    out_dir = Path(args.out_dir)
    bundle = Path(args.out) if args.out else out_dir / f"{cfg.out_prefix}_path.bin"
    write_path_bundle(sample, bundle)
    mean = finals.estimate(cfg.multiplier)
    lap = transforms.estimate(cfg.multiplier)
    target = _emit(args, cfg, "simulate", {
        "kind": kind,
        "n": cfg.n_paths,
        "mean_final": mean.mean,
        "stderr_final": mean.stderr,
        "laplace_at_theta": lap.mean,
        "laplace_stderr": lap.stderr,
        "theta": theta,
        "absorbed_fraction": absorbed / cfg.n_paths,
        "path_csv": csv_path.name,
        "path_bundle": bundle.name,
    })
    print(f"{kind}: n={cfg.n_paths} mean_final={mean.mean:.6g} "
          f"absorbed={absorbed / cfg.n_paths:.3g}")
    print(f"wrote {csv_path}, {bundle} and {target}")
    return EXIT_PASS


def _cmd_condition(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    mech, theta, t = cfg.mechanism, cfg.theta, cfg.t
    body: dict
    if cfg.mode == "weight":
        pairs = run_ensemble("csbp", mech, cfg.x0, cfg.sim, cfg.n_paths,
                             functools.partial(_weighted_transform, mech, theta, t),
                             workers=_workers(args))
        acc = WeightedMoments()
        for value, weight in pairs:
            acc.add(value, weight)
        est = acc.estimate(cfg.multiplier)
        body = {"mode": "weight", "estimate": est.mean, "stderr": est.stderr, "n": est.n}
    elif cfg.mode == "mark":
        pairs = run_ensemble("csbp", mech, cfg.x0, cfg.sim, cfg.n_paths,
                             functools.partial(_weighted_immigrant_count, mech, t),
                             workers=_workers(args))
        acc = WeightedMoments()
        for value, weight in pairs:
            acc.add(value, weight)
        est = acc.estimate(cfg.multiplier)
        sample = simulate_csbp(mech, cfg.x0, cfg.sim)
        atoms_csv = _write_rows(args, cfg, "atoms", MARKED_CSV_HEADER,
                                marked_csv_rows(mark_jumps(sample)))
        body = {
            "mode": "mark",
            "estimate": est.mean,
            "stderr": est.stderr,
            "n": est.n,
            "atoms_csv": atoms_csv.name,
        }
        print(f"wrote {atoms_csv}")
    else:
        s = cfg.s if cfg.s is not None else s_ladder(mech)[-1]
        rejection = survival_conditioned_expectation(
            mech, cfg.x0, t, s, functools.partial(_transform_at, theta, t),
            cfg.n_paths, cfg.sim, multiplier=cfg.multiplier,
        )
        body = {
            "mode": "reject",
            "estimate": rejection.estimate.mean,
            "stderr": rejection.estimate.stderr,
            "n": rejection.n_accepted,
            "acceptance_rate": rejection.acceptance_rate,
            # a rate far from the oracle flags a mechanism whose truncated
            # dynamics absorb too rarely for survival conditioning to bite
            "acceptance_oracle": rejection.acceptance_oracle,
            "acceptance_stderr": rejection.acceptance_stderr,
            "s": rejection.s,
        }
    target = _emit(args, cfg, "condition", body)
    print(f"condition[{cfg.mode}]: estimate={body['estimate']:.6g} "
          f"stderr={body['stderr']:.3g} n={body['n']}")
    print(f"wrote {target}")
    return EXIT_PASS


def _cmd_lamperti(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    mech = cfg.mechanism
    if cfg.direction == "zl":
        source = simulate_csbp(mech, cfg.x0, cfg.sim)
        derived = csbp_to_levy(source)
        label = ("t_branching", "t_levy")
    else:
        source = simulate_levy(mech, cfg.x0, cfg.sim)
        derived = levy_to_csbp(source)
        label = ("t_levy", "t_branching")
    if cfg.direction == "roundtrip":
        back = csbp_to_levy(derived)
        m = len(back.times)
        time_err = np.abs(back.times - source.times[:m])
        value_err = np.abs(back.values - source.values[:m])
        rows = [
            (repr(float(source.times[j])), repr(float(back.times[j])),
             repr(float(source.values[j])), repr(float(back.values[j])))
            for j in range(m)
        ]
        csv_path = _write_rows(args, cfg, "lamperti",
                               ("t_in", "t_back", "value_in", "value_back"), rows)
        body = {
            "direction": "roundtrip",
            "n_matched": m,
            "sup_time_error": float(time_err.max(initial=0.0)),
            "sup_value_error": float(value_err.max(initial=0.0)),
            "error_per_dt": float(time_err.max(initial=0.0) / cfg.sim.dt),
            "csv": csv_path.name,
        }
    else:
        m = len(derived.times)
        rows = [
            (repr(float(source.times[j])), repr(float(derived.times[j])),
             repr(float(derived.values[j])))
            for j in range(m)
        ]
        csv_path = _write_rows(args, cfg, "lamperti", (*label, "value"), rows)
        body = {
            "direction": cfg.direction,
            "n_matched": m,
            "source_epochs": len(source.times),
            "derived_absorbed": derived.absorption_time is not None,
            "csv": csv_path.name,
        }
    target = _emit(args, cfg, "lamperti", body)
    print(f"lamperti[{cfg.direction}]: matched {body['n_matched']} epochs")
    print(f"wrote {csv_path} and {target}")
    return EXIT_PASS


def _cmd_verify(args: argparse.Namespace) -> int:
    cfg = _resolve(args, need_mechanism=False)
    suite = args.suite or (cfg.suite if cfg is not None else None)
    if suite is None:
        raise ConfigError("no suite: pass a suite name or set 'suite' in the config")
    seed = args.seed if args.seed is not None else (cfg.sim.seed if cfg is not None else 0)
    report = run_suite(suite, seed=seed, n_paths=args.paths, dt=args.dt,
                       eps=args.eps, multiplier=args.multiplier)
    for check in report.checks:
        flag = "PASS" if check.passed else "FAIL"
        print(f"[{flag}] {check.name}: estimate={check.estimate:.6g} "
              f"target={check.target:.6g} band={check.band:.3g}")
    ns = argparse.Namespace(**vars(args))
    ns.seed = seed
    target = _emit(ns, cfg, f"verify_{suite}", dict(report.to_json()))
    print(f"suite {suite}: {'PASS' if report.passed else 'FAIL'} ({target})")
    return EXIT_PASS if report.passed else EXIT_STATISTICAL


# ------------------------------------------------------------------ parser --


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", metavar="FILE",
                        help="JSON run configuration; flags override its fields")
    shared.add_argument("--mech", metavar="JSON",
                        help="inline mechanism document (alternative to --config)")
    shared.add_argument("--seed", type=int, help="seed override")
    shared.add_argument("--threads", type=int, default=1,
                        help="worker cap for path ensembles; results do not depend on it")
    shared.add_argument("--out-dir", default=".", metavar="DIR",
                        help="directory for reports and data files")
    shared.add_argument("--prefix", help="output file name prefix override")

    sim_flags = argparse.ArgumentParser(add_help=False)
    sim_flags.add_argument("--x", type=float, help="initial state")
    sim_flags.add_argument("--T", type=float, help="horizon")
    sim_flags.add_argument("--dt", type=float, help="Euler step")
    sim_flags.add_argument("--eps", type=float, help="small-jump truncation level")

    parser = argparse.ArgumentParser(
        prog="csbpq",
        description="Simulation and verification of continuous-state branching "
                    "processes and their never-extinct conditionings.",
        epilog="JSON reports embed {mechanism, config, seed, version}; rerunning "
               "an embedded config reproduces every output byte for byte.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("mechanism", parents=[shared],
                       help="describe or validate a branching mechanism")
    p.add_argument("action", choices=("describe", "validate"))
    p.set_defaults(func=_cmd_mechanism)

    p = sub.add_parser("laplace", parents=[shared, sim_flags],
                       help="tabulate the transform exponent and both Laplace transforms")
    p.add_argument("--thetas", default="0.1,1.0,10.0",
                   help="comma-separated transform arguments")
    p.add_argument("--t-points", type=int, default=21, help="time grid size")
    p.set_defaults(func=_cmd_laplace)

    p = sub.add_parser("simulate", parents=[shared, sim_flags],
                       help="run a path ensemble and dump one sample path")
    p.add_argument("--paths", type=int, help="ensemble size")
    p.add_argument("--qprocess", action="store_true",
                   help="simulate the conditioned process instead of the branching one")
    p.add_argument("--theta", type=float, help="transform argument for the summary")
    p.add_argument("--out", metavar="FILE", help="binary bundle destination")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("condition", parents=[shared, sim_flags],
                       help="estimate a conditioned expectation")
    p.add_argument("--mode", choices=CONDITION_MODES,
                   help="weight: importance reweighting; mark: jump classification "
                        "with an immigrant-count summary; reject: finite-horizon "
                        "survival conditioning")
    p.add_argument("--theta", type=float, help="transform argument of the functional")
    p.add_argument("--t", type=float, help="evaluation time of the functional")
    p.add_argument("--s", type=float, help="extra survival horizon (reject mode)")
    p.add_argument("--paths", type=int, help="ensemble size")
    p.set_defaults(func=_cmd_condition)

    p = sub.add_parser("lamperti", parents=[shared, sim_flags],
                       help="time-change a path and report clock residuals")
    p.add_argument("--direction", choices=LAMPERTI_DIRECTIONS,
                   help="lz: Levy path to branching path; zl: the reverse; "
                        "roundtrip: both, with error columns")
    p.set_defaults(func=_cmd_lamperti)

    p = sub.add_parser("verify", parents=[shared],
                       help="run a named verification suite; exit 0 iff every check passes")
    p.add_argument("suite", nargs="?", choices=VERIFY_SUITES)
    p.add_argument("--paths", type=int, help="ensemble size override")
    p.add_argument("--dt", type=float, help="Euler step override")
    p.add_argument("--eps", type=float, help="truncation override")
    p.add_argument("--multiplier", type=float, help="acceptance band multiplier override")
    p.set_defaults(func=_cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the message
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StatisticalError as exc:
        print(f"statistical failure: {exc}", file=sys.stderr)
        return EXIT_STATISTICAL
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DomainError as exc:
        print(f"domain error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
