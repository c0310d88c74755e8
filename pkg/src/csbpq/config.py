"""Run configuration: one JSON document describing a reproducible run.

The document carries the mechanism, the discretization, and every
command-specific knob, so a run is fully determined by (config, seed).
After parsing, all defaults are explicit; serializing the result and
parsing it again gives back an equal config.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import ConfigError, DomainError
from .mechanism import BranchingMechanism, mechanism_from_json, mechanism_to_json
from .simulate import SimConfig

CONDITION_MODES = ("weight", "mark", "reject")
LAMPERTI_DIRECTIONS = ("lz", "zl", "roundtrip")
VERIFY_SUITES = ("laplace", "martingale", "qprocess", "marking", "lamperti", "stable")

_SIM_FIELDS = {"T", "dt", "eps", "seed", "max_jumps", "keep_thinned"}
_TOP_FIELDS = {
    "mechanism",
    "sim",
    "x0",
    "n_paths",
    "multiplier",
    "theta",
    "t",
    "mode",
    "s",
    "direction",
    "suite",
    "out_prefix",
}


@dataclass(frozen=True)
class RunConfig:
    """Validated run description; field meanings follow the CLI subcommands.

    ``t`` is the evaluation time for estimators (resolved to ``sim.T`` when
    the document omits it); ``s`` is the extra survival horizon for the
    rejection estimator, None meaning "pick from the mechanism's ladder".
    """

    mechanism: BranchingMechanism
    sim: SimConfig
    x0: float = 1.0
    n_paths: int = 1000
    multiplier: float = 3.0
    theta: float = 1.0
    t: float = 0.0
    mode: str = "weight"
    s: float | None = None
    direction: str = "roundtrip"
    suite: str | None = None
    out_prefix: str = "run"

    def to_json(self) -> dict:
        """Every field explicit, suitable for embedding in run outputs."""
        return {
            "mechanism": mechanism_to_json(self.mechanism),
            "sim": {
                "T": self.sim.T,
                "dt": self.sim.dt,
                "eps": self.sim.eps,
                "seed": self.sim.seed,
                "max_jumps": self.sim.max_jumps,
                "keep_thinned": self.sim.keep_thinned,
            },
            "x0": self.x0,
            "n_paths": self.n_paths,
            "multiplier": self.multiplier,
            "theta": self.theta,
            "t": self.t,
            "mode": self.mode,
            "s": self.s,
            "direction": self.direction,
            "suite": self.suite,
            "out_prefix": self.out_prefix,
        }


def _number(obj: dict, key: str, where: str, default=None) -> float | None:
    if key not in obj:
        return default
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {val!r}")
    return float(val)


def _integer(obj: dict, key: str, where: str, default: int) -> int:
    if key not in obj:
        return default
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, int):
        raise ConfigError(f"{where}.{key}: expected an integer, got {val!r}")
    return val


def _choice(obj: dict, key: str, allowed, where: str, default):
    if key not in obj:
        return default
    val = obj[key]
    if val is None and default is None:
        return None
    if val not in allowed:
        raise ConfigError(f"{where}.{key}: expected one of {list(allowed)}, got {val!r}")
    return val


def _parse_mechanism(obj) -> BranchingMechanism:
    # name the exact offending field for the two most common slips before
    # delegating, whose wrapper only prefixes the object path
    if isinstance(obj, dict):
        sigma = obj.get("sigma")
        if isinstance(sigma, (int, float)) and not isinstance(sigma, bool) and sigma < 0:
            raise ConfigError(f"mechanism.sigma: must be >= 0, got {sigma}")
        levy = obj.get("levy")
        if isinstance(levy, dict) and levy.get("kind") == "stable":
            alpha = levy.get("alpha")
            if isinstance(alpha, (int, float)) and not isinstance(alpha, bool):
                if not 1.0 < alpha < 2.0:
                    raise ConfigError(
                        f"mechanism.levy.alpha: stable index must lie in (1, 2), "
                        f"got {alpha}"
                    )
    return mechanism_from_json(obj, where="mechanism")


def _parse_sim(obj) -> SimConfig:
    if not isinstance(obj, dict):
        raise ConfigError(f"sim: expected an object, got {obj!r}")
    unknown = set(obj) - _SIM_FIELDS
    if unknown:
        raise ConfigError(f"sim.{sorted(unknown)[0]}: unknown field")
    if "T" not in obj:
        raise ConfigError("sim.T: missing required field")
    kwargs = {
        "T": _number(obj, "T", "sim"),
        "dt": _number(obj, "dt", "sim", 1e-3),
        "eps": _number(obj, "eps", "sim", 1e-2),
        "seed": _integer(obj, "seed", "sim", 0),
        "max_jumps": _integer(obj, "max_jumps", "sim", 10_000_000),
    }
    keep = obj.get("keep_thinned", False)
    if not isinstance(keep, bool):
        raise ConfigError(f"sim.keep_thinned: expected a boolean, got {keep!r}")
    try:
        return SimConfig(keep_thinned=keep, **kwargs)
    except DomainError as exc:
        raise ConfigError(f"sim: {exc}") from exc


def parse_config(data: bytes | str) -> RunConfig:
    """Validate a UTF-8 JSON document into a RunConfig.

    Unknown keys are rejected with the dotted path of the offending field;
    numeric ranges are checked here so downstream modules see only valid
    inputs.
    """
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ConfigError(f"config: not valid UTF-8: {exc}") from exc
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config: expected a JSON object, got {doc!r}")
    unknown = set(doc) - _TOP_FIELDS
    if unknown:
        raise ConfigError(f"config.{sorted(unknown)[0]}: unknown field")
    for key in ("mechanism", "sim"):
        if key not in doc:
            raise ConfigError(f"config.{key}: missing required field")

    mech = _parse_mechanism(doc["mechanism"])
    sim = _parse_sim(doc["sim"])

    x0 = _number(doc, "x0", "config", 1.0)
    if not x0 > 0:
        raise ConfigError(f"config.x0: must be > 0, got {x0}")
    n_paths = _integer(doc, "n_paths", "config", 1000)
    if n_paths < 1:
        raise ConfigError(f"config.n_paths: must be >= 1, got {n_paths}")
    multiplier = _number(doc, "multiplier", "config", 3.0)
    if not multiplier > 0:
        raise ConfigError(f"config.multiplier: must be > 0, got {multiplier}")
    theta = _number(doc, "theta", "config", 1.0)
    if not theta > 0:
        raise ConfigError(f"config.theta: must be > 0, got {theta}")
    t = _number(doc, "t", "config", None)
    if t is None:
        t = sim.T
    if not 0 < t <= sim.T:
        raise ConfigError(f"config.t: must lie in (0, sim.T], got {t}")
    s = doc.get("s")
    if s is not None:
        s = _number(doc, "s", "config")
        if not s > 0:
            raise ConfigError(f"config.s: must be > 0, got {s}")
    mode = _choice(doc, "mode", CONDITION_MODES, "config", "weight")
    direction = _choice(doc, "direction", LAMPERTI_DIRECTIONS, "config", "roundtrip")
    suite = _choice(doc, "suite", VERIFY_SUITES, "config", None)
    out_prefix = doc.get("out_prefix", "run")
    if not isinstance(out_prefix, str) or not out_prefix:
        raise ConfigError(f"config.out_prefix: expected a nonempty string, got {out_prefix!r}")

    return RunConfig(
        mechanism=mech,
        sim=sim,
        x0=x0,
        n_paths=n_paths,
        multiplier=multiplier,
        theta=theta,
        t=t,
        mode=mode,
        s=s,
        direction=direction,
        suite=suite,
        out_prefix=out_prefix,
    )
