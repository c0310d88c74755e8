"""RunConfig parsing: defaults, dotted-path diagnostics, lossless round trip."""

import json

import pytest

from csbpq.config import RunConfig, parse_config
from csbpq.errors import ConfigError
from csbpq.mechanism import Stable, Zero


def _doc(**overrides):
    doc = {
        "mechanism": {"a": -1.0, "sigma": 1.4142135623730951, "levy": {"kind": "zero"}},
        "sim": {"T": 1.0},
    }
    doc.update(overrides)
    return json.dumps(doc).encode()


def test_minimal_feller_fills_documented_defaults():
    cfg = parse_config(_doc())
    assert cfg.sim.dt == 1e-3
    assert cfg.sim.eps == 1e-2
    assert cfg.multiplier == 3.0
    assert cfg.x0 == 1.0
    assert cfg.n_paths == 1000
    assert cfg.theta == 1.0
    assert cfg.t == cfg.sim.T
    assert cfg.mode == "weight"
    assert cfg.s is None
    assert cfg.direction == "roundtrip"
    assert cfg.suite is None
    assert isinstance(cfg.mechanism.levy, Zero)


def test_negative_sigma_names_the_field():
    doc = _doc(mechanism={"a": 0.0, "sigma": -1, "levy": {"kind": "zero"}})
    with pytest.raises(ConfigError, match=r"mechanism\.sigma"):
        parse_config(doc)


@pytest.mark.parametrize("alpha", [2.5, 2.0, 1.0, 0.5])
def test_stable_index_outside_open_interval_rejected(alpha):
    doc = _doc(mechanism={"a": 0.0, "sigma": 0.0, "levy": {"kind": "stable", "k": 1.0, "alpha": alpha}})
    with pytest.raises(ConfigError, match=r"\(1, 2\)"):
        parse_config(doc)


def test_stable_inside_interval_accepted():
    doc = _doc(mechanism={"a": -2.0, "sigma": 0.0, "levy": {"kind": "stable", "k": 1.0, "alpha": 1.5}})
    cfg = parse_config(doc)
    assert isinstance(cfg.mechanism.levy, Stable)
    assert cfg.mechanism.levy.alpha == 1.5


def test_round_trip_is_lossless():
    doc = _doc(
        x0=2.5,
        n_paths=42,
        multiplier=4.0,
        theta=0.7,
        t=0.25,
        mode="reject",
        s=5.0,
        direction="lz",
        suite="marking",
        out_prefix="exp1",
        sim={"T": 1.0, "dt": 5e-4, "eps": 0.05, "seed": 9, "max_jumps": 1000, "keep_thinned": True},
    )
    cfg = parse_config(doc)
    again = parse_config(json.dumps(cfg.to_json()).encode())
    assert again == cfg


def test_round_trip_keeps_null_s():
    cfg = parse_config(_doc())
    again = parse_config(json.dumps(cfg.to_json()))
    assert again.s is None and again == cfg


@pytest.mark.parametrize(
    "doc, path",
    [
        (_doc(bogus=1), r"config\.bogus"),
        (_doc(sim={"T": 1.0, "steps": 7}), r"sim\.steps"),
        (_doc(mechanism={"a": 0.0, "sigma": 0.0, "levy": {"kind": "zero"}, "q": 1}), r"mechanism\.q"),
    ],
)
def test_unknown_keys_carry_dotted_paths(doc, path):
    with pytest.raises(ConfigError, match=path):
        parse_config(doc)


def test_missing_required_sections():
    with pytest.raises(ConfigError, match=r"config\.sim.*missing"):
        parse_config(json.dumps({"mechanism": {"a": 0, "sigma": 0, "levy": {"kind": "zero"}}}))
    with pytest.raises(ConfigError, match=r"config\.mechanism.*missing"):
        parse_config(json.dumps({"sim": {"T": 1.0}}))
    with pytest.raises(ConfigError, match=r"sim\.T.*missing"):
        parse_config(_doc(sim={}))


def test_malformed_documents():
    with pytest.raises(ConfigError, match="JSON"):
        parse_config(b"{not json")
    with pytest.raises(ConfigError, match="object"):
        parse_config(b"[1, 2]")
    with pytest.raises(ConfigError, match="UTF-8"):
        parse_config(b"\xff\xfe{}")


def test_numeric_range_checks():
    with pytest.raises(ConfigError, match=r"config\.x0"):
        parse_config(_doc(x0=0.0))
    with pytest.raises(ConfigError, match=r"config\.n_paths"):
        parse_config(_doc(n_paths=0))
    with pytest.raises(ConfigError, match=r"config\.theta"):
        parse_config(_doc(theta=-1.0))
    with pytest.raises(ConfigError, match=r"config\.t"):
        parse_config(_doc(t=2.0))  # beyond sim.T
    with pytest.raises(ConfigError, match=r"config\.s"):
        parse_config(_doc(s=0.0))
    with pytest.raises(ConfigError, match=r"sim: "):
        parse_config(_doc(sim={"T": 1.0, "dt": 2.0}))  # dt > T


def test_type_checks_reject_lookalikes():
    with pytest.raises(ConfigError, match="number"):
        parse_config(_doc(x0=True))
    with pytest.raises(ConfigError, match="integer"):
        parse_config(_doc(n_paths=3.5))
    with pytest.raises(ConfigError, match="boolean"):
        parse_config(_doc(sim={"T": 1.0, "keep_thinned": 1}))
    with pytest.raises(ConfigError, match=r"config\.mode"):
        parse_config(_doc(mode="resample"))
    with pytest.raises(ConfigError, match=r"config\.suite"):
        parse_config(_doc(suite="everything"))
    with pytest.raises(ConfigError, match=r"config\.out_prefix"):
        parse_config(_doc(out_prefix=""))


def test_str_and_bytes_inputs_agree():
    raw = _doc(theta=2.0)
    assert parse_config(raw) == parse_config(raw.decode())


def test_explicit_t_inside_horizon():
    cfg = parse_config(_doc(t=0.5))
    assert cfg.t == 0.5
    assert isinstance(cfg, RunConfig)
