import json

import pytest

from mevsim.errors import ConfigError
from mevsim.scenario import (
    canonical_json, load_raw, load_scenario, parse_scenario, parse_value, set_path, to_canonical,
)

from conftest import SCENARIO_DIR

SHIPPED = sorted(p.stem for p in SCENARIO_DIR.glob("*.toml"))

MINIMAL = {
    "name": "t", "mode": "legacy", "rounds": 2,
    "topology": {"nodes": ["n0"]},
    "pools": [{"id": "P1", "reserve_x": "100", "reserve_y": "100"}],
}


def test_fourteen_scenarios_shipped():
    assert len(SHIPPED) == 14


@pytest.mark.parametrize("name", SHIPPED)
def test_toml_and_canonical_json_parse_equal(name, tmp_path):
    sc = load_scenario(SCENARIO_DIR / f"{name}.toml")
    path = tmp_path / f"{name}.json"
    path.write_text(canonical_json(sc))
    again = load_scenario(path)
    assert again == sc
    assert to_canonical(again) == to_canonical(sc)


def test_defaults_filled_in():
    sc = parse_scenario(MINIMAL)
    assert sc.seed == 0 or isinstance(sc.seed, int)
    assert sc.ticks_per_round == 4 and sc.gas_limit == 10_000
    assert not sc.has_adversaries


@pytest.mark.parametrize("mutate,path", [
    (lambda d: d.update(rounds=0), "rounds"),
    (lambda d: d.update(mode="pos"), "mode"),
    (lambda d: d.update(bogus=1), "bogus"),
    (lambda d: d["pools"][0].update(reserve_x="0"), "pools[0]"),
    (lambda d: d["pools"].append({"id": "P1", "reserve_x": "1", "reserve_y": "1"}), "pools"),
    (lambda d: d.update(users={"count": 1, "slippage_bps": "lots"}), "users.slippage_bps"),
    (lambda d: d.update(searchers=[{"id": "S1", "strategies": ["Teleport"]}]), "searchers[0].strategies"),
    (lambda d: d.update(mode="pbs"), "builders"),
])
def test_config_errors_name_the_field(mutate, path):
    raw = json.loads(json.dumps(MINIMAL))
    mutate(raw)
    with pytest.raises(ConfigError) as exc:
        parse_scenario(raw)
    assert exc.value.path.startswith(path)


def test_bad_file_is_config_error(tmp_path):
    bad = tmp_path / "x.toml"
    bad.write_text("name = [")
    with pytest.raises(ConfigError):
        load_raw(bad)


def test_counterfactual_strips_adversaries():
    sc = load_scenario(SCENARIO_DIR / "collusion.toml")
    cf = sc.counterfactual()
    assert cf.searchers == () or list(cf.searchers) == []
    assert all(b.profile.honest or b.profile.censoring for b in cf.builders)
    assert not cf.has_adversaries


def test_parse_value_scalars():
    assert parse_value("3") == 3
    assert parse_value("0.5") == 0.5
    assert parse_value("true") is True
    assert parse_value('"1/2"') == "1/2"
    assert parse_value("rate") == "rate"


def test_set_path_copies_and_indexes():
    raw = {"builders": [{"id": "B1"}], "users": {}}
    out = set_path(raw, "builders[0].payment_fraction", "1/2")
    assert out["builders"][0]["payment_fraction"] == "1/2"
    assert "payment_fraction" not in raw["builders"][0]
    assert set_path(raw, "users.count", 3)["users"]["count"] == 3
    with pytest.raises(ConfigError):
        set_path(raw, "builders[3].id", "x")
    with pytest.raises(ConfigError):
        set_path(raw, "builders..id", "x")
