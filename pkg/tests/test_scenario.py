import pytest

from avaas.network import ScenarioError
from avaas.scenario import load_scenario, parse_override

BASE = """
seed = 3
[network]
builtin = "ring"
length_m = 800.0
[demand]
horizon_s = 600.0
[[demand.initial]]
edge = "ring"
count = 10
speed_mps = 5.0
"""


def test_defaults():
    cfg = load_scenario(BASE)
    assert cfg.aggregation.t_agg == 300.0
    assert cfg.observers.penetration_pct == 10.0 and cfg.observers.seed == 3
    assert cfg.sensors.range("ego") == (200.0, 100.0)
    assert cfg.clustering.features == ("k", "v") and cfg.clustering.source == "ground_truth"
    assert cfg.network.lanes[0].length == 800.0


def test_overrides_and_seed():
    cfg = load_scenario(BASE, ["observers.penetration_pct=25", "sensors.profile=mid-range"], seed=9)
    assert cfg.observers.penetration_pct == 25.0
    assert cfg.sensors.range("ego") == (100.0, 50.0)
    assert cfg.seed == 9 and cfg.observers.seed == 9
    assert cfg.config_hash != load_scenario(BASE).config_hash
    assert load_scenario(BASE).config_hash == load_scenario(BASE).config_hash


def test_parse_override_values():
    assert parse_override("a.b=1.5") == (["a", "b"], 1.5)
    assert parse_override("x=word") == (["x"], "word")
    assert parse_override('e.f=["ego"]') == (["e", "f"], ["ego"])
    with pytest.raises(ScenarioError):
        parse_override("novalue")


@pytest.mark.parametrize("extra, locus", [
    ("[observers]\npenetration_pct = 0.0\n", "observers"),
    ("[aggregation]\nt_agg_s = 2.5\n", "aggregation.t_agg_s"),
    ("[sensors]\nprofile = 'huge'\n", "sensors.profile"),
    ("[clustering]\nfeatures = ['k', 'z']\n", "clustering.features"),
    ("[observers]\nspeling = 1\n", "observers.speling"),
    ("[[demand.flows]]\norigin = 'nope'\nrate_vph = 10.0\n", "demand.flows[0].origin"),
])
def test_validation_errors(extra, locus):
    with pytest.raises(ScenarioError) as exc:
        load_scenario(BASE + extra)
    assert exc.value.locus == locus


def test_unknown_top_level_key():
    with pytest.raises(ScenarioError, match="unknown key"):
        load_scenario("colour = 1\n" + BASE)


def test_explicit_ranges():
    cfg = load_scenario(BASE + "[sensors]\nenabled = ['ego']\n[sensors.ranges.ego]\nforward_m = 60.0\nbackward_m = 30.0\n")
    assert cfg.sensors.enabled == {"ego"} and cfg.sensors.range("ego") == (60.0, 30.0)
