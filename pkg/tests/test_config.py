import numpy as np
import pytest

from beamsight.config import ConfigError, default_config_path, load_scenario

BASE = default_config_path().read_text()


def _line_of(text, needle):
    return next(i for i, l in enumerate(text.splitlines(), 1) if needle in l)


def test_default_config_loads(scenario):
    assert len(scenario.planes) == 6
    assert scenario.tx_codebook.size == 64 and scenario.rx_codebook.size == 9
    assert scenario.tier == "medium" and scenario.seed == 7
    assert sorted(scenario.rx_sets) == [2, 3, 4]
    np.testing.assert_allclose(np.rad2deg(scenario.rx_sets[2]), [60, 90])


def test_non_unit_normal_names_the_wall_and_line():
    text = BASE.replace("normal: [0.0, -1.0, 0.0]", "normal: [0.0, -2.0, 0.0]")
    with pytest.raises(ConfigError) as e:
        load_scenario(text=text)
    msg = str(e.value)
    assert "wall_north" in msg and "unit" in msg
    assert f":{_line_of(text, 'wall_north')}:" in msg


def test_bs_outside_room_rejected():
    text = BASE.replace("position: [0.0, 0.0, 2.0]", "position: [0.0, 0.0, 5.0]")
    with pytest.raises(ConfigError, match="outside the room") as e:
        load_scenario(text=text)
    assert f":{_line_of(text, 'position: [0.0, 0.0, 5.0]')}:" in str(e.value)


def test_region_outside_room_rejected():
    with pytest.raises(ConfigError, match="region leaves the room"):
        load_scenario(text=BASE.replace("[4.0, 5.0]", "[6.0, 5.0]"))


def test_unsorted_codebook_rejected():
    with pytest.raises(ConfigError, match="increasing"):
        load_scenario(text=BASE.replace("rx_az_deg: [30, 45,", "rx_az_deg: [45, 30,"))


def test_unknown_tier_rejected():
    with pytest.raises(ConfigError, match="unknown tier"):
        load_scenario(text=BASE.replace("tier: medium", "tier: superb"))


def test_rx_set_size_must_match_its_key():
    with pytest.raises(ConfigError, match="has 3 angles"):
        load_scenario(text=BASE.replace("2: [60, 90]", "2: [60, 90, 120]"))


def test_yaml_syntax_error_reports_line():
    with pytest.raises(ConfigError, match=r"<config>:\d+: YAML syntax error"):
        load_scenario(text=BASE.replace("seed: 7", "seed: [7"))


def test_unsigned_exponent_gets_a_hint():
    with pytest.raises(ConfigError, match="with a sign"):
        load_scenario(text=BASE.replace("28.0e+9", "28.0e9"))


def test_missing_key_reported():
    text = BASE.replace("  polygon:", "  poly:")
    with pytest.raises(ConfigError, match="region.polygon: missing"):
        load_scenario(text=text)


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_scenario("/nonexistent/room.yaml")
