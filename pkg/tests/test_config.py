import json

import pytest

from loopsoup.config import Config, load_config, parse_config
from loopsoup.errors import ConfigError


def test_shipped_configs_load(configs):
    for path in sorted(configs.glob("*.json")):
        cfg = load_config(path)
        assert parse_config(cfg.canonical()) == cfg


def test_defaults():
    cfg = parse_config("{}")
    assert cfg.alpha == [1.0] and cfg.seed == 42 and cfg.threads == 1 and cfg.checks == []
    assert cfg.output.timings is False


@pytest.mark.parametrize("text", [
    '{"bogus": 1}',
    '{"checks": [{"name": "a", "kind": "green_identity", "extra": 1}]}',
    '{"alpha": [0.0]}',
    '{"alpha": []}',
    '{"seed": -1}',
    '{"seed": 18446744073709551616}',
    '{"radial": [{"d": 1, "alpha": 0.5, "grid": {"r_min": 1, "r_max": 10, "per_decade": 10}}]}',
    '{"output": {"report": "x", "color": true}}',
    'not json',
])
def test_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_measure_references():
    cfg = parse_config(json.dumps({"measures": {"w": [0.5, 0.5]}}))
    assert cfg.measure(1, 2) == [0.0, 1.0]
    assert cfg.measure("w", 2) == [0.5, 0.5]
    assert cfg.measure([1, 2], 2) == [1.0, 2.0]
    for bad in ("nope", 5, True, [1.0]):
        with pytest.raises(ConfigError):
            cfg.measure(bad, 2)
    with pytest.raises(ConfigError):
        cfg.measure("w", 3)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "none.json")


def test_canonical_is_stable():
    a = parse_config('{"seed": 5, "alpha": [2.0, 1.0]}')
    b = parse_config('{"alpha": [2.0, 1.0], "seed": 5}')
    assert a.canonical() == b.canonical()
    assert isinstance(a, Config)
