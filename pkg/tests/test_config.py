import json

import pytest

from fvv.config import Config, ConfigError, parse_config


def test_defaults():
    cfg = parse_config(env={})
    assert cfg == Config()
    assert cfg.period_us == 33_333
    assert cfg.effective_tolerance_us == 16_666


def test_file_values(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"period_us": 40_000, "scene": "empty"}))
    cfg = parse_config(file_path=p, env={})
    assert cfg.period_us == 40_000
    assert cfg.scene == "empty"


def test_env_points_to_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"hysteresis": 0.25}))
    cfg = parse_config(env={"FVV_CONFIG": str(p)})
    assert cfg.hysteresis == 0.25


def test_flag_file_beats_env_file(tmp_path):
    env_file = tmp_path / "env.json"
    env_file.write_text(json.dumps({"period_us": 1000, "tolerance_us": 400}))
    flag_file = tmp_path / "flag.json"
    flag_file.write_text(json.dumps({"period_us": 50_000}))
    cfg = parse_config(file_path=flag_file, env={"FVV_CONFIG": str(env_file)})
    assert cfg.period_us == 50_000
    assert cfg.tolerance_us is None  # env file is not merged, it is replaced


def test_flag_overrides_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"period_us": 40_000}))
    cfg = parse_config(file_path=p, env={}, overrides={"period_us": 20_000})
    assert cfg.period_us == 20_000


def test_none_overrides_are_ignored(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"scene": "empty"}))
    cfg = parse_config(file_path=p, env={}, overrides={"scene": None})
    assert cfg.scene == "empty"


def test_unknown_key_is_named(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"perid": 1}))
    with pytest.raises(ConfigError, match="perid"):
        parse_config(file_path=p, env={})


def test_type_mismatch_is_named(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"period_us": "fast"}))
    with pytest.raises(ConfigError, match="period_us"):
        parse_config(file_path=p, env={})


def test_tolerance_must_fit_period():
    with pytest.raises(ConfigError, match="tolerance"):
        parse_config(env={}, overrides={"period_us": 1000, "tolerance_us": 800})


def test_bad_output_encoding():
    with pytest.raises(ConfigError, match="output_encoding"):
        parse_config(env={}, overrides={"output_encoding": "jpeg"})


def test_deterministic(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"period_us": 40_000, "splat_2x2": False}))
    a = parse_config(file_path=p, env={}, overrides={"scene": "empty"})
    b = parse_config(file_path=p, env={}, overrides={"scene": "empty"})
    assert a == b


def test_bool_coercion(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"splat_2x2": "off"}))
    assert parse_config(file_path=p, env={}).splat_2x2 is False
    p.write_text(json.dumps({"splat_2x2": "true"}))
    assert parse_config(file_path=p, env={}).splat_2x2 is True
