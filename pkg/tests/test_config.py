from __future__ import annotations

import itertools

import pytest

from rpdi.config import KEYS, env_name, load_settings, read_config_file, settings_as_dict
from rpdi.policy import ConfigError, Variant

LAYERS = ("file", "env", "flag")
VALUES = {"file": 100, "env": 200, "flag": 300}


@pytest.mark.parametrize("present", list(itertools.product([False, True], repeat=3)),
                         ids=lambda p: "+".join(l for l, on in zip(LAYERS, p) if on) or "default")
def test_precedence_matrix(tmp_path, present):
    on = dict(zip(LAYERS, present))
    path = None
    if on["file"]:
        path = tmp_path / "rpdi.yaml"
        path.write_text(f"policy:\n  window: {VALUES['file']}\n", encoding="utf-8")
    env = {"RPDI_POLICY_WINDOW": str(VALUES["env"])} if on["env"] else {}
    overrides = {"policy.window": VALUES["flag"] if on["flag"] else None}
    settings = load_settings(path, env=env, overrides=overrides)
    winner = next((l for l in reversed(LAYERS) if on[l]), None)
    assert settings.policy.window == (VALUES[winner] if winner else 512)


def test_layers_merge_per_key(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("policy:\n  window: 64\n  threshold: 1.5\nupstream:\n  logprobs_top_k: 5\n", encoding="utf-8")
    s = load_settings(path, env={"RPDI_POLICY_THRESHOLD": "2.5"}, overrides={"policy.variant": "no-gtf"})
    assert s.policy.window == 64
    assert s.policy.threshold == 2.5
    assert s.policy.variant is Variant.NO_GTF
    assert s.upstream.logprobs_top_k == 5
    assert s.gateway.port == 8080


def test_config_path_from_env(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("gateway:\n  port: 9999\n", encoding="utf-8")
    assert load_settings(env={"RPDI_CONFIG": str(path)}).gateway.port == 9999


def test_env_names():
    assert env_name("policy.window") == "RPDI_POLICY_WINDOW"
    assert env_name("upstream.base_url") == "RPDI_UPSTREAM_BASE_URL"
    assert env_name("gateway.monitoring") == "RPDI_GATEWAY_MONITORING"
    assert len(KEYS) == len(set(env_name(k) for k in KEYS))


def test_env_parsing():
    env = {
        "RPDI_POLICY_BOUNDARY_SET": '[".", "\\n\\n"]',
        "RPDI_GATEWAY_MONITORING": "off",
        "RPDI_UPSTREAM_REQUEST_TIMEOUT": "2.5",
    }
    s = load_settings(env=env)
    assert s.policy.boundary_set == frozenset({".", "\n\n"})
    assert s.gateway.monitoring is False
    assert s.upstream.request_timeout == 2.5


@pytest.mark.parametrize(
    "text",
    ["policy:\n  windw: 3\n", "polcy:\n  window: 3\n", "policy: 3\n", "- a\n", "policy:\n  window: [1\n"],
)
def test_bad_files_rejected(tmp_path, text):
    path = tmp_path / "bad.yaml"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(ConfigError):
        read_config_file(path)


def test_missing_file_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_settings(tmp_path / "nope.yaml", env={})


@pytest.mark.parametrize(
    "env",
    [{"RPDI_POLICY_WINDOW": "many"}, {"RPDI_GATEWAY_MONITORING": "maybe"}, {"RPDI_POLICY_VARIANT": "nope"},
     {"RPDI_POLICY_WINDOW": "0"}, {"RPDI_UPSTREAM_BASE_URL": "ftp://x"}, {"RPDI_POLICY_BOUNDARY_SET": "[1]"}],
)
def test_bad_values_rejected(env):
    with pytest.raises(ConfigError):
        load_settings(env=env)


def test_unknown_override_rejected():
    with pytest.raises(ConfigError):
        load_settings(env={}, overrides={"policy.windw": 3})


def test_json_file_parses(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{"policy": {"budget": 32768}}', encoding="utf-8")
    assert load_settings(path, env={}).policy.budget == 32768


def test_settings_as_dict_round_trips(tmp_path):
    import yaml

    s = load_settings(env={}, overrides={"policy.window": 128, "upstream.completion_style": "raw-completion"})
    path = tmp_path / "dump.yaml"
    path.write_text(yaml.safe_dump(settings_as_dict(s)), encoding="utf-8")
    assert load_settings(path, env={}) == s
