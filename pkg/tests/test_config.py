import dataclasses

import pytest

from evomail.config import (PipelineConfig, dump_config, load_config,
                            parse_config_text)
from evomail.errors import ConfigError


def test_defaults_round_trip_through_dump():
    cfg = PipelineConfig()
    back = parse_config_text(dump_config(cfg))
    assert back == cfg


def test_every_field_is_settable_from_text():
    cfg = PipelineConfig()
    lines = []
    for f in dataclasses.fields(PipelineConfig):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name}={v}")
    assert parse_config_text("\n".join(lines)) == cfg


def test_unknown_key_is_error():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config_text("definitely_not_a_key=3")


def test_bad_value_is_error():
    with pytest.raises(ConfigError):
        parse_config_text("iterations=three")
    with pytest.raises(ConfigError):
        parse_config_text("encoder_fallback_to_hashed=maybe")


def test_missing_equals_is_error():
    with pytest.raises(ConfigError, match="key=value"):
        parse_config_text("just a line")


def test_comments_and_blanks_ignored():
    cfg = parse_config_text("# comment\n\nvocab_cap=99\n")
    assert cfg.vocab_cap == 99


def test_bool_coercions():
    assert parse_config_text("encoder_fallback_to_hashed=true").encoder_fallback_to_hashed
    assert not parse_config_text("encoder_fallback_to_hashed=0").encoder_fallback_to_hashed


def test_load_config_none_gives_defaults():
    assert load_config(None) == PipelineConfig()


def test_ks_parsing():
    assert PipelineConfig(precision_at_ks="5, 20").ks() == [5, 20]
    assert PipelineConfig(precision_at_ks="").ks() == []


def test_temporal_window_sentinel():
    assert PipelineConfig(temporal_window=-1.0).candidate_policy_obj().temporal_window is None
    assert PipelineConfig(temporal_window=60.0).candidate_policy_obj().temporal_window == 60.0


def test_evolution_view_carries_values():
    cfg = PipelineConfig(fgsm_epsilon=0.07, memory_capacity=9)
    evo = cfg.evolution()
    assert evo.epsilon == 0.07
    assert evo.m_max == 9
    assert evo.homograph_families  # wired to the synthetic families
