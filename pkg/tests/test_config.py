from pathlib import Path

import pytest

from drowsynet.config import (ConfigError, PipelineConfig, apply_settings, dump_config, format_convs, load_config,
                              parse_convs)
from drowsynet.model import ConvSpec

EXAMPLE = Path(__file__).resolve().parents[1] / "configs" / "default.conf"


def test_example_config_documents_the_defaults():
    assert dump_config(load_config(EXAMPLE)) == dump_config(PipelineConfig().validate())


def test_example_config_lists_every_key():
    text = EXAMPLE.read_text()
    keys = {line.split("=")[0].strip() for line in dump_config(PipelineConfig()).splitlines()}
    present = {line.split("=")[0].strip() for line in text.splitlines() if "=" in line and not line.startswith("#")}
    assert keys == present


def test_dump_load_round_trip(tmp_path):
    cfg = load_config(None, {"scheme": "3x30", "eye.feature_dim": "32", "clahe": "off", "lr0": "0.002"})
    p = tmp_path / "c.conf"
    p.write_text(dump_config(cfg))
    again = load_config(p)
    assert dump_config(again) == dump_config(cfg)
    assert again.scheme == "3x30" and again.subnets["eye"].feature_dim == 32 and not again.clahe


def test_unknown_and_bad_keys_name_the_key(tmp_path):
    with pytest.raises(ConfigError) as e:
        load_config(None, {"learning_rate": "1"})
    assert e.value.key == "learning_rate"
    with pytest.raises(ConfigError) as e:
        load_config(None, {"eye.depth": "3"})
    assert e.value.key == "eye.depth"
    with pytest.raises(ConfigError) as e:
        load_config(None, {"epochs": "many"})
    assert e.value.key == "epochs"
    with pytest.raises(ConfigError) as e:
        load_config(None, {"scheme": "5x5"})
    assert e.value.key == "scheme"
    p = tmp_path / "dup.conf"
    p.write_text("seed = 1\nseed = 2\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_structural_rules_surface_as_config_errors():
    with pytest.raises(ConfigError, match="layer 1"):
        load_config(None, {"eye.convs": "4@3x3x3/1x2x2, 8@3x3x3/1x1x1"})
    with pytest.raises(ConfigError, match="224"):
        load_config(None, {"head.input_size": "112"})
    load_config(None, {"head.input_size": "112", "strict_sizes": "false"})
    with pytest.raises(ConfigError):
        load_config(None, {"clahe_clip_limit": "0.5"})


def test_parse_convs():
    convs = parse_convs("4@3x3x3/1x1x1, 8@1x3x3/2x2x2, 16")
    assert convs == [ConvSpec(4, (3, 3, 3), (1, 1, 1), (1, 1, 1)), ConvSpec(8, (1, 3, 3), (2, 2, 2), (0, 1, 1)),
                     ConvSpec(16, (3, 3, 3), (1, 1, 1), (1, 1, 1))]
    assert parse_convs(format_convs(convs)) == convs
    with pytest.raises(ValueError):
        parse_convs("4@3x3/1x1x1")


def test_cache_key_tracks_preprocessing_only():
    base = PipelineConfig()
    assert apply_settings(PipelineConfig(), {"clahe": "false"}).preprocess_hash() != base.preprocess_hash()
    assert apply_settings(PipelineConfig(), {"flow_alpha": "5"}).preprocess_hash() != base.preprocess_hash()
    assert apply_settings(PipelineConfig(), {"epochs": "3", "seed": "9"}).preprocess_hash() == base.preprocess_hash()


def test_run_dir_separates_variants_and_settings():
    a = PipelineConfig().validate()
    assert "multi-flow-clahe-pre-10x10-s0" in a.run_dir().name
    b = apply_settings(PipelineConfig(), {"epochs": "3"}).validate()
    assert a.run_dir() != b.run_dir()
    c = apply_settings(PipelineConfig(), {"work_dir": "/elsewhere"}).validate()
    assert a.run_dir().name == c.run_dir().name


def test_no_pretrain_disables_freeze():
    assert load_config(None, {"pretrain": "false"}).freeze is False
