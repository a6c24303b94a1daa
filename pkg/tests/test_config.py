"""Config parsing, overrides, file round-trip, and cross-field validation."""

import pytest

from mapdiff.config import (
    ExperimentConfig,
    apply_overrides,
    as_dict,
    base_codec,
    config_text,
    finalize,
    load_config,
    model_config,
    parse_value,
    save_config,
    schedule_params,
    time_spec,
)
from mapdiff.errors import ValidationError


def test_defaults_are_valid():
    cfg = finalize(ExperimentConfig())
    assert cfg.task == "segmentation"
    assert cfg.encoding == "embedding"
    assert cfg.scale == 0.01
    assert cfg.schedule == "cosine"
    assert cfg.steps == 3 and cfg.td == 1
    assert cfg.decoder_depth == 6


def test_apply_overrides_typed():
    cfg = apply_overrides(ExperimentConfig(),
                          ["lr=0.01", "steps=5", "schedule=linear"])
    assert cfg.lr == 0.01
    assert cfg.steps == 5
    assert cfg.schedule == "linear"


def test_overrides_later_pairs_win():
    cfg = apply_overrides(ExperimentConfig(), ["seed=1", "seed=2"])
    assert cfg.seed == 2


def test_override_errors():
    with pytest.raises(ValidationError):
        apply_overrides(ExperimentConfig(), ["notakey=3"])
    with pytest.raises(ValidationError):
        apply_overrides(ExperimentConfig(), ["lr"])
    with pytest.raises(ValidationError):
        apply_overrides(ExperimentConfig(), ["steps=three"])


def test_parse_value_types():
    assert parse_value("steps", "7") == 7
    assert parse_value("lr", "1e-4") == 1e-4
    assert parse_value("task", "depth") == "depth"
    with pytest.raises(ValidationError):
        parse_value("mystery", "1")


def test_config_file_roundtrip(tmp_path):
    cfg = apply_overrides(ExperimentConfig(), ["seed=9", "noise_std=0.1"])
    path = tmp_path / "config.txt"
    save_config(cfg, path)
    assert load_config(path) == cfg


def test_config_file_comments_and_errors(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("# comment\nseed = 4  # trailing\n\nlr = 0.5\n")
    cfg = load_config(path)
    assert cfg.seed == 4 and cfg.lr == 0.5
    path.write_text("seed 4\n")
    with pytest.raises(ValidationError):
        load_config(path)


def test_config_text_lists_every_field():
    text = config_text(ExperimentConfig())
    for name in as_dict(ExperimentConfig()):
        assert any(line.startswith(f"{name} = ") for line in text.splitlines())


def test_finalize_depth_pins_continuous():
    cfg = finalize(ExperimentConfig(task="depth"))
    assert cfg.encoding == "continuous"
    assert base_codec(cfg).strategy == "continuous"
    assert model_config(cfg).head == "depth"


@pytest.mark.parametrize("overrides", [
    ["task=classification"],
    ["encoding=continuous"],  # discrete task, continuous codec
    ["num_classes=1"],
    ["num_classes=300"],
    ["schedule=sigmoid"],
    ["objective=huber"],
    ["image_size=30"],
    ["train_count=0"],
    ["shapes_min=4", "shapes_max=2"],
    ["noise_std=-0.1"],
    ["scale=0"],
    ["total_steps=100", "self_aligned_steps=200"],
    ["batch_size=0"],
    ["lr=-1"],
    ["steps=0"],
    ["td=-1"],
])
def test_finalize_rejects(overrides):
    with pytest.raises(ValidationError):
        finalize(apply_overrides(ExperimentConfig(), overrides))


def test_derived_views_consistent():
    cfg = finalize(ExperimentConfig())
    assert schedule_params(cfg).kind == "cosine"
    assert time_spec(cfg).steps == cfg.steps
    mc = model_config(cfg)
    assert mc.head_channels == cfg.num_classes
    assert mc.codec_channels == cfg.embed_dim
    assert mc.table_classes == cfg.num_classes
    assert mc.init_seed == cfg.seed
