import pytest

from microdualnet.config import ConfigError, TrainConfig, load_config, parse_config, render_config

TEXT = """
[data]
root = /tmp/x
frames = 4
[model]
dim = 32
backbone_channels = 8, 16, 24, 32
[loss]
lambda = 0.2
[ablation]
st_only = true
"""


def test_parse_maps_sections_to_fields():
    cfg = parse_config(TEXT)
    assert cfg.data_root == "/tmp/x" and cfg.frames == 4
    assert cfg.model.dim == 32 and cfg.model.backbone_channels == (8, 16, 24, 32)
    assert cfg.model.lam == 0.2 and cfg.model.st_only


def test_overrides_win():
    assert parse_config(TEXT, {"model.dim": "16", "schedule.epochs": "3"}).model.dim == 16


@pytest.mark.parametrize("text,frag", [
    ("[data]\nroots = x\n", "roots"),
    ("[optimizer]\nlr = 1\n", "optimizer"),
    ("[model]\ndim = wide\n", "dim"),
    ("[ablation]\nst_only = true\nts_only = true\n", "exclusive"),
    ("[schedule]\nepochs = 0\n", "positive"),
])
def test_invalid_configs_rejected(text, frag):
    with pytest.raises(ConfigError, match=frag):
        parse_config(text)


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/run.cfg")


def test_render_round_trip():
    cfg = parse_config(TEXT)
    assert parse_config(render_config(cfg)) == cfg


def test_dict_round_trip():
    cfg = parse_config(TEXT)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
