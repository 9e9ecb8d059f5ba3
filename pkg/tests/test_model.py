import numpy as np
import pytest

from microdualnet import tensor as T
from microdualnet.data import ClipDataset
from microdualnet.model import MicroDualNet, ModelConfig
from microdualnet.train import ABLATIONS, ablation_components

SMALL = dict(dim=8, heads=2, layers=1, ffn_dim=16, cls_hidden=(16, 8), backbone_channels=(4, 8, 8, 8))


@pytest.fixture(scope="module")
def batch(tiny_dataset):
    return ClipDataset(tiny_dataset, "*", frames=4).batch([0, 9, 17])


@pytest.mark.parametrize("name", sorted(ABLATIONS))
def test_every_lattice_entry_runs(name, batch):
    model = MicroDualNet(ModelConfig(**SMALL, **ABLATIONS[name])).eval()
    out = model(batch)
    assert out.logits.shape == (3, 8)
    rep = model.loss(batch, out)
    assert np.isfinite(rep.total)
    assert (out.mac is not None) == model.cfg.uses_mac


def test_st_only_has_no_ts_path_or_router(batch):
    model = MicroDualNet(ModelConfig(**SMALL, st_only=True)).eval()
    out = model(batch)
    assert out.x_ts is None and out.alpha is None and model.router is None


def test_full_model_reports_routing_and_per_entity_mac(batch):
    model = MicroDualNet(ModelConfig(**SMALL)).eval()
    rep = model.loss(batch)
    assert rep.alpha.shape == (3, 4, 6, 2)
    assert rep.per_entity_mac.shape == (6,)
    assert rep.per_entity_mac.sum() == pytest.approx(rep.mac, rel=1e-9)


def test_ablation_components_table():
    assert ablation_components("baseline") == {"sem": False, "dual_path": False, "mac": False, "routing": False}
    assert ablation_components("full") == {"sem": True, "dual_path": True, "mac": True, "routing": True}
    assert ablation_components("+routing-mac") == {"sem": True, "dual_path": True, "mac": False, "routing": True}
    assert ablation_components("ts_only")["sem"] is False


def test_config_dict_round_trip():
    cfg = ModelConfig(**SMALL, no_mac=True)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        ModelConfig.from_dict({"width": 3})


def test_exclusive_single_paths():
    with pytest.raises(ValueError):
        ModelConfig(st_only=True, ts_only=True)


def test_fixed_regions_ignore_keypoints(batch):
    model = MicroDualNet(ModelConfig(**SMALL, fixed_regions=True)).eval()
    moved = type(batch)(**{**batch.__dict__, "boxes": batch.boxes + 3.0})
    assert np.array_equal(model(batch).logits.data, model(moved).logits.data)
