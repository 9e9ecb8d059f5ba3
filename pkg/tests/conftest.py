import numpy as np
import pytest

from microdualnet import tensor as T


@pytest.fixture(autouse=True)
def _float64_default():
    # training switches the global default to float32; tests start from float64
    prev = T.get_default_dtype()
    T.set_default_dtype(np.float64)
    yield
    T.set_default_dtype(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    from microdualnet.synth import GenConfig, gen_dataset

    root = tmp_path_factory.mktemp("tiny")
    return gen_dataset(root, 4, seed=11, cfg=GenConfig(canvas=32, n_frames=6))


def tiny_train_config(root, **run):
    from microdualnet.config import TrainConfig
    from microdualnet.model import ModelConfig

    model = ModelConfig(dim=8, heads=2, layers=1, ffn_dim=16, cls_hidden=(16, 8), backbone_channels=(4, 8, 8, 8))
    base = dict(data_root=str(root), frames=4, epochs=2, batch_size=4, warmup_epochs=1, model=model)
    base.update(run)
    return TrainConfig(**base)
