import os

import numpy as np
import pytest
import torch

from cycflow.data import SceneSpec, generate_dataset, render_clip
from cycflow.model import ModelConfig, VelocityNet

# 8x8 frames -> 4x4 latents -> 2x2 patch grid
TINY = ModelConfig(latent_size=4, patch=2, d_hidden=16, blocks=1, heads=2, mlp_ratio=2, max_latent_frames=16)
FRAME = 8
LENGTHS = (5, 9)


def pytest_collection_modifyitems(config, items):
    if os.environ.get("CYCFLOW_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="acceptance run; set CYCFLOW_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def tiny_config():
    return TINY


@pytest.fixture
def tiny_model():
    torch.manual_seed(0)
    return VelocityNet(TINY)


def randomize_head(model, seed=1, std=0.2):
    """The zero-initialized head blocks every upstream gradient; give it weights."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        model.head.weight.copy_(torch.randn(model.head.weight.shape, generator=g, dtype=model.head.weight.dtype) * std)
        model.head.bias.copy_(torch.randn(model.head.bias.shape, generator=g, dtype=model.head.bias.dtype) * std / 4)
    return model


@pytest.fixture
def live_model(tiny_model):
    return randomize_head(tiny_model)


@pytest.fixture
def moving_clip():
    spec = SceneSpec("disc", "accelerate", (0.3, 0.35), (0.7, 0.65), 1.2, 0.9, 5)
    return render_clip(spec, LENGTHS[0], FRAME)


@pytest.fixture
def palindrome():
    rng = np.random.default_rng(0)
    a, b, c = (rng.random((1, FRAME, FRAME)).astype(np.float32) for _ in range(3))
    return np.stack([a, b, c, b, a])


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_data")
    return generate_dataset(10, LENGTHS, seed=3, out_dir=out, frame_size=FRAME)


@pytest.fixture(scope="session")
def tiny_test_set(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_test")
    return generate_dataset(4, LENGTHS, seed=11, out_dir=out, frame_size=FRAME, classes=("accelerate",))
