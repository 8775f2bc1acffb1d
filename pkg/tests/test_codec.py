import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from cycflow.codec import Codec
from cycflow.data import reverse
from cycflow.errors import DimensionError, NumericError


def block_constant(frames=5, size=8, seed=0):
    rng = np.random.default_rng(seed)
    coarse = rng.random((frames, 1, size // 2, size // 2)).astype(np.float32)
    return coarse.repeat(2, axis=-2).repeat(2, axis=-1)


@pytest.mark.parametrize("frames,temporal,expected", [(9, 1, 9), (17, 1, 17), (9, 2, 5), (17, 2, 9)])
def test_latent_length(frames, temporal, expected):
    codec = Codec(temporal=temporal)
    assert codec.latent_length(frames) == expected
    assert codec.video_length(expected) == frames


def test_shape_contract_errors():
    with pytest.raises(DimensionError):
        Codec().latent_length(1)
    with pytest.raises(DimensionError, match="divisible"):
        Codec(temporal=2).latent_length(8)
    with pytest.raises(DimensionError, match="even"):
        Codec().encode(torch.zeros(3, 1, 7, 8))
    with pytest.raises(DimensionError):
        Codec(temporal=3)


def test_block_constant_video_is_a_fixed_point():
    video = torch.from_numpy(block_constant())
    codec = Codec()
    assert torch.equal(codec.decode(codec.encode(video)), video)
    assert codec.round_trip_error(video) == 0.0


def test_encode_is_per_frame_so_it_commutes_with_reversal():
    rng = np.random.default_rng(1)
    video = torch.from_numpy(rng.random((2, 5, 1, 8, 8)).astype(np.float32))
    codec = Codec()
    assert torch.equal(codec.encode(reverse(video)), reverse(codec.encode(video)))


def test_encode_frames_matches_the_first_latent_frame():
    video = torch.rand(5, 1, 8, 8)
    for codec in (Codec(), Codec(temporal=2)):
        assert torch.equal(codec.encode_frames(video[0]), codec.encode(video)[0])


def test_temporal_compression_layout():
    video = torch.arange(5, dtype=torch.float32).view(5, 1, 1, 1).expand(5, 1, 4, 4).contiguous()
    codec = Codec(temporal=2)
    latent = codec.encode(video)
    assert latent.shape == (3, 1, 2, 2)
    assert latent[:, 0, 0, 0].tolist() == [0.0, 1.5, 3.5]
    assert codec.decode(latent, clamp=False)[:, 0, 0, 0].tolist() == [0.0, 1.5, 1.5, 3.5, 3.5]


def test_decode_clamps_only_when_asked():
    latent = torch.full((2, 1, 2, 2), 1.5)
    assert Codec().decode(latent).max() == 1.0
    assert Codec().decode(latent, clamp=False).max() == 1.5
    with pytest.raises(NumericError):
        Codec().decode(torch.full((2, 1, 2, 2), float("nan")))


def test_round_trip_error_of_a_checkerboard():
    board = (np.indices((8, 8)).sum(axis=0) % 2).astype(np.float32)
    video = np.stack([board[None]] * 3)
    # every 2x2 block averages to 0.5, so each pixel misses by 0.5
    assert Codec().round_trip_error(video) == pytest.approx(0.25)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-2, 2), b=st.floats(-2, 2), seed=st.integers(0, 2**16))
def test_encode_is_linear(a, b, seed):
    g = torch.Generator().manual_seed(seed)
    x, y = torch.rand(3, 1, 4, 4, generator=g, dtype=torch.float64), torch.rand(3, 1, 4, 4, generator=g, dtype=torch.float64)
    codec = Codec()
    lhs = codec.encode(a * x + b * y)
    rhs = a * codec.encode(x) + b * codec.encode(y)
    assert torch.allclose(lhs, rhs, atol=1e-12)
