import json
from dataclasses import replace

import pytest
import torch

from cycflow.errors import DimensionError, NumericError, ValidationError, VocabularyError
from cycflow.flowmatch import EndpointCondition, recover_clean
from cycflow.model import (
    Direction,
    ModelConfig,
    VelocityNet,
    build_condition,
    forward_velocity,
    load_model,
    parameter_census,
    save_model,
    sidecar_path,
    with_shared_token,
)
from cycflow.train import TrainConfig, run_curriculum
from tests.conftest import LENGTHS, TINY, randomize_head


def _inputs(batch=None, frames=5, config=TINY):
    g = torch.Generator().manual_seed(0)
    lead = () if batch is None else (batch,)
    shape = (*lead, frames, config.latent_channels, config.latent_size, config.latent_size)
    xt = torch.randn(shape, generator=g)
    start = torch.rand((*lead, config.latent_channels, config.latent_size, config.latent_size), generator=g)
    end = torch.rand(start.shape, generator=g)
    return xt, EndpointCondition.interpolation(start, end, frames)


def test_direction_parsing():
    assert Direction.parse("fwd") is Direction.FORWARD
    assert Direction.parse("Backward") is Direction.BACKWARD
    assert Direction.FORWARD.flipped() is Direction.BACKWARD
    with pytest.raises(ValidationError):
        Direction.parse("sideways")


@pytest.mark.parametrize("config", [TINY, ModelConfig(), replace(TINY, clean_skip=False)])
def test_parameter_census_matches_the_module(config):
    model = VelocityNet(config)
    assert sum(p.numel() for p in model.parameters()) == parameter_census(config)


def test_default_model_stays_desk_scale():
    assert parameter_census(ModelConfig()) <= 1_000_000


def test_config_validation():
    with pytest.raises(DimensionError):
        ModelConfig(latent_size=5, patch=2)
    with pytest.raises(ValidationError):
        ModelConfig(d_hidden=18, heads=4)
    with pytest.raises(ValidationError, match="unknown"):
        ModelConfig.from_dict({"width": 3})


def test_condition_sequence_prepends_the_direction_token(tiny_model):
    cond = build_condition([1, 5], "forward", tiny_model)
    assert cond.rows == 3
    assert torch.equal(cond.tokens[0], tiny_model.tau_fwd)
    assert torch.equal(cond.tokens[1:], tiny_model.caption_embedding.weight[[1, 5]])
    bwd = tiny_model.build_condition([1, 5], Direction.BACKWARD)
    assert torch.equal(bwd.tokens[0], tiny_model.tau_bwd)
    assert not torch.equal(cond.tokens, bwd.tokens)


def test_unknown_caption_id_is_a_vocabulary_error(tiny_model):
    with pytest.raises(VocabularyError):
        tiny_model.build_condition([0, TINY.vocab_size], "forward")
    with pytest.raises(VocabularyError):
        tiny_model.condition_batch(torch.tensor([[0, -1]]), "forward")


def test_shared_token_makes_directions_indistinguishable(tiny_model):
    with_shared_token(tiny_model)
    fwd = tiny_model.build_condition([2, 6], "forward")
    bwd = tiny_model.build_condition([2, 6], "backward")
    assert torch.equal(fwd.tokens, bwd.tokens)


def test_zero_initialized_head_outputs_exact_zeros(tiny_model):
    xt, ends = _inputs(batch=2)
    cond = tiny_model.condition_batch(torch.tensor([[0, 5], [1, 6]]), "forward")
    v = forward_velocity(tiny_model, xt, torch.tensor([0.3, 0.9]), cond, ends)
    assert v.shape == xt.shape
    assert torch.count_nonzero(v) == 0


def test_unbatched_forward_matches_batched(live_model):
    xt, ends = _inputs()
    cond = live_model.build_condition([1, 5], "backward")
    single = live_model(xt, 0.4, cond, ends)
    batched = live_model(xt.unsqueeze(0), torch.tensor([0.4]), cond, ends)
    assert single.shape == xt.shape
    assert torch.allclose(single, batched[0], atol=1e-6)


def test_direction_token_changes_the_velocity(live_model):
    xt, ends = _inputs()
    v_f = live_model(xt, 0.5, live_model.build_condition([1, 5], "forward"), ends)
    v_b = live_model(xt, 0.5, live_model.build_condition([1, 5], "backward"), ends)
    assert not torch.allclose(v_f, v_b)


def _plain_twin(model):
    """Same weights without the clean view, so its output is the raw head."""
    plain = VelocityNet(replace(model.config, clean_skip=False))
    plain.load_state_dict({k: v for k, v in model.state_dict().items() if not k.startswith("skip_gain")})
    return plain


def test_clean_view_divides_the_gated_head_by_t(live_model):
    plain = _plain_twin(live_model)
    with torch.no_grad():
        live_model.skip_gain.bias.fill_(0.25)
    xt, ends = _inputs()
    for t in (0.1, 0.5, 1.0):
        v = live_model(xt, t, live_model.build_condition([1, 5], "forward"), ends)
        out = plain(xt, t, plain.build_condition([1, 5], "forward"), ends)
        torch.testing.assert_close(v * t, 0.25 * xt + out, rtol=1e-5, atol=1e-6)


def test_unit_gain_recovers_the_head_prediction_without_noise(live_model):
    plain = _plain_twin(live_model)
    with torch.no_grad():
        live_model.skip_gain.bias.fill_(1.0)
    xt, ends = _inputs()
    for t in (1e-3, 0.3, 0.9):
        v = live_model(xt, t, live_model.build_condition([2, 6], "backward"), ends)
        out = plain(xt, t, plain.build_condition([2, 6], "backward"), ends)
        torch.testing.assert_close(recover_clean(xt, v, t), -out, rtol=1e-4, atol=1e-4)
    # t = 0 stays finite; the recovered latent is x_t itself
    v0 = live_model(xt, 0.0, live_model.build_condition([2, 6], "backward"), ends)
    assert torch.isfinite(v0).all()
    assert torch.equal(recover_clean(xt, v0, 0.0), xt)


def test_trained_model_separates_the_directions(tmp_path, tiny_dataset, record_property):
    torch.manual_seed(0)
    config = TrainConfig(batch=2, phase1_steps=100, phase2_steps=100, lengths=LENGTHS, log_every=50, checkpoint_every=200)
    model = run_curriculum(config, tiny_dataset, VelocityNet(TINY), tmp_path / "run", progress=False).model
    xt, ends = _inputs()
    with torch.no_grad():
        v_f = model(xt, 0.5, model.build_condition([1, 5], "forward"), ends)
        v_b = model(xt, 0.5, model.build_condition([1, 5], "backward"), ends)
    gap = float((v_f - v_b).norm())
    record_property("direction_velocity_gap", gap)
    record_property("velocity_norm", float(v_f.norm()))
    assert gap > 1e-6 * float(v_f.norm())


def test_shape_errors(tiny_model):
    xt, ends = _inputs()
    cond = tiny_model.build_condition([0], "forward")
    with pytest.raises(DimensionError):
        tiny_model(xt[:, :, :2], 0.5, cond, ends)
    with pytest.raises(DimensionError, match="mask"):
        tiny_model(xt[:4], 0.5, cond, ends)
    too_long, long_ends = _inputs(frames=TINY.max_latent_frames + 1)
    with pytest.raises(DimensionError, match="max_latent_frames"):
        tiny_model(too_long, 0.5, cond, long_ends)


def test_non_finite_activations_name_the_block(live_model):
    xt, ends = _inputs()
    with torch.no_grad():
        live_model.blocks[0].mlp[0].weight.fill_(float("inf"))
    with pytest.raises(NumericError, match="blocks.0"):
        live_model(xt, 0.5, live_model.build_condition([0], "forward"), ends)


def test_checkpoint_reload_reproduces_the_velocity(live_model, tmp_path):
    path = save_model(live_model, tmp_path / "m.ckpt", {"train": {"seed": 3}})
    side = json.loads(sidecar_path(path).read_text())
    assert side["model"] == TINY.to_dict()
    assert side["train"] == {"seed": 3}

    loaded = load_model(path)
    xt, ends = _inputs()
    cond_a = live_model.build_condition([1, 5], "forward")
    cond_b = loaded.build_condition([1, 5], "forward")
    assert torch.equal(live_model(xt, 0.3, cond_a, ends), loaded(xt, 0.3, cond_b, ends))


def test_checkpoint_census_mismatch_is_rejected(live_model, tmp_path):
    path = save_model(live_model, tmp_path / "m.ckpt")
    with pytest.raises(ValidationError):
        load_model(path, ModelConfig(latent_size=4, patch=2, d_hidden=16, blocks=2, heads=2, mlp_ratio=2, max_latent_frames=16))
    sidecar_path(path).unlink()
    with pytest.raises(ValidationError, match="sidecar"):
        load_model(path)
    assert load_model(path, TINY).config == TINY


def test_randomized_head_helper_is_deterministic(tiny_model):
    a = randomize_head(VelocityNet(TINY)).head.weight.clone()
    b = randomize_head(VelocityNet(TINY)).head.weight.clone()
    assert torch.equal(a, b)
