import pytest
import torch

from cycflow.errors import AdapterTargetError, ValidationError
from cycflow.flowmatch import EndpointCondition
from cycflow.lora import ATTENTION_TARGETS, LoRALinear, adapter_census, adapter_rank, adapters, inject_adapters, resolve_targets
from cycflow.model import load_model, save_model
from tests.conftest import TINY


def _forward(model):
    g = torch.Generator().manual_seed(2)
    xt = torch.randn(5, 1, TINY.latent_size, TINY.latent_size, generator=g)
    ends = EndpointCondition.interpolation(xt[0], xt[-1], 5)
    return model(xt, 0.6, model.build_condition([0, 4], "forward"), ends)


def test_fresh_adapters_reproduce_the_base(live_model):
    adapted = inject_adapters(live_model, rank=4)
    assert torch.equal(_forward(live_model), _forward(adapted))
    # copy=True leaves the input alone
    assert not adapters(live_model)


def test_only_adapter_matrices_are_trainable(live_model):
    adapted = inject_adapters(live_model, rank=3)
    trainable = {n for n, p in adapted.named_parameters() if p.requires_grad}
    assert trainable
    assert all(n.endswith(("lora_A", "lora_B")) for n in trainable)
    assert len(trainable) == 2 * len(ATTENTION_TARGETS) * TINY.blocks


def test_census_counts_rank_times_fan_in_plus_fan_out(live_model):
    adapted = inject_adapters(live_model, rank=3)
    d = TINY.d_hidden
    assert adapter_census(adapted) == len(ATTENTION_TARGETS) * TINY.blocks * 3 * (d + d)
    assert adapter_rank(adapted) == 3
    assert adapter_rank(live_model) is None


def test_effective_weight_is_base_plus_low_rank_update():
    base = torch.nn.Linear(6, 4)
    layer = LoRALinear(base, rank=2, generator=torch.Generator().manual_seed(0))
    with torch.no_grad():
        layer.lora_B.normal_()
    x = torch.randn(3, 6)
    expected = x @ layer.effective_weight().T + base.bias
    assert torch.allclose(layer(x), expected, atol=1e-5)
    with torch.no_grad():
        assert torch.linalg.matrix_rank(layer.effective_weight() - base.weight) <= 2


def test_target_aliases_and_errors():
    assert resolve_targets(["self_attn"]) == ("self_attn.q", "self_attn.k", "self_attn.v", "self_attn.o")
    assert resolve_targets(["cross_attn.q", "cross_attn.q"]) == ("cross_attn.q",)
    with pytest.raises(AdapterTargetError):
        resolve_targets(["mlp.0"])
    with pytest.raises(AdapterTargetError):
        resolve_targets([])


def test_double_injection_and_bad_rank(live_model):
    adapted = inject_adapters(live_model, rank=2)
    with pytest.raises(ValidationError, match="already"):
        inject_adapters(adapted, rank=2)
    with pytest.raises(ValidationError):
        inject_adapters(live_model, rank=0)


def test_checkpoint_reload_reinjects_adapters(live_model, tmp_path):
    adapted = inject_adapters(live_model, rank=2, targets=["cross_attn"])
    with torch.no_grad():
        for m in adapters(adapted).values():
            m.lora_B.normal_(0.0, 0.1)
    path = save_model(adapted, tmp_path / "a.ckpt")
    loaded = load_model(path)
    assert set(adapters(loaded)) == set(adapters(adapted))
    assert adapter_rank(loaded) == 2
    assert torch.equal(_forward(adapted), _forward(loaded))
