import pytest
import torch

from cycflow.errors import NumericError, ValidationError
from cycflow.flowmatch import EndpointCondition
from cycflow.gradcheck import gradient_check, relative_error
from cycflow.lora import inject_adapters
from cycflow.model import VelocityNet
from tests.conftest import TINY, randomize_head


def _double_model():
    torch.manual_seed(0)
    return randomize_head(VelocityNet(TINY)).double()


def _velocity_loss(model, caption=(1, 5)):
    g = torch.Generator().manual_seed(4)
    shape = (2, 5, TINY.latent_channels, TINY.latent_size, TINY.latent_size)
    xt = torch.randn(shape, generator=g, dtype=torch.float64)
    target = torch.randn(shape, generator=g, dtype=torch.float64)
    ends = EndpointCondition.interpolation(xt[:, 0], xt[:, -1], 5)
    t = torch.tensor([0.3, 0.8], dtype=torch.float64)

    def loss_fn():
        cond = model.build_condition(caption, "forward")
        return ((model(xt, t, cond, ends) - target) ** 2).mean()

    return loss_fn


def test_quadratic_toy_is_exact():
    w = torch.linspace(0.5, 2.0, 10, dtype=torch.float64).requires_grad_()
    assert gradient_check([w], lambda: (w**2).sum() / 2, probe_count=10) <= 1e-8


def test_full_model_in_double_precision():
    model = _double_model()
    assert gradient_check(model, _velocity_loss(model), probe_count=32, step=1e-4) <= 1e-4


def test_adapters_in_double_precision():
    model = inject_adapters(_double_model(), rank=2, seed=1)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("lora_B"):
                p.normal_(0.0, 0.1)
    worst = gradient_check(model, _velocity_loss(model), probe_count=16, names=["lora_"])
    assert worst <= 1e-4


def test_unused_vocabulary_row_has_zero_gradient():
    model = _double_model()
    _, probes = gradient_check(
        model, _velocity_loss(model, caption=(1, 5)), probe_count=4, names=["caption_embedding"], return_probes=True
    )
    for probe in probes:
        row = probe.index // TINY.d_hidden
        if row not in (1, 5):
            assert probe.analytic == 0.0
            assert probe.numeric == 0.0


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1.0, 1.0 + 1e-9) == pytest.approx(1e-9, rel=1e-3)


def test_non_finite_loss_raises():
    w = torch.ones(3, dtype=torch.float64, requires_grad=True)
    with pytest.raises(NumericError):
        gradient_check([w], lambda: (w * float("nan")).sum())


def test_nothing_trainable_is_rejected():
    w = torch.ones(3)
    with pytest.raises(ValidationError):
        gradient_check([w], lambda: w.sum())
