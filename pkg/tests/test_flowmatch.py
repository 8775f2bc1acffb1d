import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from cycflow.errors import DimensionError, NumericError, ValidationError
from cycflow.flowmatch import (
    EndpointCondition,
    FlowSample,
    NoiseStream,
    euler_sample,
    interpolate_state,
    recover_clean,
    time_grid,
    velocity_target,
)

SHAPE = (3, 1, 4, 4)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), t=st.floats(0.0, 1.0))
def test_straight_path_recovers_clean_latent(seed, t):
    stream = NoiseStream(seed)
    x0 = stream.normal(SHAPE, 0, dtype=torch.float64)
    eps = stream.normal(SHAPE, 1, dtype=torch.float64)
    back = recover_clean(interpolate_state(x0, eps, t), velocity_target(x0, eps), t)
    rel = (back - x0).abs().max() / x0.abs().max()
    assert rel <= 1e-6


def test_path_endpoints():
    x0, eps = torch.zeros(SHAPE), torch.ones(SHAPE)
    assert torch.equal(interpolate_state(x0, eps, 0.0), x0)
    assert torch.equal(interpolate_state(x0, eps, 1.0), eps)
    assert torch.equal(velocity_target(x0, eps), eps)


def test_per_sample_time_broadcasts_over_the_batch():
    x0, eps = torch.zeros(2, *SHAPE), torch.ones(2, *SHAPE)
    xt = interpolate_state(x0, eps, torch.tensor([0.25, 0.75]))
    assert xt[0].unique().tolist() == [0.25]
    assert xt[1].unique().tolist() == [0.75]
    sample = FlowSample.draw(x0, eps, torch.tensor([0.25, 0.75]))
    assert torch.equal(sample.xt, xt)


def test_algebra_rejects_bad_inputs():
    with pytest.raises(DimensionError):
        interpolate_state(torch.zeros(SHAPE), torch.zeros(2, 1, 4, 4), 0.5)
    with pytest.raises(ValidationError):
        interpolate_state(torch.zeros(SHAPE), torch.zeros(SHAPE), 1.5)
    with pytest.raises(DimensionError):
        recover_clean(torch.zeros(2, *SHAPE), torch.zeros(2, *SHAPE), torch.tensor([0.1, 0.2, 0.3]))


def test_noise_stream_is_keyed_by_counter_not_call_order():
    stream = NoiseStream(7)
    a = stream.normal((4,), 3, 1)
    stream.normal((4,), 0)
    assert torch.equal(stream.normal((4,), 3, 1), a)
    assert not torch.equal(stream.normal((4,), 3, 2), a)
    assert not torch.equal(NoiseStream(8).normal((4,), 3, 1), a)
    assert stream.rng(1).integers(1000) == NoiseStream(7).rng(1).integers(1000)


def test_time_grid_descends_from_one():
    assert time_grid(4) == [1.0, 0.75, 0.5, 0.25]


@pytest.mark.parametrize("steps", [1, 2, 8])
def test_constant_oracle_field_reaches_clean_latent(steps):
    stream = NoiseStream(0)
    x0 = stream.normal(SHAPE, 0, dtype=torch.float64)
    eps = stream.normal(SHAPE, 1, dtype=torch.float64)
    ends = EndpointCondition.from_latent(x0)
    out = euler_sample(lambda x, t, c, e: eps - x0, None, ends, steps, seed=0, init=eps, dtype=torch.float64)
    assert (out - x0).abs().max() <= 1e-5


def test_zero_field_returns_initial_noise_and_clamping_touches_only_endpoints():
    start, end = torch.full((1, 4, 4), 0.25), torch.full((1, 4, 4), 0.75)
    ends = EndpointCondition.interpolation(start, end, 5)
    zero = lambda x, t, c, e: torch.zeros_like(x)  # noqa: E731
    out = euler_sample(zero, None, ends, 4, seed=3)
    noise = NoiseStream(3).normal((5, 1, 4, 4), 0)
    assert torch.equal(out, noise)

    clamped = euler_sample(zero, None, ends, 4, seed=3, clamp_endpoints=True)
    assert torch.equal(clamped[0], start)
    assert torch.equal(clamped[-1], end)
    assert torch.equal(clamped[1:-1], noise[1:-1])


def test_sampler_reports_non_finite_velocity_with_its_step():
    ends = EndpointCondition.interpolation(torch.zeros(1, 4, 4), torch.zeros(1, 4, 4), 3)
    calls = []

    def field(x, t, c, e):
        calls.append(t)
        return torch.full_like(x, float("nan")) if len(calls) == 2 else torch.zeros_like(x)

    with pytest.raises(NumericError) as err:
        euler_sample(field, None, ends, 4, seed=0)
    assert err.value.context["step"] == 1
    with pytest.raises(ValidationError):
        euler_sample(field, None, ends, 0, seed=0)


def test_endpoint_condition_channels_and_swap():
    start, end = torch.zeros(1, 4, 4), torch.ones(1, 4, 4)
    ends = EndpointCondition.interpolation(start, end, 4)
    assert ends.positions == [0, 3]
    ch = ends.channels()
    assert ch.shape == (4, 3, 4, 4)
    assert ch[:, 2, 0, 0].tolist() == [1.0, 0.0, 0.0, 1.0]
    swapped = ends.swapped()
    assert torch.equal(swapped.start_latent, end) and torch.equal(swapped.end_latent, start)
    with pytest.raises(DimensionError):
        EndpointCondition.interpolation(start, end, 1)


def test_callback_sees_every_step():
    ends = EndpointCondition.interpolation(torch.zeros(1, 2, 2), torch.zeros(1, 2, 2), 2)
    seen = []
    euler_sample(lambda x, t, c, e: torch.zeros_like(x), None, ends, 3, seed=0, callback=lambda k, t, x: seen.append(k))
    assert seen == [0, 1, 2]
    assert np.isclose(time_grid(3)[-1], 1 / 3)
