from dataclasses import replace

import numpy as np
import pytest

from app.core.errors import DomainError, StateError
from app.core.infer import conv1d_block
from app.core.instrument import KernelContext
from app.core.models import default_cnn
from app.core.train import (
    TRACE_FIELDS,
    LayerTrainState,
    SampleBatch,
    bpfree_layer_grad,
    bpfree_layer_loss,
    bpfree_train_epoch,
    prepare_layer,
    save_loss_trace,
)


def _model():
    return default_cnn(seed=0, channels=(2, 3, 3), kernel=3, pools=(2, 2), length=16, hidden=4)


def _batch(rng):
    return SampleBatch(inputs=[rng.standard_normal((2, 16)) for _ in range(4)], labels=[0, 1, 0, 1])


def test_layer_loss_terms():
    assert bpfree_layer_loss([[0.0], [0.0], [3.0]], [0, 0, 1]) == 0.0
    assert bpfree_layer_loss([[0.0], [0.0], [3.0]], [0, 0, 1], margin=5.0) == pytest.approx(4.0)
    assert bpfree_layer_loss([[0.0], [2.0], [10.0]], [0, 0, 1]) == pytest.approx(4.0)
    assert bpfree_layer_loss([[0.0], [0.5]], [0, 1]) == pytest.approx(0.25)


def test_layer_loss_rejects_bad_input():
    with pytest.raises(DomainError):
        bpfree_layer_loss([[1.0]], [0])
    with pytest.raises(DomainError):
        bpfree_layer_loss([[1.0], [2.0]], [0, 1, 1])
    with pytest.raises(DomainError):
        bpfree_layer_loss([[1.0], [2.0]], [0, 1], margin=0.0)


def test_sample_batch_validation(rng):
    with pytest.raises(DomainError):
        SampleBatch(inputs=[np.zeros((2, 16))], labels=[0])
    with pytest.raises(DomainError):
        SampleBatch(inputs=[np.zeros((2, 16)), np.zeros((2, 8))], labels=[0, 1])
    assert _batch(rng).has_pairs
    assert not SampleBatch(inputs=[np.zeros(3), np.zeros(3)], labels=[0, 1]).has_pairs


def test_grad_needs_prepared_layer(rng):
    with pytest.raises(StateError):
        bpfree_layer_grad(LayerTrainState(model=_model(), layer=0), _batch(rng))
    with pytest.raises(DomainError):
        prepare_layer(LayerTrainState(model=_model(), layer=2), _batch(rng))


@pytest.mark.parametrize("layer", [0, 1])
def test_grad_matches_finite_differences(layer, rng):
    model = _model()
    batch = _batch(rng)
    margin = 100.0
    state = prepare_layer(LayerTrainState(model=model, layer=layer, margin=margin), batch)
    grad = bpfree_layer_grad(state, batch)
    block = state.block

    def loss(candidate):
        outputs = np.stack([conv1d_block(x, candidate).reshape(-1) for x in state.layer_inputs])
        return bpfree_layer_loss(outputs, batch.labels, margin)

    eps = 1e-6
    for name, index in (("beta", (1,)), ("gamma", (0,)), ("weight", (1, 0, 2))):
        step = np.zeros_like(getattr(block, name))
        step[index] = eps
        plus = loss(replace(block, **{name: getattr(block, name) + step}))
        minus = loss(replace(block, **{name: getattr(block, name) - step}))
        numeric = (plus - minus) / (2 * eps)
        assert getattr(grad, name)[index] == pytest.approx(numeric, rel=1e-4, abs=1e-4)


@pytest.mark.parametrize("loss_scale", [3.0, 0.25])
def test_grad_follows_loss_scale(loss_scale, rng):
    model = _model()
    batch = _batch(rng)
    plain = prepare_layer(LayerTrainState(model=model, layer=0, margin=10.0), batch)
    scaled = prepare_layer(LayerTrainState(model=model, layer=0, margin=10.0, loss_scale=loss_scale), batch)
    grad = bpfree_layer_grad(plain, batch)
    grad_scaled = bpfree_layer_grad(scaled, batch)
    assert not grad.is_zero()
    for (name, tensor), (scaled_name, scaled_tensor) in zip(grad.tensors(), grad_scaled.tensors()):
        assert scaled_name == name
        np.testing.assert_allclose(scaled_tensor, loss_scale * tensor, rtol=1e-12, atol=1e-15)


def test_train_epoch_descends_per_layer(rng):
    ctx = KernelContext()
    result = bpfree_train_epoch(_model(), _batch(rng), eta=0.01, margin=10.0, ctx=ctx)
    assert [t.layer for t in result.trace] == [0, 1]
    for entry in result.trace:
        assert entry.loss_after <= entry.loss_before
    assert {"train_layer0", "train_layer1"} <= set(ctx.stage_counters)
    assert ctx.counters.fp_mac > 0


def test_train_epoch_layer_order_and_zero_step(rng):
    model = _model()
    result = bpfree_train_epoch(model, _batch(rng), eta=0.0, layer_order=[1])
    assert [t.layer for t in result.trace] == [1]
    assert not result.trace[0].updated
    assert result.model is model
    with pytest.raises(DomainError):
        bpfree_train_epoch(model, _batch(rng), eta=-0.1)


def test_save_loss_trace(tmp_path, rng):
    result = bpfree_train_epoch(_model(), _batch(rng), eta=0.01, margin=10.0)
    path = save_loss_trace(result.trace, tmp_path / "trace.csv")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == ",".join(TRACE_FIELDS)
    assert len(lines) == 3
