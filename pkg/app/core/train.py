"""Backpropagation-free per-layer training of the 1D CNN.

Each conv block is trained on its own: a contrastive loss pulls the
flattened block outputs of same-class samples together and pushes
different-class outputs at least ``margin`` apart. Upstream blocks are
frozen and their outputs cached; batchnorm stays in inference form.
"""

import math
from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.errors import DomainError, NumericError, StateError
from app.core.infer import Cnn1dModel, ConvBlock, ConvCache, conv1d_block_forward
from app.core.instrument import KernelContext, ensure_context
from app.core.logger import logger
from app.core.storage import write_csv

TRACE_FIELDS = ["layer", "loss_before", "loss_after", "eta", "backoff_steps", "updated"]


@dataclass
class SampleBatch:
    inputs: List[np.ndarray]
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = [np.asarray(x, dtype=np.float64) for x in self.inputs]
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(self.inputs) < 2:
            raise DomainError("a training batch needs at least 2 samples")
        if len(self.inputs) != len(self.labels):
            raise DomainError("one label per sample")
        if len({x.shape for x in self.inputs}) != 1:
            raise DomainError("all samples must share one shape")

    @property
    def has_pairs(self) -> bool:
        """At least one same-class and one different-class pair."""
        _, counts = np.unique(self.labels, return_counts=True)
        return len(counts) >= 2 and bool(np.any(counts >= 2))


@dataclass
class LayerTrainState:
    model: Cnn1dModel
    layer: int
    margin: float = 1.0
    eta: float = 1e-3
    loss_scale: float = 1.0
    layer_inputs: Optional[List[np.ndarray]] = None
    caches: Optional[List[ConvCache]] = None
    outputs: Optional[np.ndarray] = None

    @property
    def block(self) -> ConvBlock:
        return self.model.blocks[self.layer]


@dataclass
class LayerGradient:
    weight: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray

    def tensors(self) -> Tuple[Tuple[str, np.ndarray], ...]:
        return (("weight", self.weight), ("gamma", self.gamma), ("beta", self.beta))

    def is_zero(self) -> bool:
        return all(not np.any(t) for _, t in self.tensors())


@dataclass
class LayerTrace:
    layer: int
    loss_before: float
    loss_after: float
    eta: float
    backoff_steps: int = 0
    updated: bool = False


@dataclass
class TrainResult:
    model: Cnn1dModel
    trace: List[LayerTrace] = field(default_factory=list)


def _pairs(labels: np.ndarray) -> Tuple[List[Tuple[int, int]], List[Tuple[int, int]]]:
    same, diff = [], []
    for i, j in combinations(range(len(labels)), 2):
        (same if labels[i] == labels[j] else diff).append((i, j))
    return same, diff


def _loss_and_output_grad(outputs: np.ndarray, labels: np.ndarray, margin: float) -> Tuple[float, np.ndarray]:
    same, diff = _pairs(labels)
    grad = np.zeros_like(outputs)
    loss = 0.0
    if same:
        for i, j in same:
            delta = outputs[i] - outputs[j]
            loss += float(delta @ delta) / len(same)
            grad[i] += 2.0 * delta / len(same)
            grad[j] -= 2.0 * delta / len(same)
    if diff:
        for i, j in diff:
            delta = outputs[i] - outputs[j]
            d = math.sqrt(float(delta @ delta))
            gap = margin - d
            if gap > 0:
                loss += gap * gap / len(diff)
                if d > 0:
                    g = -2.0 * gap * delta / (d * len(diff))
                    grad[i] += g
                    grad[j] -= g
    return loss, grad


def bpfree_layer_loss(outputs, labels, margin: float = 1.0) -> float:
    """Mean squared intra-class distance plus mean squared hinge on inter-class distance.

    A group without pairs contributes 0.
    """
    outputs = np.asarray(outputs, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    if outputs.shape[0] < 2:
        raise DomainError("the loss needs at least 2 samples")
    if outputs.shape[0] != labels.shape[0]:
        raise DomainError("one label per output")
    if margin <= 0:
        raise DomainError("margin must be positive")
    return _loss_and_output_grad(outputs.reshape(outputs.shape[0], -1), labels, margin)[0]


def prepare_layer(state: LayerTrainState, batch: SampleBatch, ctx: Optional[KernelContext] = None) -> LayerTrainState:
    """Run the frozen upstream blocks once and cache the current block's forward pass."""
    ctx = ensure_context(ctx)
    if not 0 <= state.layer < len(state.model.blocks):
        raise DomainError(f"layer {state.layer} outside [0, {len(state.model.blocks)})")
    inputs = []
    for x in batch.inputs:
        out = x
        for block in state.model.blocks[: state.layer]:
            out = conv1d_block_forward(out, block, ctx)[0]
        inputs.append(out)
    state.layer_inputs = inputs
    _forward_current(state, state.block, ctx)
    return state


def _forward_current(state: LayerTrainState, block: ConvBlock, ctx: KernelContext) -> None:
    results = [conv1d_block_forward(x, block, ctx) for x in state.layer_inputs]
    state.caches = [cache for _, cache in results]
    state.outputs = np.stack([out.reshape(-1) for out, _ in results])


def _outputs_for(block: ConvBlock, inputs: Sequence[np.ndarray], ctx: KernelContext) -> np.ndarray:
    return np.stack([conv1d_block_forward(x, block, ctx)[0].reshape(-1) for x in inputs])


def bpfree_layer_grad(state: LayerTrainState, batch: SampleBatch,
                      ctx: Optional[KernelContext] = None) -> LayerGradient:
    """Analytic gradient of the layer loss w.r.t. the block's conv weights, gamma and beta.

    Max-pool routes gradient to the cached argmax, ReLU passes it where the
    pre-activation is positive, batchnorm uses its frozen statistics.
    """
    ctx = ensure_context(ctx)
    if state.caches is None or state.outputs is None:
        raise StateError("layer forward pass not cached; call prepare_layer first")
    block = state.block
    _, grad_out = _loss_and_output_grad(state.outputs, batch.labels, state.margin)

    inv_std = 1.0 / np.sqrt(block.var + block.eps)
    d_weight = np.zeros_like(block.weight)
    d_gamma = np.zeros_like(block.gamma)
    d_beta = np.zeros_like(block.beta)
    for cache, g in zip(state.caches, grad_out):
        channels, conv_len = cache.u.shape
        pooled_len = cache.pool_index.shape[1]
        g_pooled = g.reshape(channels, pooled_len)
        g_relu = np.zeros((channels, conv_len))
        positions = np.arange(pooled_len)[None, :] * block.pool + cache.pool_index
        np.put_along_axis(g_relu, positions, g_pooled, axis=1)
        g_u = g_relu * (cache.u > 0)
        d_gamma += (g_u * cache.xhat).sum(axis=1)
        d_beta += g_u.sum(axis=1)
        g_z = g_u * (block.gamma * inv_std)[:, None]
        windows = np.lib.stride_tricks.sliding_window_view(cache.x, block.kernel_size, axis=1)
        d_weight += np.einsum("ot,ctk->ock", g_z, windows)
        ctx.mac(block.weight.size * conv_len, "fp32")
        ctx.mul(3 * g_u.size, "fp32")
        ctx.branch(g_u.size)
    scale = state.loss_scale
    return LayerGradient(weight=d_weight * scale, gamma=d_gamma * scale, beta=d_beta * scale)


def _stepped(block: ConvBlock, grad: LayerGradient, eta: float) -> ConvBlock:
    return replace(block, weight=block.weight - eta * grad.weight, gamma=block.gamma - eta * grad.gamma,
                   beta=block.beta - eta * grad.beta)


def _with_block(model: Cnn1dModel, layer: int, block: ConvBlock) -> Cnn1dModel:
    blocks = list(model.blocks)
    blocks[layer] = block
    return replace(model, blocks=tuple(blocks), quantization=None, arithmetic="fp32")


def bpfree_train_epoch(model: Cnn1dModel, batch: SampleBatch, eta: float, layer_order: Optional[Sequence[int]] = None,
                       margin: float = 1.0, max_backoff: int = 8,
                       ctx: Optional[KernelContext] = None) -> TrainResult:
    """One gradient step per conv block, blocks visited input to output by default.

    A step that raises the layer loss is retried with eta halved, at most
    ``max_backoff`` times; after that the layer is left unchanged.
    """
    ctx = ensure_context(ctx)
    if eta < 0 or not math.isfinite(eta):
        raise DomainError("learning rate must be a finite non-negative number")
    order = list(range(len(model.blocks))) if layer_order is None else list(layer_order)
    trace: List[LayerTrace] = []
    current = model

    for layer in order:
        with ctx.stage(f"train_layer{layer}"):
            state = prepare_layer(LayerTrainState(model=current, layer=layer, margin=margin, eta=eta), batch, ctx)
            before = bpfree_layer_loss(state.outputs, batch.labels, margin)
            if not math.isfinite(before):
                raise NumericError(f"non-finite loss at layer {layer}")
            entry = LayerTrace(layer=layer, loss_before=before, loss_after=before, eta=eta)
            if eta > 0:
                grad = bpfree_layer_grad(state, batch, ctx)
                for attempt in range(max_backoff + 1):
                    step = eta / (2 ** attempt)
                    candidate = _stepped(state.block, grad, step)
                    after = bpfree_layer_loss(_outputs_for(candidate, state.layer_inputs, ctx), batch.labels, margin)
                    if math.isfinite(after) and after <= before:
                        current = _with_block(current, layer, candidate)
                        entry.loss_after, entry.eta, entry.backoff_steps, entry.updated = after, step, attempt, True
                        break
                else:
                    entry.backoff_steps = max_backoff
                    logger.warning(f"Layer {layer}: no descent after {max_backoff} halvings, layer kept")
            trace.append(entry)
            logger.debug(f"Layer {layer}: loss {entry.loss_before:.6g} -> {entry.loss_after:.6g}")
    return TrainResult(model=current, trace=trace)


def save_loss_trace(trace: Sequence[LayerTrace], path: Union[str, Path]) -> Path:
    rows = [
        {
            "layer": t.layer,
            "loss_before": repr(t.loss_before),
            "loss_after": repr(t.loss_after),
            "eta": repr(t.eta),
            "backoff_steps": t.backoff_steps,
            "updated": str(t.updated).lower(),
        }
        for t in trace
    ]
    return write_csv(rows, path, TRACE_FIELDS)
