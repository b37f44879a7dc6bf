"""Inference kernels: SVM, random forest, KNN, MLP, 1D CNN, FastICA and a fuzzy beat classifier."""

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np

from app.core.dsp import BeatFiducials
from app.core.errors import DomainError, NumericError, StateError
from app.core.fxp import Q15, block_exponent, saturate_array, to_fixed
from app.core.instrument import KernelContext, ensure_context
from app.core.logger import logger

Activation = Literal["relu", "none", "softmax"]

# Relative gap under which two distances count as equal
TIE_RTOL = 1e-9


def _frozen_array(value, dtype=np.float64) -> np.ndarray:
    arr = np.array(value, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _set(obj, name: str, value) -> None:
    object.__setattr__(obj, name, value)


# ---------------------------------------------------------------- SVM

@dataclass(frozen=True)
class SvmModel:
    kernel: Literal["linear", "rbf"]
    support_vectors: np.ndarray
    dual_coef: np.ndarray
    bias: float
    gamma: float = 1.0
    feature_mean: Optional[np.ndarray] = None
    feature_std: Optional[np.ndarray] = None

    def __post_init__(self):
        sv = _frozen_array(self.support_vectors)
        if sv.ndim == 1:
            sv = _frozen_array(sv.reshape(1, -1))
        coef = _frozen_array(self.dual_coef).reshape(-1)
        if sv.ndim != 2 or sv.shape[0] != coef.shape[0]:
            raise DomainError(f"{sv.shape[0]} support vectors but {coef.shape[0]} dual coefficients")
        if not (np.all(np.isfinite(coef)) and np.all(np.isfinite(sv)) and math.isfinite(self.bias)):
            raise DomainError("SVM parameters must be finite")
        if self.kernel not in ("linear", "rbf"):
            raise DomainError(f"unknown SVM kernel: {self.kernel}")
        _set(self, "support_vectors", _frozen_array(sv))
        _set(self, "dual_coef", coef)
        for name in ("feature_mean", "feature_std"):
            value = getattr(self, name)
            if value is not None:
                value = _frozen_array(value).reshape(-1)
                if value.shape[0] != sv.shape[1]:
                    raise DomainError(f"{name} has {value.shape[0]} entries, model has {sv.shape[1]} features")
                _set(self, name, value)

    @property
    def n_features(self) -> int:
        return self.support_vectors.shape[1]

    @classmethod
    def linear(cls, weights: Sequence[float], bias: float = 0.0) -> "SvmModel":
        """Primal linear model expressed as one support vector with unit coefficient."""
        return cls(kernel="linear", support_vectors=[list(weights)], dual_coef=[1.0], bias=bias)


@dataclass(frozen=True)
class SvmDecision:
    score: float
    label: int


def svm_predict(model: SvmModel, x, ctx: Optional[KernelContext] = None) -> SvmDecision:
    """score = sum_i alpha_i y_i K(s_i, x) + b; a zero score is the negative class."""
    ctx = ensure_context(ctx)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != model.n_features:
        raise DomainError(f"feature vector has {x.shape[0]} entries, model expects {model.n_features}")
    if model.feature_mean is not None:
        std = model.feature_std if model.feature_std is not None else np.ones_like(x)
        x = (x - model.feature_mean) / np.where(std > 0, std, 1.0)
        ctx.mul(len(x))

    m, d = model.support_vectors.shape
    if model.kernel == "linear":
        k = model.support_vectors @ x
    else:
        diff = model.support_vectors - x
        k = np.exp(-model.gamma * np.einsum("ij,ij->i", diff, diff))
        ctx.transcendental(m)
    ctx.mac(m * d + m)
    ctx.mem(m * d)
    score = float(model.dual_coef @ k + model.bias)
    return SvmDecision(score=score, label=1 if score > 0 else -1)


# ---------------------------------------------------------------- random forest

@dataclass(frozen=True)
class DecisionTree:
    """Array-encoded binary tree; ``feature == -1`` marks a leaf.

    ``value[i]`` is the class distribution (negative, positive) of node i.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def __post_init__(self):
        feature = _frozen_array(self.feature, np.int64)
        n = feature.shape[0]
        arrays = {
            "threshold": _frozen_array(self.threshold),
            "left": _frozen_array(self.left, np.int64),
            "right": _frozen_array(self.right, np.int64),
            "value": _frozen_array(self.value).reshape(n, -1) if n else _frozen_array(self.value),
        }
        if n == 0:
            raise DomainError("a tree needs at least one node")
        for name in ("threshold", "left", "right"):
            if arrays[name].shape[0] != n:
                raise DomainError(f"tree array {name} has {arrays[name].shape[0]} entries, expected {n}")
        for i in range(n):
            if feature[i] >= 0:
                for child in (arrays["left"][i], arrays["right"][i]):
                    if not 0 < child < n:
                        raise DomainError(f"internal node {i} has invalid child {child}")
            elif abs(arrays["value"][i].sum() - 1.0) > 1e-9:
                raise DomainError(f"leaf {i} distribution sums to {arrays['value'][i].sum()}")
        _set(self, "feature", feature)
        for name, value in arrays.items():
            _set(self, name, value)

    @property
    def max_feature(self) -> int:
        return int(self.feature.max())

    @classmethod
    def leaf(cls, p_positive: float) -> "DecisionTree":
        return cls(feature=[-1], threshold=[0.0], left=[-1], right=[-1], value=[[1.0 - p_positive, p_positive]])

    def leaf_for(self, x: np.ndarray, ctx: KernelContext) -> int:
        node = 0
        depth = 0
        while self.feature[node] >= 0:
            node = self.left[node] if x[self.feature[node]] <= self.threshold[node] else self.right[node]
            depth += 1
        ctx.branch(depth + 1)
        ctx.mem(2 * depth + 1)
        return int(node)


@dataclass(frozen=True)
class ForestModel:
    trees: Tuple[DecisionTree, ...]

    def __post_init__(self):
        if not self.trees:
            raise DomainError("a forest needs at least one tree")
        _set(self, "trees", tuple(self.trees))

    @property
    def max_feature(self) -> int:
        return max(t.max_feature for t in self.trees)


@dataclass(frozen=True)
class ForestDecision:
    probability: float
    label: int


def forest_predict(model: ForestModel, x, ctx: Optional[KernelContext] = None) -> ForestDecision:
    """Mean positive-class leaf probability; the class threshold is 0.5 with ties negative."""
    ctx = ensure_context(ctx)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if model.max_feature >= len(x):
        raise DomainError(f"forest reads feature {model.max_feature}, vector has {len(x)}")
    total = 0.0
    for tree in model.trees:
        total += float(tree.value[tree.leaf_for(x, ctx)][-1])
    probability = total / len(model.trees)
    ctx.mul(1)
    return ForestDecision(probability=probability, label=1 if probability > 0.5 else 0)


# ---------------------------------------------------------------- KNN

def partial_select_k(distances, k: int, ctx: Optional[KernelContext] = None) -> Tuple[np.ndarray, np.ndarray]:
    """k steps of selection sort: the k smallest values with their original indices.

    Values within TIE_RTOL of the current minimum count as equal and are taken
    in order of their original index.
    """
    ctx = ensure_context(ctx)
    values = np.array(distances, dtype=np.float64).reshape(-1)
    n = len(values)
    if not 1 <= k <= n:
        raise DomainError(f"k={k} outside [1, {n}]")
    index = np.arange(n)
    for i in range(k):
        rest = values[i:]
        lowest = rest.min()
        ties = np.flatnonzero(rest <= lowest + TIE_RTOL * abs(lowest))
        j = i + int(ties[np.argmin(index[i + ties])])
        values[i], values[j] = values[j], values[i]
        index[i], index[j] = index[j], index[i]
        ctx.branch(n - i)
        ctx.mem(2)
    return values[:k].copy(), index[:k].copy()


@dataclass(frozen=True)
class KnnTrainingSet:
    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        points = _frozen_array(self.points)
        labels = _frozen_array(self.labels, np.int64).reshape(-1)
        if points.ndim != 2 or points.shape[0] < 1:
            raise DomainError("training set needs at least one point")
        if points.shape[0] != labels.shape[0]:
            raise DomainError("one label per training point")
        if not np.all(np.isin(labels, (0, 1))):
            raise DomainError("labels must be binary (1 = fear)")
        _set(self, "points", points)
        _set(self, "labels", labels)

    @property
    def k(self) -> int:
        return max(1, math.isqrt(self.points.shape[0]))


@dataclass(frozen=True)
class KnnDecision:
    fear_fraction: float
    fear: bool
    k: int


def knn_fear_predict(train: KnnTrainingSet, x, ctx: Optional[KernelContext] = None) -> KnnDecision:
    """Fraction of fear labels among the floor(sqrt(n)) nearest points; fear iff > 0.5.

    Squared Euclidean distances are ranked; their order equals the Euclidean order.
    """
    ctx = ensure_context(ctx)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise DomainError("query features must be finite")
    if x.shape[0] != train.points.shape[1]:
        raise DomainError(f"query has {x.shape[0]} features, training points have {train.points.shape[1]}")
    diff = train.points - x
    distances = np.einsum("ij,ij->i", diff, diff)
    ctx.mac(diff.size)
    ctx.mem(diff.size)
    _, nearest = partial_select_k(distances, train.k, ctx)
    fraction = float(train.labels[nearest].mean())
    return KnnDecision(fear_fraction=fraction, fear=fraction > 0.5, k=train.k)


# ---------------------------------------------------------------- MLP

@dataclass(frozen=True)
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: Activation = "none"

    def __post_init__(self):
        weights = _frozen_array(self.weights)
        bias = _frozen_array(self.bias).reshape(-1)
        if weights.ndim != 2 or weights.shape[0] != bias.shape[0]:
            raise DomainError(f"dense weights {weights.shape} do not match bias {bias.shape}")
        if self.activation not in ("relu", "none", "softmax"):
            raise DomainError(f"unknown activation: {self.activation}")
        _set(self, "weights", weights)
        _set(self, "bias", bias)

    @property
    def in_features(self) -> int:
        return self.weights.shape[1]

    @property
    def out_features(self) -> int:
        return self.weights.shape[0]


def _activate(z: np.ndarray, activation: str, ctx: KernelContext) -> np.ndarray:
    if activation == "relu":
        ctx.branch(z.size)
        return np.maximum(z, 0.0)
    if activation == "softmax":
        ctx.transcendental(z.size)
        e = np.exp(z - z.max())
        return e / e.sum()
    return z


def mlp_forward(layers: Sequence[DenseLayer], x, ctx: Optional[KernelContext] = None) -> np.ndarray:
    ctx = ensure_context(ctx)
    out = np.asarray(x, dtype=np.float64).reshape(-1)
    for i, layer in enumerate(layers):
        if out.shape[0] != layer.in_features:
            raise DomainError(f"layer {i} expects {layer.in_features} inputs, got {out.shape[0]}")
        out = _activate(layer.weights @ out + layer.bias, layer.activation, ctx)
        ctx.mac(layer.weights.size)
        ctx.mem(layer.weights.size)
    return out


# ---------------------------------------------------------------- 1D CNN

@dataclass(frozen=True)
class ConvBlock:
    """Valid conv -> inference batchnorm -> ReLU -> max-pool (trailing remainder dropped)."""

    weight: np.ndarray
    bias: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    pool: int = 1
    eps: float = 1e-5

    def __post_init__(self):
        weight = _frozen_array(self.weight)
        if weight.ndim != 3:
            raise DomainError("conv weight must be (out_channels, in_channels, kernel)")
        out = weight.shape[0]
        vectors = {}
        for name in ("bias", "gamma", "beta", "mean", "var"):
            vec = _frozen_array(getattr(self, name)).reshape(-1)
            if vec.shape[0] != out:
                raise DomainError(f"{name} has {vec.shape[0]} entries, block has {out} output channels")
            vectors[name] = vec
        if np.any(vectors["var"] <= 0):
            raise DomainError("batchnorm variance must be positive")
        if self.pool < 1:
            raise DomainError("pool width must be >= 1")
        _set(self, "weight", weight)
        for name, vec in vectors.items():
            _set(self, name, vec)

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[2]

    @property
    def bn_scale(self) -> np.ndarray:
        return self.gamma / np.sqrt(self.var + self.eps)

    def conv_length(self, length: int) -> int:
        conv = length - self.kernel_size + 1
        if conv < 1:
            raise DomainError(f"kernel {self.kernel_size} does not fit input length {length}")
        return conv

    def output_length(self, length: int) -> int:
        pooled = self.conv_length(length) // self.pool
        if pooled < 1:
            raise DomainError(f"pool {self.pool} wider than conv output")
        return pooled

    def folded(self) -> Tuple[np.ndarray, np.ndarray]:
        """Weights and bias with the batchnorm transform folded in."""
        scale = self.bn_scale
        return self.weight * scale[:, None, None], (self.bias - self.mean) * scale + self.beta


@dataclass
class ConvCache:
    x: np.ndarray
    xhat: np.ndarray
    u: np.ndarray
    pool_index: np.ndarray


def _conv_valid(x: np.ndarray, weight: np.ndarray) -> np.ndarray:
    windows = np.lib.stride_tricks.sliding_window_view(x, weight.shape[2], axis=1)
    return np.einsum("ock,clk->ol", weight, windows)


def _max_pool(a: np.ndarray, pool: int) -> Tuple[np.ndarray, np.ndarray]:
    out_len = a.shape[1] // pool
    groups = a[:, : out_len * pool].reshape(a.shape[0], out_len, pool)
    arg = np.argmax(groups, axis=2)
    return np.take_along_axis(groups, arg[..., None], axis=2)[..., 0], arg


def _check_block_input(x: np.ndarray, block: ConvBlock) -> None:
    if x.ndim != 2 or x.shape[0] != block.in_channels:
        raise DomainError(f"block expects {block.in_channels} input channels, got shape {x.shape}")
    block.output_length(x.shape[1])


def conv1d_block_forward(x, block: ConvBlock, ctx: Optional[KernelContext] = None) -> Tuple[np.ndarray, ConvCache]:
    """Floating-point block forward that keeps what the per-layer gradient needs."""
    ctx = ensure_context(ctx)
    x = np.asarray(x, dtype=np.float64)
    _check_block_input(x, block)
    z = _conv_valid(x, block.weight) + block.bias[:, None]
    xhat = (z - block.mean[:, None]) / np.sqrt(block.var + block.eps)[:, None]
    u = block.gamma[:, None] * xhat + block.beta[:, None]
    pooled, arg = _max_pool(np.maximum(u, 0.0), block.pool)
    ctx.mac(block.weight.size * z.shape[1], "fp32")
    ctx.mul(2 * z.size, "fp32")
    ctx.branch(2 * z.size)
    ctx.mem(x.size + pooled.size)
    return pooled, ConvCache(x=x, xhat=xhat, u=u, pool_index=arg)


def conv1d_block(x, block: ConvBlock, ctx: Optional[KernelContext] = None) -> np.ndarray:
    return conv1d_block_forward(x, block, ctx)[0]


@dataclass(frozen=True)
class QuantizedLayer:
    """Q15 weights with exponent ``weight_exp``: real = raw * 2**(weight_exp - 15).

    Activations entering the layer use ``in_exp``, leaving it ``out_exp``; the
    accumulator (products plus ``bias_acc``) is shifted right by ``shift``.
    """

    weight_raw: np.ndarray
    bias_acc: np.ndarray
    weight_exp: int
    in_exp: int
    out_exp: int

    @property
    def shift(self) -> int:
        return 15 + self.out_exp - self.in_exp - self.weight_exp


@dataclass(frozen=True)
class CnnQuantization:
    input_exp: int
    layers: Tuple[QuantizedLayer, ...]


@dataclass(frozen=True)
class Cnn1dModel:
    blocks: Tuple[ConvBlock, ...]
    dense: Tuple[DenseLayer, ...]
    input_shape: Tuple[int, int]
    arithmetic: Literal["fp32", "q15"] = "fp32"
    quantization: Optional[CnnQuantization] = None

    def __post_init__(self):
        _set(self, "blocks", tuple(self.blocks))
        _set(self, "dense", tuple(self.dense))
        _set(self, "input_shape", tuple(int(v) for v in self.input_shape))
        if not self.blocks or not self.dense:
            raise DomainError("a CNN needs conv blocks and dense layers")
        channels, length = self.input_shape
        for i, block in enumerate(self.blocks):
            if block.in_channels != channels:
                raise DomainError(f"block {i} expects {block.in_channels} channels, previous layer gives {channels}")
            length = block.output_length(length)
            channels = block.out_channels
        width = channels * length
        for i, layer in enumerate(self.dense):
            if layer.in_features != width:
                raise DomainError(f"dense layer {i} expects {layer.in_features} inputs, previous layer gives {width}")
            width = layer.out_features
        if self.arithmetic not in ("fp32", "q15"):
            raise DomainError(f"unknown CNN arithmetic: {self.arithmetic}")

    @property
    def n_classes(self) -> int:
        return self.dense[-1].out_features

    def layer_lengths(self) -> List[int]:
        lengths = [self.input_shape[1]]
        for block in self.blocks:
            lengths.append(block.output_length(lengths[-1]))
        return lengths

    def parameter_count(self) -> int:
        count = 0
        for block in self.blocks:
            count += block.weight.size + 5 * block.out_channels
        for layer in self.dense:
            count += layer.weights.size + layer.bias.size
        return count


def _cnn_forward_float(model: Cnn1dModel, x: np.ndarray, ctx: KernelContext,
                       observe: Optional[List[float]] = None) -> np.ndarray:
    out = x
    for block in model.blocks:
        out, cache = conv1d_block_forward(out, block, ctx)
        if observe is not None:
            observe.append(float(np.max(np.abs(cache.u))))
    out = out.reshape(-1)
    for layer in model.dense:
        z = layer.weights @ out + layer.bias
        if observe is not None:
            observe.append(float(np.max(np.abs(z))))
        out = _activate(z, "relu" if layer.activation == "relu" else "none", ctx)
        ctx.mac(layer.weights.size, "fp32")
    return out


def _cnn_forward_q15(model: Cnn1dModel, x: np.ndarray, ctx: KernelContext) -> np.ndarray:
    quant = model.quantization
    raw, _ = to_fixed(x * 2.0 ** (-quant.input_exp), Q15)
    for block, layer in zip(model.blocks, quant.layers):
        acc = _conv_valid(raw, layer.weight_raw) + layer.bias_acc[:, None]
        y, _ = saturate_array(_shift(acc, layer.shift), 16)
        raw, _ = _max_pool(np.maximum(y, 0), block.pool)
        ctx.mac(layer.weight_raw.size * acc.shape[1], "fxp16")
        ctx.branch(2 * acc.size)
        ctx.mem(acc.size)
    raw = raw.reshape(-1)
    for dense, layer in zip(model.dense, quant.layers[len(model.blocks):]):
        acc = layer.weight_raw @ raw + layer.bias_acc
        raw, _ = saturate_array(_shift(acc, layer.shift), 16)
        if dense.activation == "relu":
            raw = np.maximum(raw, 0)
            ctx.branch(raw.size)
        ctx.mac(layer.weight_raw.size, "fxp16")
    return raw.astype(np.float64) * 2.0 ** (quant.layers[-1].out_exp - 15)


def _shift(acc: np.ndarray, shift: int) -> np.ndarray:
    # truncating arithmetic shift, as q_finalize
    return acc >> shift if shift >= 0 else acc << (-shift)


def cnn_forward(model: Cnn1dModel, x, ctx: Optional[KernelContext] = None,
                arithmetic: Optional[str] = None) -> np.ndarray:
    """Class scores (softmax is not applied; argmax ties resolve to index 0)."""
    ctx = ensure_context(ctx)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.input_shape:
        raise DomainError(f"CNN expects input shape {model.input_shape}, got {x.shape}")
    arithmetic = arithmetic or model.arithmetic
    if arithmetic == "q15":
        if model.quantization is None:
            raise StateError("q15 inference needs a calibrated model (calibrate_q15)")
        return _cnn_forward_q15(model, x, ctx)
    return _cnn_forward_float(model, x, ctx)


def _output_exponent(peak: float, headroom: float) -> int:
    if peak <= 0:
        return 0
    return int(math.ceil(math.log2(peak * headroom)))


def calibrate_q15(model: Cnn1dModel, inputs: Sequence[np.ndarray], headroom: float = 2.0) -> Cnn1dModel:
    """Derive Q15 weights and per-layer shifts from observed floating-point ranges.

    Batchnorm is folded into the conv weights; every activation tensor gets a
    power-of-two exponent large enough for ``headroom`` x its observed peak.
    """
    if not inputs:
        raise DomainError("calibration needs at least one input")
    peaks: Optional[np.ndarray] = None
    input_peak = 0.0
    scratch = KernelContext()
    for x in inputs:
        x = np.asarray(x, dtype=np.float64)
        input_peak = max(input_peak, float(np.max(np.abs(x))))
        observed: List[float] = []
        _cnn_forward_float(model, x, scratch, observe=observed)
        peaks = np.array(observed) if peaks is None else np.maximum(peaks, observed)

    input_exp = block_exponent(np.array([input_peak]))
    in_exp = input_exp
    layers = []
    params = [block.folded() for block in model.blocks] + [(d.weights, d.bias) for d in model.dense]
    for (weight, bias), peak in zip(params, peaks):
        weight_exp = block_exponent(weight)
        weight_raw, _ = to_fixed(weight * 2.0 ** (-weight_exp), Q15)
        bias_acc = np.floor(bias * 2.0 ** (30 - weight_exp - in_exp) + 0.5).astype(np.int64)
        out_exp = _output_exponent(float(peak), headroom)
        layers.append(QuantizedLayer(weight_raw=weight_raw, bias_acc=bias_acc, weight_exp=weight_exp,
                                     in_exp=in_exp, out_exp=out_exp))
        in_exp = out_exp
    logger.debug(f"Calibrated q15 CNN: input exponent {input_exp}, output exponents {[l.out_exp for l in layers]}")
    return replace(model, arithmetic="q15", quantization=CnnQuantization(input_exp=input_exp, layers=tuple(layers)))


# ---------------------------------------------------------------- FastICA

@dataclass(frozen=True)
class IcaResult:
    unmixing: np.ndarray
    sources: np.ndarray
    mean: np.ndarray
    converged: bool
    n_iter: int


def _sym_decorrelate(w: np.ndarray) -> np.ndarray:
    s, u = np.linalg.eigh(w @ w.T)
    s = np.clip(s, np.finfo(np.float64).tiny, None)
    return (u * (1.0 / np.sqrt(s))) @ u.T @ w


def fastica_unmix(X, n_components: int, max_iter: int = 200, tol: float = 1e-4, seed: int = 0,
                  ctx: Optional[KernelContext] = None) -> IcaResult:
    """Symmetric FastICA with the tanh contrast on PCA-whitened data."""
    ctx = ensure_context(ctx)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DomainError("X must be channels x samples")
    channels, samples = X.shape
    if not 1 <= n_components <= channels:
        raise DomainError(f"n_components {n_components} outside [1, {channels}]")
    if samples <= channels:
        raise DomainError("need more samples than channels")

    mean = X.mean(axis=1)
    Xc = X - mean[:, None]
    cov = Xc @ Xc.T / samples
    ctx.mac(channels * channels * samples)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:n_components]
    top = eigvals[order]
    if top[-1] <= 1e-12 * max(float(eigvals.max()), 1e-300):
        raise NumericError("covariance is singular in the requested subspace")
    whitening = (eigvecs[:, order] / np.sqrt(top)).T
    Z = whitening @ Xc
    ctx.mac(n_components * channels * samples)

    rng = np.random.default_rng(seed)
    W = _sym_decorrelate(rng.standard_normal((n_components, n_components)))
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        g = np.tanh(W @ Z)
        g_prime = 1.0 - g ** 2
        W_new = _sym_decorrelate(g @ Z.T / samples - g_prime.mean(axis=1)[:, None] * W)
        ctx.mac(2 * n_components * n_components * samples)
        ctx.transcendental(n_components * samples)
        limit = float(np.max(np.abs(np.abs(np.einsum("ij,ij->i", W_new, W)) - 1.0)))
        W = W_new
        if limit < tol:
            converged = True
            break
    if not converged:
        logger.warning(f"FastICA did not converge in {max_iter} iterations")

    unmixing = W @ whitening
    sources = unmixing @ Xc
    ctx.mac(n_components * channels * samples)
    return IcaResult(unmixing=unmixing, sources=sources, mean=mean, converged=converged, n_iter=iteration)


# ---------------------------------------------------------------- fuzzy beat classifier

@dataclass(frozen=True)
class Trapezoid:
    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        if not self.a <= self.b <= self.c <= self.d:
            raise DomainError(f"trapezoid corners must be ordered: {(self.a, self.b, self.c, self.d)}")

    def membership(self, v: float) -> float:
        if self.b <= v <= self.c:
            return 1.0
        if v <= self.a or v >= self.d:
            return 0.0
        if v < self.b:
            return (v - self.a) / (self.b - self.a)
        return (self.d - v) / (self.d - self.c)


@dataclass(frozen=True)
class FuzzyRule:
    label: str
    memberships: Dict[str, Trapezoid] = field(default_factory=dict)


@dataclass(frozen=True)
class FuzzyDecision:
    label: str
    strengths: Dict[str, float]
    rule_strengths: Tuple[float, ...]


DEFAULT_RULES: Tuple[FuzzyRule, ...] = (
    FuzzyRule("normal", {"rr_ratio": Trapezoid(0.8, 0.9, 1.1, 1.2)}),
    FuzzyRule("abnormal", {"rr_ratio": Trapezoid(1.25, 1.5, 10.0, 10.0)}),
    FuzzyRule("abnormal", {"rr_ratio": Trapezoid(0.0, 0.0, 0.7, 0.8)}),
)


def rp_features(beat: BeatFiducials) -> Dict[str, float]:
    """Inter-fiducial intervals normalized by the reference RR."""
    if beat.r is None:
        raise DomainError("beat has no R peak")
    norm = beat.reference_rr or beat.rr_samples
    if not norm:
        raise DomainError("beat has no RR interval to normalize by")
    features = {}
    if beat.rr_samples is not None:
        features["rr_ratio"] = beat.rr_samples / norm
    if beat.p is not None:
        features["pr"] = (beat.r - beat.p) / norm
    if beat.q is not None and beat.s is not None:
        features["qrs"] = (beat.s - beat.q) / norm
    if beat.q is not None and beat.t is not None:
        features["qt"] = (beat.t - beat.q) / norm
    return features


def rp_classify(fiducials: BeatFiducials, rules: Optional[Sequence[FuzzyRule]] = None,
                ctx: Optional[KernelContext] = None) -> FuzzyDecision:
    """Max-min inference over trapezoidal rules; no firing rule means "normal"."""
    ctx = ensure_context(ctx)
    features = rp_features(fiducials)
    rules = DEFAULT_RULES if rules is None else tuple(rules)
    rule_strengths = []
    strengths: Dict[str, float] = {}
    for rule in rules:
        if rule.memberships and all(name in features for name in rule.memberships):
            strength = min(fn.membership(features[name]) for name, fn in rule.memberships.items())
        else:
            strength = 0.0
        rule_strengths.append(strength)
        strengths[rule.label] = max(strengths.get(rule.label, 0.0), strength)
        ctx.branch(4 * max(1, len(rule.memberships)))
    label = "normal"
    best = 0.0
    for rule, strength in zip(rules, rule_strengths):
        if strength > best:
            best, label = strength, rule.label
    return FuzzyDecision(label=label, strengths=strengths, rule_strengths=tuple(rule_strengths))
