"""Model files and seeded default models.

Arrays are stored as ``{"shape": [...], "data": [...]}`` so every file carries
explicit shapes; q15 CNN models also store raw integers and their Q format.
"""

import math
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np

from app.core.errors import ConfigError, DomainError, FormatError
from app.core.fxp import Q15
from app.core.infer import (
    Cnn1dModel,
    CnnQuantization,
    ConvBlock,
    DecisionTree,
    DenseLayer,
    ForestModel,
    KnnTrainingSet,
    QuantizedLayer,
    SvmModel,
)
from app.core.logger import logger
from app.core.storage import storage

MODEL_FORMAT_VERSION = 1

Model = Union[SvmModel, ForestModel, KnnTrainingSet, Cnn1dModel, tuple]


def _pack(arr) -> Dict[str, Any]:
    arr = np.asarray(arr)
    return {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}


def _unpack(doc: Dict[str, Any], dtype=np.float64) -> np.ndarray:
    shape = [int(v) for v in doc["shape"]]
    data = np.asarray(doc["data"], dtype=dtype)
    if data.size != int(np.prod(shape)):
        raise FormatError(f"array declares shape {shape} but holds {data.size} values")
    return data.reshape(shape)


def _dense_to_dict(layer: DenseLayer) -> Dict[str, Any]:
    return {"weights": _pack(layer.weights), "bias": _pack(layer.bias), "activation": layer.activation}


def _dense_from_dict(doc: Dict[str, Any]) -> DenseLayer:
    return DenseLayer(weights=_unpack(doc["weights"]), bias=_unpack(doc["bias"]),
                      activation=doc.get("activation", "none"))


def _tree_to_dict(tree: DecisionTree) -> Dict[str, Any]:
    return {name: _pack(getattr(tree, name)) for name in ("feature", "threshold", "left", "right", "value")}


def _tree_from_dict(doc: Dict[str, Any]) -> DecisionTree:
    return DecisionTree(
        feature=_unpack(doc["feature"], np.int64),
        threshold=_unpack(doc["threshold"]),
        left=_unpack(doc["left"], np.int64),
        right=_unpack(doc["right"], np.int64),
        value=_unpack(doc["value"]),
    )


def _block_to_dict(block: ConvBlock) -> Dict[str, Any]:
    doc = {name: _pack(getattr(block, name)) for name in ("weight", "bias", "gamma", "beta", "mean", "var")}
    doc.update(pool=block.pool, eps=block.eps)
    return doc


def _block_from_dict(doc: Dict[str, Any]) -> ConvBlock:
    arrays = {name: _unpack(doc[name]) for name in ("weight", "bias", "gamma", "beta", "mean", "var")}
    return ConvBlock(pool=int(doc.get("pool", 1)), eps=float(doc.get("eps", 1e-5)), **arrays)


def model_to_dict(model: Model) -> Dict[str, Any]:
    if isinstance(model, SvmModel):
        doc = {
            "type": "svm",
            "kernel": model.kernel,
            "gamma": model.gamma,
            "bias": model.bias,
            "support_vectors": _pack(model.support_vectors),
            "dual_coef": _pack(model.dual_coef),
        }
        if model.feature_mean is not None:
            doc["feature_mean"] = _pack(model.feature_mean)
        if model.feature_std is not None:
            doc["feature_std"] = _pack(model.feature_std)
    elif isinstance(model, ForestModel):
        doc = {"type": "forest", "trees": [_tree_to_dict(t) for t in model.trees]}
    elif isinstance(model, KnnTrainingSet):
        doc = {"type": "knn", "points": _pack(model.points), "labels": _pack(model.labels)}
    elif isinstance(model, Cnn1dModel):
        doc = {
            "type": "cnn",
            "input_shape": list(model.input_shape),
            "arithmetic": model.arithmetic,
            "blocks": [_block_to_dict(b) for b in model.blocks],
            "dense": [_dense_to_dict(d) for d in model.dense],
        }
        if model.quantization is not None:
            doc["quantization"] = {
                "format": Q15.model_dump(),
                "input_exp": model.quantization.input_exp,
                "layers": [
                    {
                        "weight_raw": _pack(layer.weight_raw),
                        "bias_acc": _pack(layer.bias_acc),
                        "weight_exp": layer.weight_exp,
                        "in_exp": layer.in_exp,
                        "out_exp": layer.out_exp,
                    }
                    for layer in model.quantization.layers
                ],
            }
    elif isinstance(model, (tuple, list)) and all(isinstance(layer, DenseLayer) for layer in model):
        doc = {"type": "mlp", "layers": [_dense_to_dict(layer) for layer in model]}
    else:
        raise DomainError(f"cannot serialize model of type {type(model).__name__}")
    doc["format_version"] = MODEL_FORMAT_VERSION
    return doc


def model_from_dict(doc: Dict[str, Any]) -> Model:
    kind = doc.get("type")
    if kind == "svm":
        return SvmModel(
            kernel=doc["kernel"],
            support_vectors=_unpack(doc["support_vectors"]),
            dual_coef=_unpack(doc["dual_coef"]),
            bias=float(doc["bias"]),
            gamma=float(doc.get("gamma", 1.0)),
            feature_mean=_unpack(doc["feature_mean"]) if "feature_mean" in doc else None,
            feature_std=_unpack(doc["feature_std"]) if "feature_std" in doc else None,
        )
    if kind == "forest":
        return ForestModel(trees=tuple(_tree_from_dict(t) for t in doc["trees"]))
    if kind == "knn":
        return KnnTrainingSet(points=_unpack(doc["points"]), labels=_unpack(doc["labels"], np.int64))
    if kind == "mlp":
        return tuple(_dense_from_dict(layer) for layer in doc["layers"])
    if kind == "cnn":
        quantization = None
        if "quantization" in doc:
            q = doc["quantization"]
            if q.get("format", Q15.model_dump()) != Q15.model_dump():
                raise FormatError(f"unsupported CNN weight format {q.get('format')}")
            quantization = CnnQuantization(
                input_exp=int(q["input_exp"]),
                layers=tuple(
                    QuantizedLayer(
                        weight_raw=_unpack(layer["weight_raw"], np.int64),
                        bias_acc=_unpack(layer["bias_acc"], np.int64),
                        weight_exp=int(layer["weight_exp"]),
                        in_exp=int(layer["in_exp"]),
                        out_exp=int(layer["out_exp"]),
                    )
                    for layer in q["layers"]
                ),
            )
        return Cnn1dModel(
            blocks=tuple(_block_from_dict(b) for b in doc["blocks"]),
            dense=tuple(_dense_from_dict(d) for d in doc["dense"]),
            input_shape=tuple(doc["input_shape"]),
            arithmetic=doc.get("arithmetic", "fp32"),
            quantization=quantization,
        )
    raise FormatError(f"unknown model type: {kind!r}")


def save_model(model: Model, path: Union[str, Path]) -> Path:
    path = storage.save(model_to_dict(model), path)
    logger.info(f"Model written to {path}")
    return path


def load_model(path: Union[str, Path], expected_type: Optional[str] = None) -> Model:
    """Read a model file; any malformed content surfaces as ConfigError."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"model file not found: {path}")
    try:
        doc = storage.load(path)
        if expected_type is not None and doc.get("type") != expected_type:
            raise FormatError(f"expected a {expected_type} model, found {doc.get('type')!r}")
        return model_from_dict(doc)
    except (FormatError, DomainError, KeyError, TypeError, ValueError, AttributeError) as e:
        raise ConfigError(f"malformed model file {path}: {e}") from e


# ---------------------------------------------------------------- seeded defaults

def default_svm(n_features: int, seed: int = 0, n_support: int = 24) -> SvmModel:
    rng = np.random.default_rng(seed)
    return SvmModel(
        kernel="rbf",
        support_vectors=rng.standard_normal((n_support, n_features)),
        dual_coef=rng.uniform(-1.0, 1.0, n_support),
        bias=0.0,
        gamma=1.0 / n_features,
        feature_mean=np.zeros(n_features),
        feature_std=np.ones(n_features),
    )


def _random_tree(rng: np.random.Generator, n_features: int, depth: int, threshold_scale: float) -> DecisionTree:
    n_internal = 2 ** depth - 1
    n_nodes = 2 ** (depth + 1) - 1
    feature = np.full(n_nodes, -1, dtype=np.int64)
    threshold = np.zeros(n_nodes)
    left = np.full(n_nodes, -1, dtype=np.int64)
    right = np.full(n_nodes, -1, dtype=np.int64)
    value = np.zeros((n_nodes, 2))
    for i in range(n_nodes):
        if i < n_internal:
            feature[i] = rng.integers(n_features)
            threshold[i] = rng.normal(0.0, threshold_scale)
            left[i], right[i] = 2 * i + 1, 2 * i + 2
            value[i] = (0.5, 0.5)
        else:
            p = rng.uniform()
            value[i] = (1.0 - p, p)
    return DecisionTree(feature=feature, threshold=threshold, left=left, right=right, value=value)


def default_forest(n_features: int, seed: int = 0, n_trees: int = 10, depth: int = 4,
                   threshold_scale: float = 1.0) -> ForestModel:
    rng = np.random.default_rng(seed)
    return ForestModel(trees=tuple(_random_tree(rng, n_features, depth, threshold_scale) for _ in range(n_trees)))


def default_mlp(sizes: Sequence[int], seed: int = 0, output_activation: str = "softmax") -> tuple:
    rng = np.random.default_rng(seed)
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == len(sizes) - 2
        layers.append(DenseLayer(
            weights=rng.normal(0.0, math.sqrt(2.0 / n_in), (n_out, n_in)),
            bias=np.zeros(n_out),
            activation=output_activation if last else "relu",
        ))
    return tuple(layers)


def default_knn(seed: int = 0, n_points: int = 685, n_features: int = 3) -> KnnTrainingSet:
    """Two Gaussian clusters of per-second (GSR, PPG, ST) averages; 1 = fear."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, n_points)
    centers = np.where(labels[:, None] == 1, 0.2, -0.2)
    points = centers + rng.normal(0.0, 0.3, (n_points, n_features))
    return KnnTrainingSet(points=points, labels=labels)


def default_cnn(seed: int = 0, channels: Sequence[int] = (23, 16, 16, 16), kernel: int = 5,
                pools: Sequence[int] = (4, 4, 4), length: int = 1024, hidden: int = 128,
                n_classes: int = 2, weight_range: Optional[float] = None) -> Cnn1dModel:
    """CNN with identity batchnorm and uniform weights.

    ``weight_range`` draws every weight from U(-r, r); by default each layer
    uses a fan-in scaled range.
    """
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        r = weight_range if weight_range is not None else math.sqrt(3.0 / fan_in)
        return rng.uniform(-r, r, shape)

    blocks = []
    out_len = length
    for c_in, c_out, pool in zip(channels[:-1], channels[1:], pools):
        blocks.append(ConvBlock(
            weight=uniform((c_out, c_in, kernel), c_in * kernel),
            bias=np.zeros(c_out),
            gamma=np.ones(c_out),
            beta=np.zeros(c_out),
            mean=np.zeros(c_out),
            var=np.ones(c_out),
            pool=pool,
        ))
        out_len = blocks[-1].output_length(out_len)
    flat = channels[-1] * out_len
    dense = (
        DenseLayer(weights=uniform((hidden, flat), flat), bias=np.zeros(hidden), activation="relu"),
        DenseLayer(weights=uniform((n_classes, hidden), hidden), bias=np.zeros(n_classes), activation="none"),
    )
    return Cnn1dModel(blocks=tuple(blocks), dense=dense, input_shape=(channels[0], length))
