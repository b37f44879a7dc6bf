import json

import numpy as np
import pytest

from app.core.errors import ConfigError
from app.core.infer import (
    KnnTrainingSet,
    SvmModel,
    calibrate_q15,
    cnn_forward,
    forest_predict,
    knn_fear_predict,
    mlp_forward,
    svm_predict,
)
from app.core.models import (
    MODEL_FORMAT_VERSION,
    default_cnn,
    default_forest,
    default_knn,
    default_mlp,
    default_svm,
    load_model,
    model_to_dict,
    save_model,
)


def test_svm_file_keeps_predictions(tmp_path, rng):
    model = default_svm(20, seed=5)
    path = save_model(model, tmp_path / "svm.json")
    loaded = load_model(path, "svm")
    assert isinstance(loaded, SvmModel)
    x = rng.standard_normal(20)
    assert svm_predict(loaded, x).score == pytest.approx(svm_predict(model, x).score)


def test_forest_and_knn_files(tmp_path, rng):
    forest = default_forest(72, seed=2)
    loaded = load_model(save_model(forest, tmp_path / "forest.json"))
    x = rng.standard_normal(72)
    assert forest_predict(loaded, x) == forest_predict(forest, x)

    knn = default_knn(seed=1)
    loaded_knn = load_model(save_model(knn, tmp_path / "knn.json"), "knn")
    assert isinstance(loaded_knn, KnnTrainingSet)
    assert knn_fear_predict(loaded_knn, [0.1, 0.1, 0.1]) == knn_fear_predict(knn, [0.1, 0.1, 0.1])


def test_mlp_file(tmp_path):
    layers = default_mlp([4, 6, 3], seed=2)
    loaded = load_model(save_model(layers, tmp_path / "mlp.json"), "mlp")
    assert np.allclose(mlp_forward(loaded, np.ones(4)), mlp_forward(layers, np.ones(4)))


def test_quantized_cnn_file(tmp_path, rng):
    model = default_cnn(seed=3, channels=(2, 4, 4), kernel=3, pools=(2, 2), length=32, hidden=8)
    x = rng.normal(0.0, 0.5, (2, 32))
    quantized = calibrate_q15(model, [x])
    doc = model_to_dict(quantized)
    assert doc["format_version"] == MODEL_FORMAT_VERSION
    assert doc["quantization"]["format"] == {"total_bits": 16, "frac_bits": 15}

    loaded = load_model(save_model(quantized, tmp_path / "cnn.json"), "cnn")
    assert loaded.arithmetic == "q15"
    assert np.array_equal(cnn_forward(loaded, x), cnn_forward(quantized, x))


def test_load_model_failures_are_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_model(tmp_path / "missing.json")

    path = save_model(default_svm(4), tmp_path / "svm.json")
    with pytest.raises(ConfigError):
        load_model(path, "forest")

    garbled = tmp_path / "garbled.json"
    garbled.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_model(garbled)

    doc = model_to_dict(default_svm(4))
    doc["support_vectors"]["shape"] = [3, 4]
    bad_shape = tmp_path / "shape.json"
    bad_shape.write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(ConfigError):
        load_model(bad_shape)

    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"type": "gbm"}), encoding="utf-8")
    with pytest.raises(ConfigError):
        load_model(unknown)


def test_defaults_are_seeded():
    assert np.array_equal(default_svm(8, seed=4).support_vectors, default_svm(8, seed=4).support_vectors)
    assert not np.array_equal(default_svm(8, seed=4).support_vectors, default_svm(8, seed=5).support_vectors)
    assert default_knn().k == 26
    cnn = default_cnn()
    assert cnn.input_shape == (23, 1024)
    assert cnn.n_classes == 2
    assert cnn.layer_lengths() == [1024, 255, 62, 14]
