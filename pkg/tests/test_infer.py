import numpy as np
import pytest

from app.core.dsp import BeatFiducials
from app.core.errors import DomainError, NumericError, StateError
from app.core.infer import (
    Cnn1dModel,
    ConvBlock,
    DecisionTree,
    DenseLayer,
    ForestModel,
    FuzzyRule,
    KnnTrainingSet,
    SvmModel,
    Trapezoid,
    calibrate_q15,
    cnn_forward,
    conv1d_block,
    fastica_unmix,
    forest_predict,
    knn_fear_predict,
    mlp_forward,
    partial_select_k,
    rp_classify,
    svm_predict,
)
from app.core.instrument import KernelContext
from app.core.models import default_cnn


def test_svm_linear_decision():
    model = SvmModel.linear([1.0, 2.0], bias=-1.0)
    assert svm_predict(model, [1.0, 1.0]).label == 1
    assert svm_predict(model, [0.0, 0.0]).label == -1
    zero = svm_predict(SvmModel.linear([0.0, 0.0]), [3.0, 4.0])
    assert zero.score == 0.0
    assert zero.label == -1


def test_svm_rbf_and_counting():
    model = SvmModel(kernel="rbf", support_vectors=[[1.0, 2.0]], dual_coef=[1.0], bias=-0.5, gamma=0.3)
    ctx = KernelContext()
    decision = svm_predict(model, [1.0, 2.0], ctx)
    assert decision.score == pytest.approx(0.5)
    assert ctx.counters.fp_mac == 3
    with pytest.raises(DomainError):
        svm_predict(model, [1.0])


def test_svm_rejects_bad_parameters():
    with pytest.raises(DomainError):
        SvmModel(kernel="linear", support_vectors=[[1.0], [2.0]], dual_coef=[1.0], bias=0.0)
    with pytest.raises(DomainError):
        SvmModel.linear([1.0], bias=float("nan"))


def _stump():
    return DecisionTree(
        feature=[0, -1, -1],
        threshold=[0.5, 0.0, 0.0],
        left=[1, -1, -1],
        right=[2, -1, -1],
        value=[[0.5, 0.5], [1.0, 0.0], [0.0, 1.0]],
    )


def test_forest_walks_trees():
    forest = ForestModel((_stump(),))
    assert forest_predict(forest, [0.2]).label == 0
    assert forest_predict(forest, [0.5]).label == 0
    assert forest_predict(forest, [0.7]).label == 1
    with pytest.raises(DomainError):
        forest_predict(forest, [])


def test_forest_tie_is_negative():
    decision = forest_predict(ForestModel((DecisionTree.leaf(0.5),)), [1.0])
    assert decision.probability == 0.5
    assert decision.label == 0
    mixed = forest_predict(ForestModel((DecisionTree.leaf(1.0), DecisionTree.leaf(0.2))), [0.0])
    assert mixed.probability == pytest.approx(0.6)
    assert mixed.label == 1


def test_tree_validation():
    with pytest.raises(DomainError):
        DecisionTree(feature=[0, -1], threshold=[0.0, 0.0], left=[1, -1], right=[5, -1],
                     value=[[0.5, 0.5], [1.0, 0.0]])
    with pytest.raises(DomainError):
        DecisionTree(feature=[-1], threshold=[0.0], left=[-1], right=[-1], value=[[0.3, 0.3]])
    with pytest.raises(DomainError):
        ForestModel(())


def test_partial_select_k_keeps_index_order_on_ties():
    values, index = partial_select_k([3.0, 1.0, 2.0, 1.0], 2)
    assert values.tolist() == [1.0, 1.0]
    assert index.tolist() == [1, 3]
    with pytest.raises(DomainError):
        partial_select_k([1.0], 0)


def test_knn_decision_ignores_feature_scale():
    for seed in range(200):
        gen = np.random.default_rng(seed)
        points = gen.integers(0, 4, (16, 3)).astype(np.float64)
        labels = gen.integers(0, 2, 16)
        query = gen.integers(0, 4, 3).astype(np.float64)
        base = knn_fear_predict(KnnTrainingSet(points=points, labels=labels), query)
        for scale in (0.1, 3.7, 1e3):
            scaled = knn_fear_predict(KnnTrainingSet(points=points * scale, labels=labels), query * scale)
            assert scaled.fear_fraction == base.fear_fraction, (seed, scale)
            assert scaled.fear == base.fear


def test_partial_select_k_treats_rounding_as_tie():
    values, index = partial_select_k([0.30000000000000004, 0.3, 0.5], 1)
    assert index.tolist() == [0]
    assert values[0] == pytest.approx(0.3)


def test_knn_majority_and_ties():
    points = np.arange(9, dtype=np.float64).reshape(-1, 1)
    train = KnnTrainingSet(points=points, labels=[1, 1, 1, 0, 0, 0, 0, 0, 0])
    assert train.k == 3
    assert knn_fear_predict(train, [0.5]).fear
    assert not knn_fear_predict(train, [7.0]).fear

    tied = KnnTrainingSet(points=[[0.0], [1.0], [10.0], [11.0]], labels=[1, 0, 1, 1])
    decision = knn_fear_predict(tied, [0.4])
    assert decision.fear_fraction == 0.5
    assert not decision.fear


def test_knn_validation():
    with pytest.raises(DomainError):
        KnnTrainingSet(points=[[0.0]], labels=[2])
    train = KnnTrainingSet(points=[[0.0, 0.0]], labels=[1])
    with pytest.raises(DomainError):
        knn_fear_predict(train, [0.0])
    with pytest.raises(DomainError):
        knn_fear_predict(train, [np.nan, 0.0])


def test_mlp_forward():
    hidden = DenseLayer(weights=[[1.0, -1.0], [-1.0, 1.0]], bias=[0.0, 0.0], activation="relu")
    out = DenseLayer(weights=[[1.0, 0.0], [0.0, 1.0]], bias=[0.0, 0.0], activation="softmax")
    probs = mlp_forward([hidden, out], [2.0, 1.0])
    assert probs.sum() == pytest.approx(1.0)
    assert probs[0] > probs[1]
    with pytest.raises(DomainError):
        mlp_forward([hidden], [1.0, 2.0, 3.0])


def _identity_block(kernel=3, pool=2):
    return ConvBlock(weight=np.ones((1, 1, kernel)), bias=[0.0], gamma=[1.0], beta=[0.0],
                     mean=[0.0], var=[1.0], pool=pool)


def test_conv_block_valid_conv_and_pool():
    block = _identity_block()
    out = conv1d_block(np.arange(8, dtype=np.float64).reshape(1, 8), block)
    scale = 1.0 / np.sqrt(1.0 + block.eps)
    assert out.shape == (1, 3)
    assert out[0] == pytest.approx(np.array([6.0, 12.0, 18.0]) * scale)


def test_conv_block_shape_checks():
    with pytest.raises(DomainError):
        conv1d_block(np.zeros((2, 8)), _identity_block())
    with pytest.raises(DomainError):
        conv1d_block(np.zeros((1, 2)), _identity_block())
    with pytest.raises(DomainError):
        ConvBlock(weight=np.ones((1, 1, 3)), bias=[0.0], gamma=[1.0], beta=[0.0], mean=[0.0], var=[0.0])


def test_cnn_model_wiring_checked():
    block = _identity_block()
    with pytest.raises(DomainError):
        Cnn1dModel(blocks=(block,), dense=(DenseLayer(weights=np.ones((2, 4)), bias=np.zeros(2)),),
                   input_shape=(1, 8))


def _small_cnn():
    return default_cnn(seed=3, channels=(2, 4, 4), kernel=3, pools=(2, 2), length=32, hidden=8)


def test_cnn_q15_needs_calibration():
    model = _small_cnn()
    with pytest.raises(StateError):
        cnn_forward(model, np.zeros((2, 32)), arithmetic="q15")
    with pytest.raises(DomainError):
        cnn_forward(model, np.zeros((2, 31)))


def test_cnn_q15_tracks_float(rng):
    model = _small_cnn()
    inputs = [rng.normal(0.0, 0.5, (2, 32)) for _ in range(4)]
    quantized = calibrate_q15(model, inputs)
    assert quantized.arithmetic == "q15"
    for x in inputs:
        reference = cnn_forward(model, x)
        ctx = KernelContext()
        scores = cnn_forward(quantized, x, ctx)
        assert np.max(np.abs(scores - reference)) <= 0.05 * np.max(np.abs(reference)) + 1e-3
        assert ctx.counters.fxp_mac > 0
        assert ctx.counters.fp_mac == 0
    with pytest.raises(DomainError):
        calibrate_q15(model, [])


def test_fastica_recovers_sources():
    t = np.linspace(0.0, 8.0, 2000)
    sources = np.vstack([np.sin(2 * np.pi * 1.3 * t), np.sign(np.sin(2 * np.pi * 0.7 * t))])
    recovered = 0
    for seed in range(20):
        gen = np.random.default_rng(seed)
        mixing = np.array([[1.0, gen.uniform(-0.6, 0.6)], [gen.uniform(-0.6, 0.6), 1.0]])
        mixing *= gen.uniform(0.5, 2.0, (2, 1))
        result = fastica_unmix(mixing @ sources, 2, seed=seed)
        assert result.sources.shape == (2, 2000)
        corr = np.abs(np.corrcoef(np.vstack([result.sources, sources]))[:2, 2:])
        if np.all(corr.max(axis=1) > 0.95) and sorted(corr.argmax(axis=1).tolist()) == [0, 1]:
            recovered += 1
    assert recovered >= 18


def test_fastica_rejects_degenerate_input(rng):
    row = rng.standard_normal(500)
    with pytest.raises(NumericError):
        fastica_unmix(np.vstack([row, row]), 2)
    with pytest.raises(DomainError):
        fastica_unmix(np.vstack([row, row]), 3)
    with pytest.raises(DomainError):
        fastica_unmix(np.zeros((3, 3)), 1)


def test_trapezoid_membership():
    trap = Trapezoid(0.0, 1.0, 2.0, 3.0)
    assert trap.membership(0.5) == 0.5
    assert trap.membership(1.5) == 1.0
    assert trap.membership(2.5) == 0.5
    assert trap.membership(3.0) == 0.0
    with pytest.raises(DomainError):
        Trapezoid(1.0, 0.0, 2.0, 3.0)


@pytest.mark.parametrize("rr, expected", [(256.0, "normal"), (400.0, "abnormal"), (150.0, "abnormal")])
def test_rp_classify_default_rules(rr, expected):
    beat = BeatFiducials(r=500, rr_samples=rr, reference_rr=256.0)
    assert rp_classify(beat).label == expected


def test_rp_classify_without_firing_rule_is_normal():
    decision = rp_classify(BeatFiducials(r=500, rr_samples=122.0, reference_rr=100.0))
    assert decision.label == "normal"
    assert max(decision.rule_strengths) == 0.0


def test_rp_classify_custom_rules_and_missing_rr():
    rules = [FuzzyRule("wide_qrs", {"qrs": Trapezoid(0.3, 0.4, 1.0, 1.0)})]
    beat = BeatFiducials(r=100, q=60, s=150, rr_samples=200.0, reference_rr=200.0)
    assert rp_classify(beat, rules).label == "wide_qrs"
    with pytest.raises(DomainError):
        rp_classify(BeatFiducials(r=100))
