import numpy as np
import pytest

from config import TrainConfig
from processors.errors import ConfigurationError, DimensionError, NumericalError
from processors.surrogate import (
    AdamState,
    FeatureBounds,
    NormalizationBounds,
    SurrogateProcessor,
)


def linear_problem(n_samples, m=5, seed=0):
    rng = np.random.default_rng(seed)
    inputs = rng.uniform(10.0, 2000.0, size=(n_samples, m))
    mixing = rng.standard_normal((m, m))
    return inputs, 1e-3 * inputs @ mixing


def kink_free_inputs(model, rng, n=3, threshold=1e-4):
    for _ in range(200):
        z = rng.uniform(-1.0, 1.0, size=(n, model.layer_sizes[0]))
        if SurrogateProcessor.min_abs_preactivation(model, z) > threshold:
            return z
    pytest.fail("не удалось подобрать входы вдали от изломов")


def test_init_model_layout():
    model = SurrogateProcessor.init_model([9, 12, 10, 8, 9], seed=1)
    assert model.activations == ["selu", "relu", "relu", "linear"]
    assert model.initializers == ["lecun_normal", "he_normal", "normal", "normal"]
    assert [w.shape for w in model.weights] == [(12, 9), (10, 12), (8, 10), (9, 8)]
    assert all(not np.any(b) for b in model.biases)
    assert model.n_parameters() == sum(w.size + b.size for w, b in zip(model.weights, model.biases))


def test_init_model_is_seeded():
    a = SurrogateProcessor.init_model([4, 6, 4], seed=3)
    b = SurrogateProcessor.init_model([4, 6, 4], seed=3)
    c = SurrogateProcessor.init_model([4, 6, 4], seed=4)
    np.testing.assert_array_equal(a.weights[0], b.weights[0])
    assert not np.array_equal(a.weights[0], c.weights[0])


def test_initializer_scales():
    model = SurrogateProcessor.init_model([200, 400, 300, 200], seed=0)
    assert np.std(model.weights[0]) == pytest.approx(np.sqrt(1 / 200), rel=0.05)
    assert np.std(model.weights[1]) == pytest.approx(np.sqrt(2 / 400), rel=0.05)
    assert np.std(model.weights[2]) == pytest.approx(0.05, rel=0.05)


@pytest.mark.parametrize("sizes, activations", [([4], None), ([4, 0, 4], None), ([4, 4, 4], ["relu"])])
def test_init_model_rejects_bad_layout(sizes, activations):
    with pytest.raises(ConfigurationError):
        SurrogateProcessor.init_model(sizes, 0, activations)


def test_normalization_round_trip_and_constant_features(rng):
    data = rng.uniform(-3.0, 7.0, size=(20, 4))
    data[:, 2] = 5.0
    bounds = FeatureBounds.fit(data)
    z = SurrogateProcessor.normalize(data, bounds)
    assert z[:, [0, 1, 3]].min() == pytest.approx(-1.0)
    assert z[:, [0, 1, 3]].max() == pytest.approx(1.0)
    np.testing.assert_array_equal(z[:, 2], 0.0)
    np.testing.assert_allclose(SurrogateProcessor.denormalize(z, bounds), data, atol=1e-12)
    assert list(bounds.constant) == [False, False, True, False]


def test_mse_loss_hand_example():
    assert SurrogateProcessor.mse_loss([[1.0, 2.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 1.0]]) == pytest.approx(3.0)
    with pytest.raises(DimensionError):
        SurrogateProcessor.mse_loss([[1.0]], [[1.0, 2.0]])


def test_forward_single_sample_matches_batch(rng):
    model = SurrogateProcessor.init_model([5, 7, 6, 5], seed=2)
    z = rng.uniform(-1, 1, size=(3, 5))
    batch = SurrogateProcessor.forward(model, z)
    np.testing.assert_allclose(SurrogateProcessor.forward(model, z[1]), batch[1])
    with pytest.raises(DimensionError):
        SurrogateProcessor.forward(model, np.ones(4))


@pytest.mark.parametrize("seed", range(5))
def test_gradient_check_on_random_models(seed):
    rng = np.random.default_rng(100 + seed)
    model = SurrogateProcessor.init_model([4, 6, 5, 4], seed=seed)
    for bias in model.biases:
        bias[:] = rng.normal(0.0, 0.1, size=bias.shape)
    z = kink_free_inputs(model, rng)
    y = rng.uniform(-1.0, 1.0, size=(3, 4))
    assert SurrogateProcessor.gradient_check(model, z, y) <= 1e-5


def test_adam_hand_example():
    param = np.array([1.0])
    grad = np.array([0.5])
    state = AdamState.fresh([param])
    SurrogateProcessor.adam_step([param], [grad], state, 0.1)
    expected = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8)
    assert param[0] == pytest.approx(expected, abs=1e-12)
    SurrogateProcessor.adam_step([param], [grad], state, 0.1)
    assert param[0] == pytest.approx(expected - 0.1 * 0.5 / (0.5 + 1e-8), abs=1e-12)
    assert state.step == 2


def test_split_indices_partition():
    train, validation = SurrogateProcessor.split_indices(10, 0.2, seed=0)
    assert len(train) == 8 and len(validation) == 2
    assert sorted(np.concatenate([train, validation])) == list(range(10))


def test_training_reduces_loss_and_beats_untrained_model():
    inputs, targets = linear_problem(120)
    test_inputs, test_targets = linear_problem(40, seed=1)
    cfg = TrainConfig(learning_rate=1e-2, batch_size=8, epochs=60, validation_fraction=0.2, seed=0)
    model = SurrogateProcessor.init_model(SurrogateProcessor.layer_sizes_for(5, (16,)), seed=0)

    result = SurrogateProcessor.train(model, inputs, targets, cfg)
    assert len(result.history) == 60
    assert result.history[-1]["train_loss"] < 0.5 * result.initial_train_loss
    assert np.isfinite(result.history[-1]["validation_loss"])
    assert len(result.train_indices) == 96 and len(result.validation_indices) == 24

    untrained = SurrogateProcessor.rmse(model, result.bounds, test_inputs, test_targets)
    trained = SurrogateProcessor.rmse(result.model, result.bounds, test_inputs, test_targets)
    assert trained < untrained


def test_training_does_not_modify_initial_model():
    inputs, targets = linear_problem(16)
    model = SurrogateProcessor.init_model([5, 8, 5], seed=0)
    before = model.weights[0].copy()
    SurrogateProcessor.train(model, inputs, targets, TrainConfig(epochs=2, batch_size=4, hidden_widths=(8,)))
    np.testing.assert_array_equal(model.weights[0], before)


def test_training_reports_non_finite_loss():
    inputs, targets = linear_problem(16)
    model = SurrogateProcessor.init_model([5, 8, 5], seed=0)
    model.weights[0][0, 0] = np.nan
    with pytest.raises(NumericalError) as error:
        SurrogateProcessor.train(model, inputs, targets, TrainConfig(epochs=2, batch_size=4))
    assert error.value.context == {"epoch": 1, "batch": 0}


def test_training_rejects_empty_and_mismatched_data():
    model = SurrogateProcessor.init_model([5, 8, 5], seed=0)
    with pytest.raises(ConfigurationError):
        SurrogateProcessor.train(model, np.zeros((0, 5)), np.zeros((0, 5)), TrainConfig())
    with pytest.raises(DimensionError):
        SurrogateProcessor.train(model, np.zeros((4, 5)), np.zeros((4, 4)), TrainConfig())


def test_predict_basis_denormalizes(rng):
    model = SurrogateProcessor.init_model([3, 4, 3], seed=0)
    for weight in model.weights:
        weight[:] = 0.0
    bounds = NormalizationBounds(FeatureBounds(np.zeros(3), np.ones(3)), FeatureBounds(np.full(3, 2.0), np.full(3, 4.0)))
    # нулевой выход сети - середина диапазона целей
    np.testing.assert_allclose(SurrogateProcessor.predict_basis(model, bounds, rng.uniform(size=3)), 3.0)
    with pytest.raises(DimensionError):
        SurrogateProcessor.predict_basis(model, bounds, np.ones(5))


def test_rmse_undefined_for_zero_targets():
    model = SurrogateProcessor.init_model([3, 4, 3], seed=0)
    bounds = NormalizationBounds(FeatureBounds(np.zeros(3), np.ones(3)), FeatureBounds(np.zeros(3), np.zeros(3)))
    assert np.isnan(SurrogateProcessor.rmse(model, bounds, np.ones((2, 3)), np.zeros((2, 3))))


def test_mask_prediction_zeroes_boundaries(small_grids, small_neighborhoods):
    fine, _ = small_grids
    for nb in (small_neighborhoods[0], small_neighborhoods[4]):
        values = SurrogateProcessor.mask_prediction(nb, fine, np.ones(nb.canonical_patch_size))
        assert np.all(values[nb.local_boundary] == 0.0)
        assert np.all(values[fine.boundary_node_flags[nb.fine_node_indices]] == 0.0)
        np.testing.assert_array_equal(values[nb.local_interior], 1.0)


def test_hyperparameter_sweep_rows():
    inputs, targets = linear_problem(24)
    test_inputs, test_targets = linear_problem(8, seed=1)
    cfg = TrainConfig(hidden_widths=(6,), learning_rate=1e-2)
    rows = SurrogateProcessor.hyperparameter_sweep(inputs, targets, test_inputs, test_targets, cfg, (1, 2), (8,))
    assert [(row["epochs"], row["batch_size"]) for row in rows] == [(1, 8), (2, 8)]
    assert all(np.isfinite(row["rmse"]) for row in rows)
