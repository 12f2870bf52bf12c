import copy
import time
from dataclasses import dataclass, field
from typing import List

import numpy as np

from logger.logger import get_logger
from processors.errors import ConfigurationError, DimensionError, NumericalError
from processors.grids import GridProcessor

logger = get_logger('surrogate')

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772
NORMAL_STD = 0.05

ACTIVATION_TAGS = {"linear": 0, "selu": 1, "relu": 2}


@dataclass(eq=False)
class MlpModel:
    """Полносвязная сеть: W^l формы (out, in), c^l формы (out,)"""
    layer_sizes: List[int]
    weights: List[np.ndarray] = field(repr=False)
    biases: List[np.ndarray] = field(repr=False)
    activations: List[str] = field(default_factory=list)
    initializers: List[str] = field(default_factory=list)

    @property
    def n_layers(self):
        return len(self.weights)

    def parameters(self):
        return self.weights + self.biases

    def n_parameters(self):
        return sum(p.size for p in self.parameters())


@dataclass(eq=False)
class FeatureBounds:
    minimum: np.ndarray = field(repr=False)
    maximum: np.ndarray = field(repr=False)

    @property
    def constant(self):
        return self.maximum == self.minimum

    @classmethod
    def fit(cls, data):
        data = np.atleast_2d(np.asarray(data, dtype=np.float64))
        return cls(data.min(axis=0), data.max(axis=0))


@dataclass(eq=False)
class NormalizationBounds:
    inputs: FeatureBounds
    outputs: FeatureBounds


@dataclass(eq=False)
class AdamState:
    first_moments: List[np.ndarray] = field(repr=False)
    second_moments: List[np.ndarray] = field(repr=False)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


@dataclass(eq=False)
class TrainResult:
    model: MlpModel
    bounds: NormalizationBounds
    history: List[dict] = field(default_factory=list)
    initial_train_loss: float = np.nan
    train_indices: np.ndarray = field(default=None, repr=False)
    validation_indices: np.ndarray = field(default=None, repr=False)
    seconds: float = 0.0


def _activate(tag, x):
    if tag == "selu":
        return SELU_LAMBDA * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))
    if tag == "relu":
        return np.maximum(x, 0.0)
    return x


def _activate_derivative(tag, x):
    if tag == "selu":
        return SELU_LAMBDA * np.where(x > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(x, 0.0)))
    if tag == "relu":
        return (x > 0).astype(np.float64)
    return np.ones_like(x)


class SurrogateProcessor:
    """Нейросетевой предсказатель онлайн-функций по патчу проницаемости"""

    @staticmethod
    def default_tags(n_layers):
        """SELU - первый слой, ReLU - промежуточные, линейный - выходной"""
        activations = ["selu"] + ["relu"] * (n_layers - 2) + ["linear"] if n_layers > 1 else ["linear"]
        initializers = ["lecun_normal", "he_normal"] + ["normal"] * (n_layers - 2)
        return activations, initializers[:n_layers]

    @staticmethod
    def init_model(layer_sizes, seed, activations=None):
        """
        Инициализация: W¹ ~ LeCun, W² ~ He, остальные N(0, 0.05²), смещения нули

        Args:
            layer_sizes (list): [m, h1, ..., m]
            seed (int): зерно генератора
            activations (list, optional): переопределение функций активации
        """
        layer_sizes = [int(size) for size in layer_sizes]
        if len(layer_sizes) < 2:
            raise ConfigurationError(f"Нужно хотя бы два размера слоев: {layer_sizes}")
        if any(size <= 0 for size in layer_sizes):
            raise ConfigurationError(f"Слой нулевой ширины: {layer_sizes}")

        n_layers = len(layer_sizes) - 1
        default_activations, initializers = SurrogateProcessor.default_tags(n_layers)
        activations = list(activations) if activations is not None else default_activations
        if len(activations) != n_layers or any(tag not in ACTIVATION_TAGS for tag in activations):
            raise ConfigurationError(f"Неверный список активаций {activations} для {n_layers} слоев")

        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out, initializer in zip(layer_sizes[:-1], layer_sizes[1:], initializers):
            if initializer == "lecun_normal":
                std = np.sqrt(1.0 / fan_in)
            elif initializer == "he_normal":
                std = np.sqrt(2.0 / fan_in)
            else:
                std = NORMAL_STD
            weights.append(rng.normal(0.0, std, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return MlpModel(layer_sizes, weights, biases, activations, initializers)

    @staticmethod
    def normalize(x, bounds):
        """x' = 2(x - min)/(max - min) - 1; постоянные признаки -> 0"""
        x = np.asarray(x, dtype=np.float64)
        span = bounds.maximum - bounds.minimum
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, 2.0 * (x - bounds.minimum) / safe - 1.0, 0.0)

    @staticmethod
    def denormalize(x, bounds):
        x = np.asarray(x, dtype=np.float64)
        span = bounds.maximum - bounds.minimum
        return np.where(span > 0, (x + 1.0) * 0.5 * span + bounds.minimum, bounds.minimum)

    @staticmethod
    def _forward_cache(model, z):
        """Прямой проход с сохранением пред-активаций для обратного распространения"""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if z.shape[1] != model.layer_sizes[0]:
            raise DimensionError("Размер входа сети", expected=model.layer_sizes[0], actual=z.shape[1])
        outputs, preactivations = [z], []
        for weight, bias, tag in zip(model.weights, model.biases, model.activations):
            pre = outputs[-1] @ weight.T + bias
            preactivations.append(pre)
            outputs.append(_activate(tag, pre))
        return outputs, preactivations

    @staticmethod
    def forward(model, z):
        single = np.ndim(z) == 1
        outputs, _ = SurrogateProcessor._forward_cache(model, z)
        return outputs[-1][0] if single else outputs[-1]

    @staticmethod
    def min_abs_preactivation(model, z):
        """Наименьшее |x| пред-активаций нелинейных слоев (для обхода изломов)"""
        _, preactivations = SurrogateProcessor._forward_cache(model, z)
        values = [np.min(np.abs(pre)) for pre, tag in zip(preactivations, model.activations) if tag != "linear"]
        return min(values) if values else np.inf

    @staticmethod
    def mse_loss(predictions, targets):
        """Среднее по выборкам квадрата евклидова расстояния"""
        predictions = np.atleast_2d(np.asarray(predictions, dtype=np.float64))
        targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        if predictions.shape != targets.shape:
            raise DimensionError("Формы предсказаний и целей", expected=targets.shape, actual=predictions.shape)
        return float(np.mean(np.sum((predictions - targets) ** 2, axis=1)))

    @staticmethod
    def loss_and_gradients(model, z, y):
        """MSE и точные градиенты по W^l, c^l (в порядке model.parameters())"""
        outputs, preactivations = SurrogateProcessor._forward_cache(model, z)
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        batch = y.shape[0]
        loss = SurrogateProcessor.mse_loss(outputs[-1], y)

        delta = 2.0 * (outputs[-1] - y) / batch
        weight_grads = [None] * model.n_layers
        bias_grads = [None] * model.n_layers
        for layer in reversed(range(model.n_layers)):
            delta = delta * _activate_derivative(model.activations[layer], preactivations[layer])
            weight_grads[layer] = delta.T @ outputs[layer]
            bias_grads[layer] = delta.sum(axis=0)
            if layer > 0:
                delta = delta @ model.weights[layer]
        return loss, weight_grads + bias_grads

    @staticmethod
    def adam_step(params, grads, state, lr):
        """Шаг Adam с коррекцией смещения; params изменяются на месте"""
        state.step += 1
        correction1 = 1.0 - state.beta1 ** state.step
        correction2 = 1.0 - state.beta2 ** state.step
        for param, grad, m, v in zip(params, grads, state.first_moments, state.second_moments):
            m *= state.beta1
            m += (1.0 - state.beta1) * grad
            v *= state.beta2
            v += (1.0 - state.beta2) * grad ** 2
            param -= lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        return params, state

    @staticmethod
    def split_indices(n_samples, validation_fraction, seed):
        """Перемешанное разбиение на обучающую и валидационную части"""
        order = np.random.default_rng(seed).permutation(n_samples)
        n_validation = int(round(validation_fraction * n_samples))
        return np.sort(order[n_validation:]), np.sort(order[:n_validation])

    @staticmethod
    def train(model, inputs, targets, cfg):
        """
        Обучение Adam по MSE на мини-пакетах

        Args:
            model (MlpModel): начальная модель (не изменяется)
            inputs (ndarray): патчи κ, форма (N, m)
            targets (ndarray): онлайн-функции Φ_j, форма (N, m)
            cfg (TrainConfig): скорость обучения, пакет, эпохи, доля валидации, зерно

        Returns:
            TrainResult: обученная модель, границы нормализации, история потерь
        """
        inputs = np.asarray(inputs, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.float64)
        if len(inputs) == 0:
            raise ConfigurationError("Пустой набор данных для обучения")
        if inputs.shape != targets.shape or inputs.shape[1] != model.layer_sizes[0]:
            raise DimensionError("Формы входов и целей", expected=(len(inputs), model.layer_sizes[0]),
                                 actual=(inputs.shape, targets.shape))

        started = time.time()
        train_idx, val_idx = SurrogateProcessor.split_indices(len(inputs), cfg.validation_fraction, cfg.seed)
        if len(train_idx) == 0:
            raise ConfigurationError("После выделения валидации не осталось обучающих выборок")

        # границы нормализации только по обучающей части
        bounds = NormalizationBounds(FeatureBounds.fit(inputs[train_idx]), FeatureBounds.fit(targets[train_idx]))
        z = SurrogateProcessor.normalize(inputs, bounds.inputs)
        y = SurrogateProcessor.normalize(targets, bounds.outputs)

        model = copy.deepcopy(model)
        state = AdamState.fresh(model.parameters())
        rng = np.random.default_rng(cfg.seed + 1)

        initial = SurrogateProcessor.mse_loss(SurrogateProcessor.forward(model, z[train_idx]), y[train_idx])
        history = []
        for epoch in range(1, cfg.epochs + 1):
            order = train_idx[rng.permutation(len(train_idx))]
            total = 0.0
            for batch_index, start in enumerate(range(0, len(order), cfg.batch_size)):
                batch = order[start:start + cfg.batch_size]
                loss, grads = SurrogateProcessor.loss_and_gradients(model, z[batch], y[batch])
                if not np.isfinite(loss):
                    raise NumericalError("Неконечная функция потерь", epoch=epoch, batch=batch_index)
                SurrogateProcessor.adam_step(model.parameters(), grads, state, cfg.learning_rate)
                total += loss * len(batch)

            record = {"epoch": epoch, "train_loss": total / len(order), "validation_loss": np.nan}
            if len(val_idx):
                record["validation_loss"] = SurrogateProcessor.mse_loss(
                    SurrogateProcessor.forward(model, z[val_idx]), y[val_idx])
            history.append(record)
            logger.debug(f"Эпоха {epoch}: train={record['train_loss']:.4e} val={record['validation_loss']:.4e}")

        return TrainResult(model, bounds, history, initial, train_idx, val_idx, time.time() - started)

    @staticmethod
    def gradient_check(model, z, y, eps=1e-6, scale_floor=1.0):
        """
        Сравнение аналитических градиентов с центральными разностями

        Отклонение |g_a - g_n| / max(|g_a|, |g_n|, scale_floor), максимум по всем параметрам.
        """
        _, analytic = SurrogateProcessor.loss_and_gradients(model, z, y)
        deviation = 0.0
        for param, grad in zip(model.parameters(), analytic):
            flat, flat_grad = param.reshape(-1), grad.reshape(-1)
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + eps
                plus = SurrogateProcessor.mse_loss(SurrogateProcessor.forward(model, z), y)
                flat[i] = original - eps
                minus = SurrogateProcessor.mse_loss(SurrogateProcessor.forward(model, z), y)
                flat[i] = original
                numeric = (plus - minus) / (2.0 * eps)
                scale = max(abs(flat_grad[i]), abs(numeric), scale_floor)
                deviation = max(deviation, abs(flat_grad[i] - numeric) / scale)
        return deviation

    @staticmethod
    def predict_basis(model, bounds, kappa_patch):
        """Патч κ длины m -> Φ_j^pred на каноническом патче"""
        kappa_patch = np.asarray(kappa_patch, dtype=np.float64)
        m = model.layer_sizes[0]
        if kappa_patch.shape[-1] != m:
            raise DimensionError("Длина патча проницаемости", expected=m, actual=kappa_patch.shape[-1])
        z = SurrogateProcessor.normalize(kappa_patch, bounds.inputs)
        return SurrogateProcessor.denormalize(SurrogateProcessor.forward(model, z), bounds.outputs)

    @staticmethod
    def mask_prediction(nb, fine, patch):
        """Обратное вложение патча в ω_j и обнуление на ∂ω_j и ∂Ω"""
        values = GridProcessor.canonical_patch_extract(nb, patch)
        values[nb.local_boundary] = 0.0
        values[fine.boundary_node_flags[nb.fine_node_indices]] = 0.0
        return values

    @staticmethod
    def rmse(model, bounds, inputs, targets):
        """sqrt(Σ‖ŷ - y‖² / Σ‖y‖²) в исходных единицах; nan при нулевых целях"""
        predictions = SurrogateProcessor.predict_basis(model, bounds, np.atleast_2d(inputs))
        targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        denominator = float(np.sum(targets ** 2))
        if denominator == 0.0:
            logger.warning("⚠️ RMSE не определена: все цели нулевые")
            return np.nan
        return float(np.sqrt(np.sum((predictions - targets) ** 2) / denominator))

    @staticmethod
    def layer_sizes_for(m, hidden_widths):
        return [int(m)] + [int(width) for width in hidden_widths] + [int(m)]

    @staticmethod
    def hyperparameter_sweep(inputs, targets, test_inputs, test_targets, cfg, epochs_grid, batch_grid):
        """RMSE базиса на тесте для сетки (эпохи, размер пакета)"""
        rows = []
        m = inputs.shape[1]
        for epochs in epochs_grid:
            for batch_size in batch_grid:
                run_cfg = cfg.model_copy(update={"epochs": int(epochs), "batch_size": int(batch_size)})
                model = SurrogateProcessor.init_model(
                    SurrogateProcessor.layer_sizes_for(m, cfg.hidden_widths), cfg.seed)
                result = SurrogateProcessor.train(model, inputs, targets, run_cfg)
                rows.append({
                    "epochs": int(epochs),
                    "batch_size": int(batch_size),
                    "rmse": SurrogateProcessor.rmse(result.model, result.bounds, test_inputs, test_targets),
                    "final_train_loss": result.history[-1]["train_loss"],
                })
        return rows
