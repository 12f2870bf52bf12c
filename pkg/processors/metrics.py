from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from logger.logger import get_logger
from processors.errors import ConfigurationError, DimensionError

logger = get_logger('metrics')


@dataclass(eq=False)
class ErrorReport:
    values: np.ndarray = field(repr=False)
    mean: float = 0.0
    minimum: float = 0.0
    maximum: float = 0.0
    highlight: Optional[float] = None

    def as_percent_row(self):
        """Строка таблицы в процентах (только на уровне отчетов)"""
        row = {"mean": 100 * self.mean, "min": 100 * self.minimum, "max": 100 * self.maximum}
        row["one_sample"] = np.nan if self.highlight is None else 100 * self.highlight
        return row


class MetricsProcessor:
    """Относительные ошибки базисов и решений"""

    @staticmethod
    def _ratio(numerator_sq, denominator_sq, what):
        if denominator_sq <= 0.0 and numerator_sq <= 0.0:
            return 0.0
        if denominator_sq <= 0.0:
            logger.warning(f"⚠️ Нулевой знаменатель в {what}: ошибка не определена")
            return np.nan
        return float(np.sqrt(max(numerator_sq, 0.0) / denominator_sq))

    @staticmethod
    def rel_l2_vector(pred, target):
        pred = np.asarray(pred, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        if pred.shape != target.shape:
            raise DimensionError("Формы векторов", expected=target.shape, actual=pred.shape)
        return MetricsProcessor._ratio(np.sum((pred - target) ** 2), np.sum(target ** 2), "l2")

    @staticmethod
    def rel_L2_H1_solution(p_a, p_b, mass, stiffness):
        """
        Относительные ошибки в L² и H¹ (полунорма градиента)

        Args:
            p_a, p_b (ndarray): мелкие представления решений
            mass: матрица масс
            stiffness: матрица жесткости с единичным коэффициентом
        """
        p_a = np.asarray(p_a, dtype=np.float64)
        p_b = np.asarray(p_b, dtype=np.float64)
        d = p_a - p_b
        e_l2 = MetricsProcessor._ratio(d @ (mass @ d), p_b @ (mass @ p_b), "L2")
        e_h1 = MetricsProcessor._ratio(d @ (stiffness @ d), p_b @ (stiffness @ p_b), "H1")
        return e_l2, e_h1

    @staticmethod
    def bochner_errors(traj_a, traj_b, mass, stiffness, tau):
        """Ошибки в L²(0,T; L²) и L²(0,T; H¹) по правилу прямоугольников"""
        if len(traj_a) != len(traj_b) or len(traj_a) == 0:
            raise DimensionError("Длины траекторий", expected=len(traj_b), actual=len(traj_a))
        num_l2 = num_h1 = den_l2 = den_h1 = 0.0
        for a, b in zip(traj_a, traj_b):
            d = np.asarray(a) - np.asarray(b)
            num_l2 += tau * d @ (mass @ d)
            num_h1 += tau * d @ (stiffness @ d)
            den_l2 += tau * b @ (mass @ b)
            den_h1 += tau * b @ (stiffness @ b)
        return (MetricsProcessor._ratio(num_l2, den_l2, "Bochner L2"),
                MetricsProcessor._ratio(num_h1, den_h1, "Bochner H1"))

    @staticmethod
    def aggregate(values, highlight_index=0):
        """Среднее, минимум, максимум и значение выделенной выборки"""
        values = np.asarray(list(values), dtype=np.float64)
        if values.size == 0:
            raise ConfigurationError("Нельзя агрегировать пустой список ошибок")
        highlight = None
        if highlight_index is not None and 0 <= highlight_index < values.size:
            highlight = float(values[highlight_index])
        return ErrorReport(values, float(np.mean(values)), float(np.min(values)), float(np.max(values)), highlight)
