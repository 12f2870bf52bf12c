"""
Мультимасштабный конвейер одного поля проницаемости:
офлайн-Пикар -> онлайн-функции (прямо или предсказанием сети) -> шаг Пикара в V_ms
"""

import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from processors.fine_solver import FineScaleSolver
from processors.grids import GridProcessor
from processors.offline import OfflineProcessor
from processors.online import OnlineProcessor
from processors.random_fields import RandomFieldProcessor
from processors.surrogate import SurrogateProcessor


def make_source(name, fine):
    """Источник f(t) -> значения в узлах"""
    x, y = fine.nodes[:, 0], fine.nodes[:, 1]
    if name == "unit":
        values = np.ones(fine.n_nodes)
    elif name == "sincos":
        values = np.sin(np.pi * x) * np.cos(np.pi * y)
    elif name == "zero":
        values = np.zeros(fine.n_nodes)
    else:
        raise ValueError(f"Неизвестный источник: {name}")
    return lambda t: values


@dataclass(eq=False)
class MultiscaleContext:
    """Общие для всех выборок структуры: сетки, окрестности, χ_j, KLE, матрицы"""
    fine: object
    coarse: object
    neighborhoods: list = field(repr=False)
    pou: object = field(repr=False)
    kle: object = field(repr=False)
    mass: object = field(repr=False)
    unit_stiffness: object = field(repr=False)
    kappa_range: tuple = (10.0, 2000.0)

    @classmethod
    def build(cls, cfg):
        fine, coarse = GridProcessor.build_grids(cfg.fine_n, cfg.coarse_n)
        neighborhoods = GridProcessor.neighborhoods(coarse, fine)
        pou = OfflineProcessor.partition_of_unity(fine, coarse)
        mass = FineScaleSolver.assemble_mass(fine)
        kle = RandomFieldProcessor.build_kle(fine, cfg.kle.covariance, cfg.kle.energy_fraction, mass)
        unit_stiffness = FineScaleSolver.assemble_stiffness(fine, np.ones(fine.n_nodes))
        return cls(fine, coarse, neighborhoods, pou, kle, mass, unit_stiffness, tuple(cfg.kle.kappa_range))

    @property
    def patch_size(self):
        return max(nb.canonical_patch_size for nb in self.neighborhoods)

    def sample_field(self, seed):
        return RandomFieldProcessor.sample_field(self.kle, seed, self.kappa_range)

    def kappa_patch(self, kappa, j):
        nb = self.neighborhoods[j]
        return GridProcessor.canonical_patch_embedding(nb, kappa.values[nb.fine_node_indices])

    def phi_patch(self, phi_local, j):
        return GridProcessor.canonical_patch_embedding(self.neighborhoods[j], phi_local)


@dataclass(eq=False)
class SteadyOutcome:
    p_offline: np.ndarray = field(repr=False)
    p_online: Optional[np.ndarray] = field(default=None, repr=False)
    p_predicted: Optional[np.ndarray] = field(default=None, repr=False)
    p_fine: Optional[np.ndarray] = field(default=None, repr=False)
    online_bases: Dict[int, object] = field(default_factory=dict, repr=False)
    predicted_phis: Dict[int, np.ndarray] = field(default_factory=dict, repr=False)
    picard_iterations: int = 0
    timing: Dict[str, List[float]] = field(default_factory=lambda: defaultdict(list))


@dataclass(eq=False)
class TimeOutcome:
    offline: List[np.ndarray] = field(default_factory=list, repr=False)
    online: List[np.ndarray] = field(default_factory=list, repr=False)
    predicted: List[np.ndarray] = field(default_factory=list, repr=False)
    fine: List[np.ndarray] = field(default_factory=list, repr=False)
    events: Dict[int, Dict[int, object]] = field(default_factory=dict, repr=False)
    timing: Dict[str, List[float]] = field(default_factory=lambda: defaultdict(list))


class MultiscalePipeline:
    """Офлайн + онлайн GMsFEM с прямыми и предсказанными онлайн-функциями"""

    def __init__(self, context, nb_count, picard_cfg):
        self.context = context
        self.nb_count = nb_count
        self.cfg = picard_cfg

    def direct_bases(self, kappa, p_lin, p_prev, p_next, f, tau, vertices, timing, tag=(0, 0)):
        ctx = self.context
        conductivity = RandomFieldProcessor.conductivity(kappa, p_lin)
        bases = {}
        for j in vertices:
            started = time.perf_counter()
            bases[j] = OnlineProcessor.online_basis(
                ctx.neighborhoods[j], ctx.fine, ctx.pou, conductivity, p_prev, p_next, f, tau, tag)
            timing["direct_basis_s"].append(time.perf_counter() - started)
        return bases

    def predicted_phis(self, kappa, predictor, timing):
        """predictor(j, патч κ) -> патч Φ_j; результат маскируется в ω_j"""
        ctx = self.context
        phis = {}
        for j, nb in enumerate(ctx.neighborhoods):
            started = time.perf_counter()
            patch = predictor(j, ctx.kappa_patch(kappa, j))
            phis[j] = SurrogateProcessor.mask_prediction(nb, ctx.fine, patch)
            timing["predicted_basis_s"].append(time.perf_counter() - started)
        return phis

    def run_steady(self, kappa, f, predictor=None, vertices=None, with_fine=False, online=True):
        """
        Стационарный прогон

        Args:
            kappa (PermeabilityField): поле проницаемости
            f (ndarray): источник
            predictor (callable, optional): предсказатель онлайн-функций
            vertices (list, optional): окрестности для прямых онлайн-функций (по умолчанию все)
            with_fine (bool): дополнительно решить мелкую задачу
            online (bool): выполнить онлайн-шаг в V_ms

        Returns:
            SteadyOutcome
        """
        ctx = self.context
        outcome = SteadyOutcome(None)
        vertices = range(len(ctx.neighborhoods)) if vertices is None else vertices

        started = time.perf_counter()
        space, _, results = OfflineProcessor.offline_picard_solve(
            ctx.fine, ctx.neighborhoods, ctx.pou, kappa, f, self.cfg, self.nb_count)
        offline_seconds = time.perf_counter() - started
        result = results[0]
        outcome.p_offline = result.pressure
        outcome.picard_iterations = result.iterations
        p_lin, p_next = result.previous_iterate, result.pressure

        started = time.perf_counter()
        outcome.online_bases = self.direct_bases(kappa, p_lin, None, p_next, f, None, vertices, outcome.timing)
        direct = None
        if online:
            direct = enriched = OnlineProcessor.enrich(
                space, ctx.fine, ctx.neighborhoods, ctx.pou, outcome.online_bases)
            outcome.p_online = OnlineProcessor.online_picard_step(
                enriched, ctx.fine, kappa, f, None, p_lin, None, ctx.mass).fine
            outcome.timing["online_solve_s"].append(offline_seconds + time.perf_counter() - started)

        if predictor is not None:
            started = time.perf_counter()
            outcome.predicted_phis = self.predicted_phis(kappa, predictor, outcome.timing)
            enriched = OnlineProcessor.append_online_columns(
                space, ctx.fine, ctx.neighborhoods, outcome.predicted_phis)
            if direct is not None:
                _check_shared_offline(direct, enriched)
            outcome.p_predicted = OnlineProcessor.online_picard_step(
                enriched, ctx.fine, kappa, f, None, p_lin, None, ctx.mass).fine
            outcome.timing["predicted_solve_s"].append(offline_seconds + time.perf_counter() - started)

        if with_fine:
            outcome.p_fine = FineScaleSolver.picard_solve(ctx.fine, kappa, f, None, self.cfg, ctx.mass).pressure
        return outcome

    def run_time(self, kappa, source, schedule, predictors=None, stop_step=None, vertices=None, with_fine=False):
        """
        Нестационарный прогон: офлайн-траектория p_off,s ведет марш, на каждом
        шаге - один шаг Пикара в текущем обогащенном пространстве

        Args:
            source (callable): f(t)
            schedule (tuple): шаги обогащения
            predictors (dict, optional): шаг -> предсказатель
            stop_step (int, optional): остановиться после онлайн-функций этого шага (генерация данных)
            vertices (list, optional): окрестности для прямых онлайн-функций

        Returns:
            TimeOutcome
        """
        ctx = self.context
        cfg = self.cfg
        tau = cfg.tau
        outcome = TimeOutcome()
        vertices = list(range(len(ctx.neighborhoods))) if vertices is None else list(vertices)
        predictors = predictors or {}

        # при генерации данных офлайн-траектория нужна только до события stop_step
        offline_cfg = cfg if stop_step is None else cfg.model_copy(update={"n_steps": stop_step})
        started = time.perf_counter()
        space, _, results = OfflineProcessor.offline_picard_solve(
            ctx.fine, ctx.neighborhoods, ctx.pou, kappa, source, offline_cfg, self.nb_count)
        offline_seconds = time.perf_counter() - started
        outcome.offline = [result.pressure for result in results]

        if stop_step is not None:
            result = results[-1]
            p_prev = results[-2].pressure if len(results) > 1 else np.zeros(ctx.fine.n_nodes)
            outcome.events[stop_step] = self.direct_bases(
                kappa, result.previous_iterate, p_prev, result.pressure, source(stop_step * tau), tau, vertices,
                outcome.timing, (stop_step, result.iterations))
            return outcome

        direct_space = predicted_space = None
        direct_seconds = predicted_seconds = 0.0
        p_prev = np.zeros(ctx.fine.n_nodes)
        for step, result in enumerate(results, start=1):
            f = source(step * tau)
            p_lin, p_next = result.previous_iterate, result.pressure

            started = time.perf_counter()
            if step in schedule:
                bases = self.direct_bases(kappa, p_lin, p_prev, p_next, f, tau, vertices, outcome.timing,
                                          (step, result.iterations))
                outcome.events[step] = bases
                # онлайн-столбцы предыдущего события заменяются
                direct_space = OnlineProcessor.enrich(space, ctx.fine, ctx.neighborhoods, ctx.pou, bases)
            direct = OnlineProcessor.online_picard_step(
                space if direct_space is None else direct_space, ctx.fine, kappa, f, p_prev, p_lin, tau, ctx.mass)
            direct_seconds += time.perf_counter() - started
            outcome.online.append(direct.fine)

            if predictors:
                started = time.perf_counter()
                if step in schedule and step in predictors:
                    phis = self.predicted_phis(kappa, predictors[step], outcome.timing)
                    predicted_space = OnlineProcessor.append_online_columns(
                        space, ctx.fine, ctx.neighborhoods, phis)
                    _check_shared_offline(direct_space, predicted_space)
                predicted = OnlineProcessor.online_picard_step(
                    space if predicted_space is None else predicted_space,
                    ctx.fine, kappa, f, p_prev, p_lin, tau, ctx.mass)
                predicted_seconds += time.perf_counter() - started
                outcome.predicted.append(predicted.fine)
            p_prev = p_next

        outcome.timing["online_solve_s"].append(offline_seconds + direct_seconds)
        if predictors:
            outcome.timing["predicted_solve_s"].append(offline_seconds + predicted_seconds)
        if with_fine:
            outcome.fine = FineScaleSolver.time_march(ctx.fine, kappa, source, cfg).states
        return outcome


def _check_shared_offline(direct, predicted):
    """Оба пространства обязаны иметь один и тот же офлайн-блок"""
    difference = direct.offline_block - predicted.offline_block
    assert difference.count_nonzero() == 0, "офлайн-блоки прямого и предсказанного пространств различаются"
