from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from logger.logger import get_logger
from processors.errors import ConfigurationError, NumericalError, NumericalInputError
from processors.random_fields import RandomFieldProcessor

logger = get_logger('fine_solver')

DENSE_LIMIT = 400
CG_RTOL = 1e-12

# элементная матрица масс P1: |T|/12 * [[2,1,1],[1,2,1],[1,1,2]]
_MASS_PATTERN = (np.ones((3, 3)) + np.eye(3)) / 12.0


@dataclass
class PicardResult:
    pressure: np.ndarray = field(repr=False)
    iterations: int = 0
    relative_change: float = np.inf
    converged: bool = False
    iterates: List[np.ndarray] = field(default_factory=list, repr=False)
    # предпоследняя итерация (состояние линеаризации последнего шага)
    previous_iterate: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass
class SolveTrace:
    """Траектория принятых состояний по шагам времени"""
    states: List[np.ndarray] = field(default_factory=list, repr=False)
    iterations: List[int] = field(default_factory=list)
    relative_changes: List[float] = field(default_factory=list)
    converged: List[bool] = field(default_factory=list)
    times: List[float] = field(default_factory=list)

    def append(self, result, time=0.0):
        self.states.append(result.pressure)
        self.iterations.append(result.iterations)
        self.relative_changes.append(result.relative_change)
        self.converged.append(result.converged)
        self.times.append(time)

    @property
    def n_steps(self):
        return len(self.states)


class FineScaleSolver:
    """Сборка P1-систем и итерации Пикара с неявной схемой Эйлера"""

    @staticmethod
    def element_stiffness(gradients, areas, coefficients):
        """Локальные матрицы жесткости ϰ̄_T ∇φ_i·∇φ_j |T|, форма (T, 3, 3)"""
        local = np.einsum('tik,tjk->tij', gradients, gradients)
        return local * (coefficients * areas)[:, None, None]

    @staticmethod
    def element_mass(areas, weights=None):
        weights = np.ones_like(areas) if weights is None else weights
        return _MASS_PATTERN[None, :, :] * (weights * areas)[:, None, None]

    @staticmethod
    def scatter(triangles, local, n):
        """Сложение локальных матриц в CSR; порядок суммирования фиксирован"""
        rows = np.repeat(triangles, 3, axis=1).ravel()
        cols = np.tile(triangles, (1, 3)).ravel()
        matrix = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
        matrix.sum_duplicates()
        return matrix

    @staticmethod
    def triangle_mean(triangles, nodal):
        return nodal[triangles].mean(axis=1)

    @staticmethod
    def assemble_stiffness(fine, conductivity):
        """
        Матрица жесткости с коэффициентом ϰ

        Коэффициент на треугольнике - среднее арифметическое трех вершинных
        значений. Граничные условия Дирихле здесь не учитываются.
        """
        conductivity = np.asarray(conductivity, dtype=np.float64)
        bad = np.flatnonzero(~(conductivity > 0))
        if bad.size:
            raise NumericalInputError("Гидропроводность должна быть положительной", node=int(bad[0]))
        coef = FineScaleSolver.triangle_mean(fine.triangles, conductivity)
        local = FineScaleSolver.element_stiffness(fine.gradients, fine.areas, coef)
        return FineScaleSolver.scatter(fine.triangles, local, fine.n_nodes)

    @staticmethod
    def assemble_mass(fine):
        local = FineScaleSolver.element_mass(fine.areas)
        return FineScaleSolver.scatter(fine.triangles, local, fine.n_nodes)

    @staticmethod
    def assemble_load(fine, f, mass=None):
        """Согласованная нагрузка b = M f"""
        mass = FineScaleSolver.assemble_mass(fine) if mass is None else mass
        return mass @ np.asarray(f, dtype=np.float64)

    @staticmethod
    def apply_dirichlet(matrix, rhs, boundary_flags):
        """Симметричное исключение строк и столбцов с единицей на диагонали, p = 0 на ∂Ω"""
        interior = (~np.asarray(boundary_flags)).astype(np.float64)
        keep = sp.diags(interior)
        reduced = (keep @ matrix @ keep + sp.diags(1.0 - interior)).tocsr()
        return reduced, rhs * interior

    @staticmethod
    def solve_spd(matrix, rhs):
        """
        Решение СЛАУ с симметричной положительно определенной матрицей

        До 400 неизвестных - плотный Холецкий, иначе CG с диагональным
        предобуславливателем; при отказе CG - разреженный прямой решатель.
        """
        n = matrix.shape[0]
        if not np.any(rhs):
            return np.zeros(n)
        if n < DENSE_LIMIT:
            dense = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix)
            try:
                return scipy.linalg.cho_solve(scipy.linalg.cho_factor(dense), rhs)
            except np.linalg.LinAlgError as e:
                raise NumericalError("Плотное разложение Холецкого не удалось", size=n) from e

        diagonal = matrix.diagonal()
        preconditioner = spla.LinearOperator((n, n), matvec=lambda x: x / diagonal, dtype=np.float64)
        solution, info = spla.cg(matrix, rhs, rtol=CG_RTOL, atol=0.0, maxiter=20 * n, M=preconditioner)
        if info == 0:
            return solution
        if info < 0:
            raise NumericalError("Отказ метода сопряженных градиентов", size=n, info=info)

        logger.warning(f"⚠️ CG не достиг точности {CG_RTOL} за {20 * n} итераций, прямое решение")
        solution = spla.spsolve(matrix.tocsc(), rhs)
        if not np.all(np.isfinite(solution)):
            raise NumericalError("Прямой решатель вернул неконечный результат", size=n)
        return solution

    @staticmethod
    def relative_change(p_new, p_old):
        """‖p_new - p_old‖ / ‖p_old‖ и признак вырожденной нормы"""
        norm_old = np.linalg.norm(p_old)
        diff = np.linalg.norm(np.asarray(p_new) - np.asarray(p_old))
        if norm_old == 0.0:
            return (0.0 if np.linalg.norm(p_new) == 0.0 else np.inf), True
        return diff / norm_old, False

    @staticmethod
    def stopping_criterion(p_new, p_old, delta0):
        """Критерий остановки Пикара; при нулевой норме p_old - только если p_new тоже ноль"""
        change, _ = FineScaleSolver.relative_change(p_new, p_old)
        return change <= delta0

    @staticmethod
    def linear_system(fine, kappa, p_lin, f, p_prev_time, tau, mass=None):
        """(M/τ + A(ϰ(κ, p_lin))) p = M p_prev/τ + M f; при tau=None без M/τ"""
        mass = FineScaleSolver.assemble_mass(fine) if mass is None else mass
        conductivity = RandomFieldProcessor.conductivity(kappa, p_lin)
        matrix = FineScaleSolver.assemble_stiffness(fine, conductivity)
        rhs = mass @ np.asarray(f, dtype=np.float64)
        if tau is not None:
            matrix = matrix + mass / tau
            rhs = rhs + mass @ p_prev_time / tau
        return matrix, rhs

    @staticmethod
    def picard_solve(fine, kappa, f, p_prev_time, cfg, mass=None):
        """
        Итерации Пикара на одном шаге по времени (или в стационарном режиме)

        Args:
            fine (FineGrid): мелкая сетка
            kappa (PermeabilityField | ndarray): проницаемость
            f (ndarray): источник в узлах
            p_prev_time (ndarray): принятое состояние предыдущего шага
            cfg (PicardConfig): допуск, число итераций, τ, режим

        Returns:
            PicardResult: давление, число итераций, признак сходимости
        """
        mass = FineScaleSolver.assemble_mass(fine) if mass is None else mass
        tau = None if cfg.steady else cfg.tau
        p_prev_time = np.zeros(fine.n_nodes) if p_prev_time is None else np.asarray(p_prev_time, dtype=np.float64)

        if cfg.initial_guess_mode == "previous_step":
            p_current = p_prev_time.copy()
        else:
            p_current = np.zeros(fine.n_nodes)

        result = PicardResult(p_current)
        for iteration in range(1, cfg.max_iters + 1):
            matrix, rhs = FineScaleSolver.linear_system(fine, kappa, p_current, f, p_prev_time, tau, mass)
            matrix, rhs = FineScaleSolver.apply_dirichlet(matrix, rhs, fine.boundary_node_flags)
            try:
                p_next = FineScaleSolver.solve_spd(matrix, rhs)
            except NumericalError as e:
                raise NumericalError(f"Отказ линейного решателя: {e}", iteration=iteration) from e

            result.relative_change, _ = FineScaleSolver.relative_change(p_next, p_current)
            result.converged = FineScaleSolver.stopping_criterion(p_next, p_current, cfg.delta0)
            result.iterates.append(p_next)
            result.previous_iterate = p_current
            result.pressure = p_next
            result.iterations = iteration
            p_current = p_next
            if result.converged:
                break

        if not result.converged:
            logger.warning(
                f"⚠️ Пикар не сошелся за {cfg.max_iters} итераций (изменение {result.relative_change:.3e})"
            )
        return result

    @staticmethod
    def time_march(fine, kappa, source, cfg):
        """
        Неявная схема Эйлера: S шагов, каждый - picard_solve от предыдущего состояния

        Args:
            source (callable): f(t) -> значения в узлах
        """
        if cfg.n_steps < 1:
            raise ConfigurationError(f"time_march требует n_steps >= 1: {cfg.n_steps}")
        mass = FineScaleSolver.assemble_mass(fine)
        trace = SolveTrace()
        p_prev = np.zeros(fine.n_nodes)
        for step in range(1, cfg.n_steps + 1):
            time = step * cfg.tau
            try:
                result = FineScaleSolver.picard_solve(fine, kappa, source(time), p_prev, cfg, mass)
            except NumericalError as e:
                raise NumericalError(f"Шаг по времени не выполнен: {e}", time_step=step) from e
            trace.append(result, time)
            p_prev = result.pressure
        return trace
