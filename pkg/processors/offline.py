from dataclasses import dataclass, field
from typing import List

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from logger.logger import get_logger
from processors.errors import ConfigurationError, NumericalError, RankDeficiencyError
from processors.fine_solver import FineScaleSolver, PicardResult, SolveTrace
from processors.random_fields import RandomFieldProcessor

logger = get_logger('offline')

GRAM_RANK_TOLERANCE = 1e-12
PIVOT_RATIO_TOLERANCE = 1e-13


@dataclass(eq=False)
class PartitionOfUnity:
    """χ_j по строкам: форма (N_v, N_h)"""
    functions: np.ndarray = field(repr=False)
    gradient_energy: np.ndarray = field(repr=False)

    def __getitem__(self, j):
        return self.functions[j]


@dataclass(eq=False)
class SnapshotSpace:
    vertex_index: int
    vectors: np.ndarray = field(repr=False)
    triangle_conductivity: np.ndarray = field(repr=False)
    stiffness: sp.csr_matrix = field(repr=False)

    @property
    def size(self):
        return self.vectors.shape[1]


@dataclass(eq=False)
class SpectralBasis:
    """Nb младших собственных пар локальной задачи a^j ψ = λ s^j ψ"""
    vertex_index: int
    eigenvalues: np.ndarray
    vectors: np.ndarray = field(repr=False)
    coordinates: np.ndarray = field(repr=False)
    projected_stiffness: np.ndarray = field(repr=False)
    projected_mass: np.ndarray = field(repr=False)
    warnings: List[str] = field(default_factory=list)


@dataclass(eq=False)
class OfflineSpace:
    """Оператор понижения R_g: столбцы упорядочены по (j, k)"""
    operator: sp.csc_matrix = field(repr=False)
    column_owner: np.ndarray = field(repr=False)
    bases: List[SpectralBasis] = field(default_factory=list, repr=False)
    n_per_neighborhood: int = 0

    @property
    def n_columns(self):
        return self.operator.shape[1]


@dataclass(eq=False)
class CoarseSolution:
    coefficients: np.ndarray
    fine: np.ndarray = field(repr=False)
    kept_columns: np.ndarray = field(repr=False)


class OfflineProcessor:
    """Разбиение единицы, снимки, спектральные базисы и грубые решения"""

    @staticmethod
    def local_stiffness(fine, triangles, local_triangles, n_local, triangle_coef):
        local = FineScaleSolver.element_stiffness(fine.gradients[triangles], fine.areas[triangles], triangle_coef)
        return FineScaleSolver.scatter(local_triangles, local, n_local)

    @staticmethod
    def local_mass(fine, triangles, local_triangles, n_local, weights=None):
        local = FineScaleSolver.element_mass(fine.areas[triangles], weights)
        return FineScaleSolver.scatter(local_triangles, local, n_local)

    @staticmethod
    def harmonic_extension(matrix, interior, boundary, boundary_values):
        """Решение A_II u_I = -A_IB u_B для одного или нескольких наборов граничных данных"""
        matrix = matrix.tocsr()
        a_ii = matrix[interior][:, interior].tocsc()
        a_ib = matrix[interior][:, boundary]
        rhs = -(a_ib @ boundary_values)
        solution = spla.splu(a_ii).solve(np.asarray(rhs, dtype=np.float64))
        if not np.all(np.isfinite(solution)):
            raise NumericalError("Локальная задача вернула неконечное решение")
        return solution

    @staticmethod
    def partition_of_unity(fine, coarse):
        """
        Разбиение единицы χ_j

        В каждом блоке K ⊂ ω_j решается дискретная задача Лапласа с
        билинейными граничными данными χ_j⁰ (1 в x_j, 0 в остальных углах).
        """
        n = fine.n_cells_per_side
        k = coarse.fine_cells_per_block_side
        nc = coarse.n_blocks_per_side
        functions = np.zeros((coarse.n_vertices, fine.n_nodes))

        for block_index, corners in enumerate(coarse.blocks):
            bx, by = block_index % nc, block_index // nc
            gx, gy = np.meshgrid(np.arange(bx * k, (bx + 1) * k + 1), np.arange(by * k, (by + 1) * k + 1))
            gx, gy = gx.ravel(), gy.ravel()
            nodes = gy * (n + 1) + gx

            cx, cy = np.meshgrid(np.arange(bx * k, (bx + 1) * k), np.arange(by * k, (by + 1) * k))
            cells = (cy * n + cx).ravel()
            triangles = np.concatenate([2 * cells, 2 * cells + 1])
            to_local = np.full(fine.n_nodes, -1, dtype=np.int64)
            to_local[nodes] = np.arange(len(nodes))
            local_triangles = to_local[fine.triangles[triangles]]

            matrix = OfflineProcessor.local_stiffness(
                fine, triangles, local_triangles, len(nodes), np.ones(len(triangles)))
            on_edge = (gx == bx * k) | (gx == (bx + 1) * k) | (gy == by * k) | (gy == (by + 1) * k)
            boundary, interior = np.flatnonzero(on_edge), np.flatnonzero(~on_edge)

            s = (gx - bx * k) / k
            t = (gy - by * k) / k
            # углы блока: левый нижний, правый нижний, правый верхний, левый верхний
            hats = np.stack([(1 - s) * (1 - t), s * (1 - t), s * t, (1 - s) * t], axis=1)
            try:
                inner = OfflineProcessor.harmonic_extension(matrix, interior, boundary, hats[boundary])
            except (NumericalError, RuntimeError) as e:
                raise NumericalError(f"Разбиение единицы: {e}", block=block_index, vertices=tuple(corners)) from e

            for corner, vertex in enumerate(corners):
                values = hats[:, corner].copy()
                values[interior] = inner[:, corner]
                functions[vertex, nodes] = values

        gradients = np.einsum('ltk,tkd->ltd', functions[:, fine.triangles], fine.gradients)
        gradient_energy = np.sum(gradients ** 2, axis=(0, 2))
        return PartitionOfUnity(functions, gradient_energy)

    @staticmethod
    def snapshot_space(nb, fine, conductivity):
        """
        Пространство снимков: ϰ-гармонические продолжения граничных дельта-функций

        Args:
            nb (Neighborhood): окрестность ω_j
            fine (FineGrid): мелкая сетка
            conductivity (ndarray): ϰ в узлах мелкой сетки

        Returns:
            SnapshotSpace: N_J векторов в локальной нумерации
        """
        conductivity = np.asarray(conductivity, dtype=np.float64)
        coef = FineScaleSolver.triangle_mean(fine.triangles[nb.triangle_indices], conductivity)
        if np.any(coef <= 0):
            raise NumericalError("Гидропроводность в окрестности должна быть положительной", vertex=nb.vertex_index)
        stiffness = OfflineProcessor.local_stiffness(
            fine, nb.triangle_indices, nb.local_triangles, nb.n_local, coef)

        boundary, interior = nb.local_boundary, nb.local_interior
        vectors = np.zeros((nb.n_local, len(boundary)))
        vectors[boundary, np.arange(len(boundary))] = 1.0
        try:
            vectors[interior] = OfflineProcessor.harmonic_extension(
                stiffness, interior, boundary, np.eye(len(boundary)))
        except (NumericalError, RuntimeError) as e:
            raise NumericalError(f"Задача снимков: {e}", vertex=nb.vertex_index) from e
        return SnapshotSpace(nb.vertex_index, vectors, coef, stiffness)

    @staticmethod
    def generalized_eigh(a, s):
        """
        Обобщенная симметричная задача через разложение Холецкого матрицы s

        Returns:
            tuple: (собственные значения по возрастанию, векторы, предупреждения)
        """
        warnings = []
        try:
            lower = scipy.linalg.cholesky(s, lower=True)
        except np.linalg.LinAlgError:
            ridge = 1e-12 * np.trace(s) / s.shape[0]
            warnings.append(f"матрица s вырождена, добавлена регуляризация {ridge:.3e}")
            lower = scipy.linalg.cholesky(s + ridge * np.eye(s.shape[0]), lower=True)

        half = scipy.linalg.solve_triangular(lower, a, lower=True)
        reduced = scipy.linalg.solve_triangular(lower, half.T, lower=True)
        reduced = 0.5 * (reduced + reduced.T)
        eigenvalues, eigenvectors = scipy.linalg.eigh(reduced)
        order = np.argsort(eigenvalues, kind="stable")
        vectors = scipy.linalg.solve_triangular(lower.T, eigenvectors[:, order], lower=False)
        return eigenvalues[order], vectors, warnings

    @staticmethod
    def spectral_basis(snap, pou, nb, fine, nb_count):
        """
        Локальная спектральная задача в пространстве снимков

        Args:
            snap (SnapshotSpace): снимки окрестности (содержат ϰ по треугольникам)
            pou (PartitionOfUnity): разбиение единицы (Σ_l |∇χ_l|² по треугольникам)
            nb (Neighborhood): окрестность
            fine (FineGrid): мелкая сетка
            nb_count (int): число сохраняемых пар Nb

        Returns:
            SpectralBasis: Nb младших пар, s-ортонормированных
        """
        if not 0 < nb_count <= snap.size:
            raise ConfigurationError(f"Nb={nb_count} должно лежать в [1, {snap.size}] для вершины {nb.vertex_index}")

        weights = snap.triangle_conductivity * pou.gradient_energy[nb.triangle_indices]
        weighted_mass = OfflineProcessor.local_mass(fine, nb.triangle_indices, nb.local_triangles, nb.n_local, weights)

        psi = snap.vectors
        a_proj = psi.T @ (snap.stiffness @ psi)
        s_proj = psi.T @ (weighted_mass @ psi)
        a_proj = 0.5 * (a_proj + a_proj.T)
        s_proj = 0.5 * (s_proj + s_proj.T)

        try:
            eigenvalues, coordinates, warnings = OfflineProcessor.generalized_eigh(a_proj, s_proj)
        except (np.linalg.LinAlgError, ValueError) as e:
            raise NumericalError("Спектральная задача не решена", vertex=nb.vertex_index) from e
        for message in warnings:
            logger.warning(f"⚠️ Вершина {nb.vertex_index}: {message}")

        coordinates = coordinates[:, :nb_count]
        return SpectralBasis(
            vertex_index=nb.vertex_index,
            eigenvalues=eigenvalues[:nb_count],
            vectors=psi @ coordinates,
            coordinates=coordinates,
            projected_stiffness=a_proj,
            projected_mass=s_proj,
            warnings=warnings,
        )

    @staticmethod
    def offline_space(fine, neighborhoods, pou, bases):
        """Столбцы χ_j ⊙ ψ_k^j в глобальной нумерации, нули на ∂Ω"""
        if len(bases) != len(neighborhoods):
            raise ConfigurationError(f"Собственные пары есть для {len(bases)} из {len(neighborhoods)} окрестностей")
        rows, cols, data, owners = [], [], [], []
        column = 0
        for nb, basis in zip(neighborhoods, bases):
            chi = pou.functions[nb.vertex_index, nb.fine_node_indices]
            inside = ~fine.boundary_node_flags[nb.fine_node_indices]
            for k in range(basis.vectors.shape[1]):
                values = chi * basis.vectors[:, k]
                support = inside & (values != 0.0)
                rows.append(nb.fine_node_indices[support])
                cols.append(np.full(int(support.sum()), column))
                data.append(values[support])
                owners.append(nb.vertex_index)
                column += 1
        operator = sp.csc_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(fine.n_nodes, column),
        )
        n_per = bases[0].vectors.shape[1] if bases else 0
        return OfflineSpace(operator, np.asarray(owners), list(bases), n_per)

    @staticmethod
    def build_offline_space(fine, neighborhoods, pou, kappa, nb_count, p_state=None):
        """Офлайн-пространство по состоянию линеаризации p_state (по умолчанию p = 0)"""
        p_state = np.zeros(fine.n_nodes) if p_state is None else p_state
        conductivity = RandomFieldProcessor.conductivity(kappa, p_state)
        bases = []
        for nb in neighborhoods:
            snap = OfflineProcessor.snapshot_space(nb, fine, conductivity)
            bases.append(OfflineProcessor.spectral_basis(snap, pou, nb, fine, nb_count))
        return OfflineProcessor.offline_space(fine, neighborhoods, pou, bases)

    @staticmethod
    def find_rank_defect(operator, column_owner):
        """Окрестность, чьи столбцы линейно зависимы (по спектру матрицы Грама)"""
        for owner in np.unique(column_owner):
            columns = np.flatnonzero(column_owner == owner)
            block = operator[:, columns]
            gram = (block.T @ block).toarray()
            eigenvalues = scipy.linalg.eigvalsh(gram)
            if eigenvalues[0] <= GRAM_RANK_TOLERANCE * max(eigenvalues[-1], 1e-300):
                return int(owner), columns
        return None, None

    @staticmethod
    def coarse_solve(operator, a_fine, b_fine, m_fine=None, p_prev_fine=None, tau=None, column_owner=None):
        """
        Грубое решение в пространстве столбцов R

        A_c = Rᵀ A R, b_c = Rᵀ b; при конечном τ добавляются Rᵀ M R / τ и
        Rᵀ M p_prev / τ (p_prev - мелкое представление предыдущего состояния).

        Returns:
            CoarseSolution: коэффициенты и мелкое представление R p_c
        """
        operator = sp.csc_matrix(operator)
        norms = np.sqrt(np.asarray(operator.multiply(operator).sum(axis=0))).ravel()
        kept = np.flatnonzero(norms > 0.0)
        reduced = operator[:, kept]

        matrix = (reduced.T @ (a_fine @ reduced))
        rhs = reduced.T @ np.asarray(b_fine, dtype=np.float64)
        if tau is not None:
            matrix = matrix + (reduced.T @ (m_fine @ reduced)) / tau
            rhs = rhs + reduced.T @ (m_fine @ p_prev_fine) / tau
        matrix = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix)
        matrix = 0.5 * (matrix + matrix.T)

        owners = np.arange(operator.shape[1]) if column_owner is None else np.asarray(column_owner)
        try:
            factor = scipy.linalg.cho_factor(matrix)
            pivots = np.diag(factor[0]) ** 2
            ill_conditioned = pivots.size > 0 and pivots.min() <= PIVOT_RATIO_TOLERANCE * pivots.max()
        except np.linalg.LinAlgError:
            factor, ill_conditioned = None, True

        if ill_conditioned:
            owner, columns = OfflineProcessor.find_rank_defect(reduced, owners[kept])
            if owner is not None:
                raise RankDeficiencyError(
                    "Оператор понижения не имеет полного ранга", vertex=owner, columns=tuple(kept[columns]))

        if factor is None:
            logger.warning("⚠️ Грубая матрица вырождена, решение методом наименьших квадратов")
            reduced_coefficients = scipy.linalg.lstsq(matrix, rhs)[0]
        else:
            if ill_conditioned:
                logger.warning(f"⚠️ Грубая матрица плохо обусловлена: min/max ведущих элементов "
                               f"{pivots.min() / pivots.max():.3e}")
            reduced_coefficients = scipy.linalg.cho_solve(factor, rhs)

        coefficients = np.zeros(operator.shape[1])
        coefficients[kept] = reduced_coefficients
        return CoarseSolution(coefficients, reduced @ reduced_coefficients, kept)

    @staticmethod
    def picard_solve(space, fine, kappa, f, p_prev_time, cfg, mass=None):
        """Итерации Пикара в V_off; возвращает мелкие представления итераций"""
        mass = FineScaleSolver.assemble_mass(fine) if mass is None else mass
        tau = None if cfg.steady else cfg.tau
        p_prev_time = np.zeros(fine.n_nodes) if p_prev_time is None else p_prev_time
        p_current = p_prev_time.copy() if cfg.initial_guess_mode == "previous_step" else np.zeros(fine.n_nodes)

        result = PicardResult(p_current)
        for iteration in range(1, cfg.max_iters + 1):
            matrix, rhs = FineScaleSolver.linear_system(fine, kappa, p_current, f, p_prev_time, None, mass)
            try:
                solution = OfflineProcessor.coarse_solve(
                    space.operator, matrix, rhs, mass, p_prev_time, tau, space.column_owner)
            except NumericalError as e:
                raise NumericalError(f"Грубое решение не получено: {e}", iteration=iteration) from e

            result.relative_change, _ = FineScaleSolver.relative_change(solution.fine, p_current)
            result.converged = FineScaleSolver.stopping_criterion(solution.fine, p_current, cfg.delta0)
            result.iterates.append(solution.fine)
            result.previous_iterate = p_current
            result.pressure = solution.fine
            result.iterations = iteration
            p_current = solution.fine
            if result.converged:
                break

        if not result.converged:
            logger.warning(f"⚠️ Офлайн-Пикар не сошелся за {cfg.max_iters} итераций")
        return result

    @staticmethod
    def offline_picard_solve(fine, neighborhoods, pou, kappa, f, cfg, nb_count, space=None):
        """
        Офлайн GMsFEM с линеаризацией Пикара

        Пространство V_off строится один раз по начальному состоянию p = 0.

        Args:
            f: значения источника (стационарный режим) или f(t) -> значения

        Returns:
            tuple: (OfflineSpace, SolveTrace, список PicardResult по шагам)
        """
        space = space or OfflineProcessor.build_offline_space(fine, neighborhoods, pou, kappa, nb_count)
        mass = FineScaleSolver.assemble_mass(fine)
        trace, results = SolveTrace(), []

        if cfg.steady:
            values = f(0.0) if callable(f) else f
            result = OfflineProcessor.picard_solve(space, fine, kappa, values, None, cfg, mass)
            trace.append(result, 0.0)
            results.append(result)
            return space, trace, results

        p_prev = np.zeros(fine.n_nodes)
        for step in range(1, cfg.n_steps + 1):
            time = step * cfg.tau
            values = f(time) if callable(f) else f
            try:
                result = OfflineProcessor.picard_solve(space, fine, kappa, values, p_prev, cfg, mass)
            except NumericalError as e:
                raise NumericalError(f"Офлайн-шаг не выполнен: {e}", time_step=step) from e
            trace.append(result, time)
            results.append(result)
            p_prev = result.pressure
        return space, trace, results
