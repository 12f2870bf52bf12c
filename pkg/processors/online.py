from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from config import ENRICHMENT_STEPS
from logger.logger import get_logger
from processors.errors import ConfigurationError, NumericalError
from processors.fine_solver import FineScaleSolver
from processors.offline import OfflineProcessor

logger = get_logger('online')

COLLAPSE_TOLERANCE = 1e-8


@dataclass(eq=False)
class OnlineBasis:
    """Онлайн-функция окрестности: η_j (ноль на ∂ω_j), Φ_j = χ_j η_j, r_j = ‖η_j‖_{V_j}"""
    vertex_index: int
    eta: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    residual_norm: float = 0.0
    state_tag: Tuple[int, int] = (0, 0)


@dataclass(eq=False)
class EnrichedSpace:
    """V_off ⊕ span{Φ_j}: сначала все офлайн-столбцы, затем по одному онлайн-столбцу на вершину"""
    offline: object = field(repr=False)
    operator: sp.csc_matrix = field(repr=False)
    column_owner: np.ndarray = field(repr=False)
    online_vertices: List[int] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    @property
    def n_columns(self):
        return self.operator.shape[1]

    @property
    def offline_block(self):
        return self.operator[:, :self.offline.n_columns]


class OnlineProcessor:
    """Онлайн-обогащение по невязке и заключительный шаг Пикара"""

    @staticmethod
    def local_matrices(nb, fine, conductivity):
        coef = FineScaleSolver.triangle_mean(fine.triangles[nb.triangle_indices], np.asarray(conductivity))
        stiffness = OfflineProcessor.local_stiffness(fine, nb.triangle_indices, nb.local_triangles, nb.n_local, coef)
        mass = OfflineProcessor.local_mass(fine, nb.triangle_indices, nb.local_triangles, nb.n_local)
        return stiffness, mass

    @staticmethod
    def local_residual(nb, fine, conductivity, p_prev_time, p_next, f, tau=None):
        """
        Невязка R^j(v) на внутренних тестовых функциях ω_j

        Args:
            conductivity (ndarray): ϰ(κ, p_offⁿ) в узлах мелкой сетки
            p_prev_time (ndarray): p_off,s (не используется при tau=None)
            p_next (ndarray): p_offⁿ⁺¹
            f (ndarray): источник в узлах
            tau (float | None): шаг по времени; None - стационарный режим

        Returns:
            ndarray: значения невязки во внутренних узлах ω_j
        """
        nodes = nb.fine_node_indices
        stiffness, mass = OnlineProcessor.local_matrices(nb, fine, conductivity)
        p_local = np.asarray(p_next)[nodes]
        residual = mass @ np.asarray(f, dtype=np.float64)[nodes] - stiffness @ p_local
        if tau is not None:
            residual += mass @ (np.asarray(p_prev_time)[nodes] - p_local) / tau
        return residual[nb.local_interior]

    @staticmethod
    def online_eta(nb, fine, conductivity, tau, residual):
        """
        Решение d_n^j(η, v) = R^j(v), η = 0 на ∂ω_j

        Returns:
            tuple: (η в локальной нумерации, r_j = sqrt(d_n^j(η, η)))
        """
        eta = np.zeros(nb.n_local)
        residual = np.asarray(residual, dtype=np.float64)
        if not np.any(residual):
            return eta, 0.0

        stiffness, mass = OnlineProcessor.local_matrices(nb, fine, conductivity)
        operator = stiffness if tau is None else stiffness + mass / tau
        interior = nb.local_interior
        block = operator.tocsr()[interior][:, interior].tocsc()
        try:
            eta[interior] = spla.splu(block).solve(residual)
        except RuntimeError as e:
            raise NumericalError("Локальная онлайн-задача не решена", vertex=nb.vertex_index) from e
        if not np.all(np.isfinite(eta)):
            raise NumericalError("Онлайн-функция неконечна", vertex=nb.vertex_index)

        energy = float(eta[interior] @ (block @ eta[interior]))
        return eta, float(np.sqrt(max(energy, 0.0)))

    @staticmethod
    def online_basis(nb, fine, pou, conductivity, p_prev_time, p_next, f, tau=None, state_tag=(0, 0)):
        """Невязка -> η_j -> Φ_j = χ_j η_j для одной окрестности"""
        residual = OnlineProcessor.local_residual(nb, fine, conductivity, p_prev_time, p_next, f, tau)
        eta, norm = OnlineProcessor.online_eta(nb, fine, conductivity, tau, residual)
        phi = pou.functions[nb.vertex_index, nb.fine_node_indices] * eta
        return OnlineBasis(nb.vertex_index, eta, phi, norm, tuple(state_tag))

    @staticmethod
    def append_online_columns(offline, fine, neighborhoods, phis):
        """
        Добавление онлайн-столбцов (Φ_j в локальной нумерации) после офлайн-столбцов

        Столбец, почти лежащий в офлайн-пространстве, сохраняется, в
        предупреждения записывается его дефект Грама.
        """
        by_vertex = {nb.vertex_index: nb for nb in neighborhoods}
        dense_offline = offline.operator.toarray()
        q, _ = np.linalg.qr(dense_offline) if dense_offline.shape[1] else (np.zeros((fine.n_nodes, 0)), None)

        columns, owners, vertices, warnings = [], [], [], []
        for j in sorted(phis):
            nb = by_vertex[j]
            column = np.zeros(fine.n_nodes)
            column[nb.fine_node_indices] = phis[j]
            column[fine.boundary_node_flags] = 0.0

            norm = np.linalg.norm(column)
            if norm > 0.0:
                defect = np.linalg.norm(column - q @ (q.T @ column)) / norm
                if defect < COLLAPSE_TOLERANCE:
                    message = f"онлайн-столбец вершины {j} лежит в офлайн-пространстве (дефект {defect:.2e})"
                    warnings.append(message)
                    logger.warning(f"⚠️ {message}")
            columns.append(column)
            owners.append(j)
            vertices.append(j)

        online = sp.csc_matrix(np.column_stack(columns)) if columns else sp.csc_matrix((fine.n_nodes, 0))
        operator = sp.hstack([offline.operator, online], format="csc")
        column_owner = np.concatenate([offline.column_owner, np.asarray(owners, dtype=np.int64)])
        return EnrichedSpace(offline, operator, column_owner, vertices, warnings)

    @staticmethod
    def enrich(offline, fine, neighborhoods, pou, online_bases):
        """
        V_ms = V_off ⊕ span{χ_j η_j}

        Args:
            online_bases (dict | list): OnlineBasis или η_j по вершинам

        Returns:
            EnrichedSpace: N_v·(Nb+1) столбцов
        """
        if isinstance(online_bases, dict):
            items = online_bases.items()
        else:
            items = ((basis.vertex_index, basis) for basis in online_bases)
        phis = {}
        by_vertex = {nb.vertex_index: nb for nb in neighborhoods}
        for j, basis in items:
            eta = basis.eta if isinstance(basis, OnlineBasis) else np.asarray(basis)
            phis[j] = pou.functions[j, by_vertex[j].fine_node_indices] * eta
        return OnlineProcessor.append_online_columns(offline, fine, neighborhoods, phis)

    @staticmethod
    def online_picard_step(enriched, fine, kappa, f, p_off_prev_time, p_off_n, tau=None, mass=None):
        """
        Заключительная итерация Пикара в V_ms при линеаризации ϰ(p_offⁿ)

        Returns:
            CoarseSolution: коэффициенты и мелкое представление p_ms
        """
        mass = FineScaleSolver.assemble_mass(fine) if mass is None else mass
        p_off_prev_time = np.zeros(fine.n_nodes) if p_off_prev_time is None else p_off_prev_time
        matrix, rhs = FineScaleSolver.linear_system(fine, kappa, p_off_n, f, p_off_prev_time, None, mass)
        return OfflineProcessor.coarse_solve(
            enriched.operator, matrix, rhs, mass, p_off_prev_time, tau, enriched.column_owner)

    @staticmethod
    def schedule_enrichment(n_steps, steps=None):
        """Шаги обогащения: по умолчанию {1, 5, 10, 15, 20}, обрезанные до S"""
        if n_steps < 1:
            raise ConfigurationError(f"Расписание обогащения требует S >= 1: S={n_steps}")
        if steps is None:
            return tuple(step for step in ENRICHMENT_STEPS if step <= n_steps)
        steps = tuple(sorted(set(int(step) for step in steps)))
        outside = [step for step in steps if not 1 <= step <= n_steps]
        if outside:
            raise ConfigurationError(f"Шаги обогащения {outside} вне диапазона [1, {n_steps}]")
        return steps
