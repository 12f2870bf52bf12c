from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
import scipy.linalg

from logger.logger import get_logger
from processors.errors import ConfigurationError, NumericalError, NumericalInputError

logger = get_logger('random_fields')


@dataclass(frozen=True, eq=False)
class KleBasis:
    """Усеченное разложение Карунена-Лоэва: γ_k по невозрастанию, φ_k по столбцам"""
    eigenvalues: np.ndarray = field(repr=False)
    eigenvectors: np.ndarray = field(repr=False)
    total_energy: float = 0.0

    @property
    def n_terms(self) -> int:
        return len(self.eigenvalues)

    @property
    def captured_energy(self) -> float:
        return float(np.sum(self.eigenvalues))


@dataclass(frozen=True, eq=False)
class PermeabilityField:
    values: np.ndarray = field(repr=False)
    kappa_range: Tuple[float, float] = (10.0, 2000.0)
    seed: int = 0


class RandomFieldProcessor:
    """Стохастическая проницаемость и нелинейная гидропроводность"""

    @staticmethod
    def covariance_matrix(nodes, params):
        """C(x, x') = σ² exp(-sqrt(|dx1|²/η1² + |dx2|²/η2²)) по узлам сетки"""
        dx = (nodes[:, None, 0] - nodes[None, :, 0]) / params.eta1
        dy = (nodes[:, None, 1] - nodes[None, :, 1]) / params.eta2
        return params.sigma2 * np.exp(-np.sqrt(dx ** 2 + dy ** 2))

    @staticmethod
    def build_kle(fine, params, energy_fraction=0.95, mass=None):
        """
        Спектральное разложение ковариационного оператора на мелкой сетке

        Решается обобщенная задача (M C M) φ = γ M φ, поэтому φ_iᵀ M φ_j = δ_ij,
        а Σ γ_k = tr(C M).

        Args:
            fine (FineGrid): мелкая сетка
            params (CovarianceParams): σ², η1, η2
            energy_fraction (float): доля сохраняемой энергии из (0, 1]
            mass (csr_matrix, optional): матрица масс сетки

        Returns:
            KleBasis: N_Υ старших собственных пар
        """
        if not 0 < energy_fraction <= 1:
            raise ConfigurationError(f"energy_fraction должна лежать в (0, 1]: {energy_fraction}")
        if mass is None:
            from processors.fine_solver import FineScaleSolver
            mass = FineScaleSolver.assemble_mass(fine)

        cov = RandomFieldProcessor.covariance_matrix(fine.nodes, params)
        weighted = mass @ (mass @ cov).T
        weighted = 0.5 * (weighted + weighted.T)
        try:
            eigenvalues, eigenvectors = scipy.linalg.eigh(weighted, mass.toarray())
        except np.linalg.LinAlgError as e:
            raise NumericalError("Собственное разложение ковариации не сошлось", size=cov.shape[0]) from e

        order = np.argsort(eigenvalues, kind="stable")[::-1]
        eigenvalues = np.clip(eigenvalues[order], 0.0, None)
        eigenvectors = eigenvectors[:, order]

        total = float(np.sum(eigenvalues))
        cumulative = np.cumsum(eigenvalues)
        n_terms = int(np.searchsorted(cumulative, energy_fraction * total * (1 - 1e-14), side="left")) + 1
        n_terms = min(n_terms, len(eigenvalues))

        logger.debug(f"KLE: {n_terms} из {len(eigenvalues)} членов, энергия {cumulative[n_terms - 1] / total:.4f}")
        return KleBasis(eigenvalues[:n_terms].copy(), eigenvectors[:, :n_terms].copy(), total)

    @staticmethod
    def truncate(basis, n_terms):
        return KleBasis(basis.eigenvalues[:n_terms], basis.eigenvectors[:, :n_terms], basis.total_energy)

    @staticmethod
    def record_seed(base_seed, j, sample):
        """u64-зерно записи (base, j, ν) для счетчикового генератора Philox"""
        sequence = np.random.SeedSequence([int(base_seed), int(j), int(sample)])
        return int(sequence.generate_state(1, dtype=np.uint64)[0])

    @staticmethod
    def generator(seed):
        return np.random.Generator(np.random.Philox(int(seed)))

    @staticmethod
    def log_field(basis, zeta):
        """Υ = Σ sqrt(γ_k) ζ_k φ_k"""
        return basis.eigenvectors @ (np.sqrt(basis.eigenvalues) * zeta)

    @staticmethod
    def sample_field(basis, seed, kappa_range=(10.0, 2000.0)):
        """
        Реализация проницаемости κ = exp(a·Υ + b)

        Аффинное отображение переводит [min Υ, max Υ] в [ln κ_min, ln κ_max],
        так что крайние значения диапазона достигаются точно.
        """
        if basis.n_terms == 0:
            raise ConfigurationError("Пустой базис KLE: N_Υ = 0")
        kappa_min, kappa_max = map(float, kappa_range)
        if not kappa_max > kappa_min > 0:
            raise ConfigurationError(f"Требуется κ_max > κ_min > 0: {kappa_range}")

        zeta = RandomFieldProcessor.generator(seed).standard_normal(basis.n_terms)
        upsilon = RandomFieldProcessor.log_field(basis, zeta)

        low, high = upsilon.min(), upsilon.max()
        if high - low < 1e-14:
            values = np.full(len(upsilon), np.sqrt(kappa_min * kappa_max))
        else:
            log_min, log_max = np.log(kappa_min), np.log(kappa_max)
            scale = (log_max - log_min) / (high - low)
            values = np.exp(log_min + scale * (upsilon - low))
            values = np.clip(values, kappa_min, kappa_max)
            values[np.argmin(upsilon)] = kappa_min
            values[np.argmax(upsilon)] = kappa_max

        return PermeabilityField(values, (kappa_min, kappa_max), int(seed))

    @staticmethod
    def conductivity(kappa, p):
        """ϰ(x, p) = κ(x) / (1 + |p|)"""
        values = kappa.values if isinstance(kappa, PermeabilityField) else np.asarray(kappa, dtype=np.float64)
        p = np.asarray(p, dtype=np.float64)
        bad = np.flatnonzero(~np.isfinite(p))
        if bad.size:
            raise NumericalInputError("Неконечное значение давления", node=int(bad[0]))
        return values / (1.0 + np.abs(p))
