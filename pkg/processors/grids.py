from dataclasses import dataclass, field
from functools import cached_property
from typing import Tuple

import numpy as np

from processors.errors import ConfigurationError, DimensionError


@dataclass(frozen=True, eq=False)
class FineGrid:
    """Мелкая триангуляция единичного квадрата: по два треугольника на ячейку"""
    n_cells_per_side: int
    nodes: np.ndarray = field(repr=False)
    triangles: np.ndarray = field(repr=False)
    boundary_node_flags: np.ndarray = field(repr=False)

    @property
    def h(self) -> float:
        return np.sqrt(2.0) / self.n_cells_per_side

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))

    @cached_property
    def gradients(self) -> np.ndarray:
        """Градиенты барицентрических функций P1, форма (T, 3, 2)"""
        p = self.nodes[self.triangles]
        x, y = p[:, :, 0], p[:, :, 1]
        b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
        c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        two_area = 2.0 * self.areas[:, None]
        return np.stack([b / two_area, c / two_area], axis=2)

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_node_flags)


@dataclass(frozen=True, eq=False)
class CoarseGrid:
    """Квадратная грубая сетка, вложенная в мелкую"""
    n_blocks_per_side: int
    fine_cells_per_block_side: int
    vertices: np.ndarray = field(repr=False)
    blocks: np.ndarray = field(repr=False)

    @property
    def H(self) -> float:
        return 1.0 / self.n_blocks_per_side

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def vertex_position(self, j) -> Tuple[int, int]:
        """(столбец, строка) вершины j"""
        side = self.n_blocks_per_side + 1
        return j % side, j // side


@dataclass(frozen=True, eq=False)
class Neighborhood:
    """Грубая окрестность ω_j: объединение блоков, содержащих вершину x_j"""
    vertex_index: int
    block_indices: Tuple[int, ...]
    fine_node_indices: np.ndarray = field(repr=False)
    patch_boundary_node_indices: np.ndarray = field(repr=False)
    triangle_indices: np.ndarray = field(repr=False)
    patch_positions: np.ndarray = field(repr=False)
    canonical_patch_size: int = 0

    @property
    def n_local(self) -> int:
        return len(self.fine_node_indices)

    @cached_property
    def local_boundary(self) -> np.ndarray:
        """Локальные номера узлов на ∂ω_j"""
        return np.searchsorted(self.fine_node_indices, self.patch_boundary_node_indices)

    @cached_property
    def local_interior(self) -> np.ndarray:
        mask = np.ones(self.n_local, dtype=bool)
        mask[self.local_boundary] = False
        return np.flatnonzero(mask)

    @cached_property
    def local_triangles(self) -> np.ndarray:
        """Треугольники окрестности в локальной нумерации узлов"""
        return self._global_to_local[self._triangles_global]

    # служебное: заполняется GridProcessor.neighborhood
    _triangles_global: np.ndarray = field(default=None, repr=False)
    _global_to_local: np.ndarray = field(default=None, repr=False)


class GridProcessor:
    """Построение вложенных сеток и грубых окрестностей"""

    @staticmethod
    def build_grids(fine_n, coarse_n):
        """
        Построение мелкой триангуляции и грубой сетки

        Args:
            fine_n (int): число мелких ячеек по стороне
            coarse_n (int): число грубых блоков по стороне

        Returns:
            tuple: (FineGrid, CoarseGrid)
        """
        if fine_n <= 0 or coarse_n <= 0:
            raise ConfigurationError(f"Размеры сеток должны быть положительными: fine_n={fine_n}, coarse_n={coarse_n}")
        if fine_n % coarse_n != 0:
            raise ConfigurationError(f"coarse_n={coarse_n} не делит fine_n={fine_n}")
        per_block = fine_n // coarse_n
        if per_block < 2:
            raise ConfigurationError(
                f"В грубом блоке должно быть не меньше 2x2 мелких ячеек: fine_n={fine_n}, coarse_n={coarse_n}"
            )

        # Узлы построчно: сначала по y, внутри строки по x
        ticks = np.arange(fine_n + 1) / fine_n
        xs, ys = np.meshgrid(ticks, ticks)
        nodes = np.column_stack([xs.ravel(), ys.ravel()])

        side = fine_n + 1
        ci, cj = np.meshgrid(np.arange(fine_n), np.arange(fine_n))
        a = (ci + cj * side).ravel()
        b = a + 1
        c = a + side + 1
        d = a + side
        # диагональ из левого нижнего угла в правый верхний
        triangles = np.empty((2 * fine_n * fine_n, 3), dtype=np.int64)
        triangles[0::2] = np.column_stack([a, b, c])
        triangles[1::2] = np.column_stack([a, c, d])

        ix, iy = np.arange(side ** 2) % side, np.arange(side ** 2) // side
        boundary = (ix == 0) | (ix == fine_n) | (iy == 0) | (iy == fine_n)

        fine = FineGrid(fine_n, nodes, triangles, boundary)

        coarse_ticks = np.arange(coarse_n + 1) / coarse_n
        cxs, cys = np.meshgrid(coarse_ticks, coarse_ticks)
        vertices = np.column_stack([cxs.ravel(), cys.ravel()])
        vside = coarse_n + 1
        bi, bj = np.meshgrid(np.arange(coarse_n), np.arange(coarse_n))
        ll = (bi + bj * vside).ravel()
        blocks = np.column_stack([ll, ll + 1, ll + vside + 1, ll + vside])

        coarse = CoarseGrid(coarse_n, per_block, vertices, blocks)
        return fine, coarse

    @staticmethod
    def neighborhood(coarse, fine, j):
        """
        Грубая окрестность вершины j

        Args:
            coarse (CoarseGrid): грубая сетка
            fine (FineGrid): мелкая сетка
            j (int): номер грубой вершины

        Returns:
            Neighborhood: индексы узлов, треугольников и позиции в каноническом патче
        """
        if not 0 <= j < coarse.n_vertices:
            raise IndexError(f"Номер вершины {j} вне диапазона [0, {coarse.n_vertices})")

        n = fine.n_cells_per_side
        k = coarse.fine_cells_per_block_side
        nc = coarse.n_blocks_per_side
        vi, vj = coarse.vertex_position(j)

        x0, x1 = max(0, (vi - 1) * k), min(n, (vi + 1) * k)
        y0, y1 = max(0, (vj - 1) * k), min(n, (vj + 1) * k)

        gx, gy = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
        gx, gy = gx.ravel(), gy.ravel()
        nodes = gy * (n + 1) + gx
        on_edge = (gx == x0) | (gx == x1) | (gy == y0) | (gy == y1)

        blocks = tuple(
            by * nc + bx
            for by in range(max(0, vj - 1), min(nc, vj + 1))
            for bx in range(max(0, vi - 1), min(nc, vi + 1))
        )

        cx, cy = np.meshgrid(np.arange(x0, x1), np.arange(y0, y1))
        cells = (cy * n + cx).ravel()
        triangles = np.sort(np.concatenate([2 * cells, 2 * cells + 1]))

        # канонический патч (2k+1)x(2k+1) с центром в x_j
        patch_side = 2 * k + 1
        px = gx - (vi * k - k)
        py = gy - (vj * k - k)
        positions = py * patch_side + px

        global_to_local = np.full(fine.n_nodes, -1, dtype=np.int64)
        global_to_local[nodes] = np.arange(len(nodes))

        return Neighborhood(
            vertex_index=j,
            block_indices=blocks,
            fine_node_indices=nodes,
            patch_boundary_node_indices=nodes[on_edge],
            triangle_indices=triangles,
            patch_positions=positions,
            canonical_patch_size=patch_side ** 2,
            _triangles_global=fine.triangles[triangles],
            _global_to_local=global_to_local,
        )

    @staticmethod
    def neighborhoods(coarse, fine):
        return [GridProcessor.neighborhood(coarse, fine, j) for j in range(coarse.n_vertices)]

    @staticmethod
    def canonical_patch_embedding(nb, values):
        """Значения на узлах ω_j -> вектор канонического патча длины m (вне Ω нули)"""
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (nb.n_local,):
            raise DimensionError("Длина значений не совпадает с числом узлов окрестности",
                                 expected=nb.n_local, actual=values.shape)
        patch = np.zeros(nb.canonical_patch_size)
        patch[nb.patch_positions] = values
        return patch

    @staticmethod
    def canonical_patch_extract(nb, patch):
        """Обратное вложение: вектор патча -> значения на узлах ω_j"""
        patch = np.asarray(patch, dtype=np.float64)
        if patch.shape != (nb.canonical_patch_size,):
            raise DimensionError("Длина патча не совпадает с m",
                                 expected=nb.canonical_patch_size, actual=patch.shape)
        return patch[nb.patch_positions].copy()
