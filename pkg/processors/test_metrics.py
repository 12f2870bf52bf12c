import numpy as np
import pytest

from processors.errors import ConfigurationError, DimensionError
from processors.fine_solver import FineScaleSolver
from processors.metrics import MetricsProcessor


@pytest.fixture(scope="module")
def norms(small_grids):
    fine, _ = small_grids
    return FineScaleSolver.assemble_mass(fine), FineScaleSolver.assemble_stiffness(fine, np.ones(fine.n_nodes))


def bump(fine):
    x, y = fine.nodes[:, 0], fine.nodes[:, 1]
    return np.sin(np.pi * x) * np.sin(np.pi * y)


def test_rel_l2_vector_examples():
    assert MetricsProcessor.rel_l2_vector([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert MetricsProcessor.rel_l2_vector([0.0, 0.0], [3.0, 4.0]) == pytest.approx(1.0)
    assert MetricsProcessor.rel_l2_vector([6.0, 8.0], [3.0, 4.0]) == pytest.approx(1.0)
    with pytest.raises(DimensionError):
        MetricsProcessor.rel_l2_vector([1.0], [1.0, 2.0])


def test_zero_target_is_undefined_unless_prediction_is_zero_too():
    assert np.isnan(MetricsProcessor.rel_l2_vector([1.0, 0.0], [0.0, 0.0]))
    assert MetricsProcessor.rel_l2_vector([0.0, 0.0], [0.0, 0.0]) == 0.0


def test_solution_errors_scale(small_grids, norms):
    fine, _ = small_grids
    mass, stiffness = norms
    p = bump(fine)
    assert MetricsProcessor.rel_L2_H1_solution(p, p, mass, stiffness) == (0.0, 0.0)
    e_l2, e_h1 = MetricsProcessor.rel_L2_H1_solution(2 * p, p, mass, stiffness)
    assert e_l2 == pytest.approx(1.0)
    assert e_h1 == pytest.approx(1.0)
    e_l2, e_h1 = MetricsProcessor.rel_L2_H1_solution(1.1 * p, p, mass, stiffness)
    assert e_l2 == pytest.approx(0.1)
    assert e_h1 == pytest.approx(0.1)


def test_h1_seminorm_ignores_constants(small_grids, norms):
    fine, _ = small_grids
    mass, stiffness = norms
    p = bump(fine)
    e_l2, e_h1 = MetricsProcessor.rel_L2_H1_solution(p + 1.0, p, mass, stiffness)
    assert e_l2 > 0.0
    assert e_h1 == pytest.approx(0.0, abs=1e-7)


def test_bochner_errors(small_grids, norms):
    fine, _ = small_grids
    mass, stiffness = norms
    p = bump(fine)
    trajectory = [p, 2 * p, 3 * p]
    assert MetricsProcessor.bochner_errors(trajectory, trajectory, mass, stiffness, 0.1) == (0.0, 0.0)
    doubled = [2 * state for state in trajectory]
    np.testing.assert_allclose(MetricsProcessor.bochner_errors(doubled, trajectory, mass, stiffness, 0.1), 1.0)

    # постоянная во времени пара дает ту же ошибку, что и один шаг
    per_step = MetricsProcessor.rel_L2_H1_solution(1.3 * p, p, mass, stiffness)
    np.testing.assert_allclose(
        MetricsProcessor.bochner_errors([1.3 * p] * 4, [p] * 4, mass, stiffness, 0.25), per_step)

    with pytest.raises(DimensionError):
        MetricsProcessor.bochner_errors([p], [p, p], mass, stiffness, 0.1)


def test_aggregate_and_percent_row():
    report = MetricsProcessor.aggregate([0.01, 0.02, 0.03])
    assert report.mean == pytest.approx(0.02)
    assert (report.minimum, report.maximum, report.highlight) == (0.01, 0.03, 0.01)
    row = report.as_percent_row()
    assert row["mean"] == pytest.approx(2.0)
    assert row["one_sample"] == pytest.approx(1.0)

    no_highlight = MetricsProcessor.aggregate([0.5], highlight_index=None)
    assert np.isnan(no_highlight.as_percent_row()["one_sample"])
    with pytest.raises(ConfigurationError):
        MetricsProcessor.aggregate([])
