import numpy as np
import pytest

from processors.errors import ConfigurationError, RankDeficiencyError
from processors.fine_solver import FineScaleSolver
from processors.offline import OfflineProcessor
from processors.online import OnlineBasis, OnlineProcessor
from processors.random_fields import RandomFieldProcessor


@pytest.fixture
def offline_state(small_grids, small_neighborhoods, small_pou, small_field, steady_cfg):
    fine, _ = small_grids
    f = np.ones(fine.n_nodes)
    space = OfflineProcessor.build_offline_space(fine, small_neighborhoods, small_pou, small_field, 2)
    result = OfflineProcessor.picard_solve(space, fine, small_field, f, None, steady_cfg)
    return space, result, f


def direct_bases(fine, neighborhoods, pou, kappa, result, f):
    conductivity = RandomFieldProcessor.conductivity(kappa, result.previous_iterate)
    return {nb.vertex_index: OnlineProcessor.online_basis(
        nb, fine, pou, conductivity, None, result.pressure, f) for nb in neighborhoods}


def test_residual_vanishes_for_fine_solution(small_grids, small_neighborhoods, small_field):
    fine, _ = small_grids
    f = np.ones(fine.n_nodes)
    p_lin = np.zeros(fine.n_nodes)
    matrix, rhs = FineScaleSolver.linear_system(fine, small_field, p_lin, f, None, None)
    matrix, rhs = FineScaleSolver.apply_dirichlet(matrix, rhs, fine.boundary_node_flags)
    p_fine = FineScaleSolver.solve_spd(matrix, rhs)
    conductivity = RandomFieldProcessor.conductivity(small_field, p_lin)
    for nb in small_neighborhoods:
        residual = OnlineProcessor.local_residual(nb, fine, conductivity, None, p_fine, f)
        assert np.max(np.abs(residual)) <= 1e-10 * np.max(np.abs(rhs))
        eta, norm = OnlineProcessor.online_eta(nb, fine, conductivity, None, residual)
        assert norm <= 1e-6


def test_zero_residual_gives_zero_eta(small_grids, small_neighborhoods, small_field):
    fine, _ = small_grids
    nb = small_neighborhoods[4]
    eta, norm = OnlineProcessor.online_eta(nb, fine, small_field.values, None, np.zeros(len(nb.local_interior)))
    assert norm == 0.0
    assert not np.any(eta)


@pytest.mark.parametrize("tau", [None, 25e-7])
def test_residual_norm_is_residual_on_eta(small_grids, small_neighborhoods, small_field, offline_state, tau):
    fine, _ = small_grids
    _, result, f = offline_state
    conductivity = RandomFieldProcessor.conductivity(small_field, result.previous_iterate)
    p_prev = 0.5 * result.pressure
    for nb in small_neighborhoods:
        residual = OnlineProcessor.local_residual(nb, fine, conductivity, p_prev, result.pressure, f, tau)
        eta, norm = OnlineProcessor.online_eta(nb, fine, conductivity, tau, residual)
        assert norm > 0.0
        assert norm ** 2 == pytest.approx(residual @ eta[nb.local_interior], rel=1e-10)


def test_online_eta_is_linear_in_residual(small_grids, small_neighborhoods, small_field, rng):
    fine, _ = small_grids
    nb = small_neighborhoods[4]
    residual = rng.standard_normal(len(nb.local_interior))
    eta, norm = OnlineProcessor.online_eta(nb, fine, small_field.values, None, residual)
    doubled, doubled_norm = OnlineProcessor.online_eta(nb, fine, small_field.values, None, 2.0 * residual)
    np.testing.assert_allclose(doubled, 2.0 * eta, rtol=1e-12, atol=1e-15)
    assert doubled_norm == pytest.approx(2.0 * norm, rel=1e-12)


def test_online_basis_of_offline_solution(small_grids, small_neighborhoods, small_pou, small_field, offline_state):
    fine, _ = small_grids
    _, result, f = offline_state
    bases = direct_bases(fine, small_neighborhoods, small_pou, small_field, result, f)
    for j, basis in bases.items():
        nb = small_neighborhoods[j]
        assert isinstance(basis, OnlineBasis)
        assert basis.residual_norm > 0.0
        np.testing.assert_array_equal(basis.eta[nb.local_boundary], 0.0)
        np.testing.assert_allclose(basis.phi, small_pou[j][nb.fine_node_indices] * basis.eta)


def test_time_dependent_residual_includes_mass_term(small_grids, small_neighborhoods, small_field):
    fine, _ = small_grids
    nb = small_neighborhoods[4]
    conductivity = small_field.values
    p_next = np.zeros(fine.n_nodes)
    p_prev = np.ones(fine.n_nodes)
    f = np.zeros(fine.n_nodes)
    steady = OnlineProcessor.local_residual(nb, fine, conductivity, p_prev, p_next, f)
    timed = OnlineProcessor.local_residual(nb, fine, conductivity, p_prev, p_next, f, tau=0.5)
    _, mass = OnlineProcessor.local_matrices(nb, fine, conductivity)
    np.testing.assert_array_equal(steady, 0.0)
    np.testing.assert_allclose(timed, 2.0 * (mass @ np.ones(nb.n_local))[nb.local_interior])


def test_enrich_appends_one_column_per_vertex(small_grids, small_neighborhoods, small_pou, small_field, offline_state):
    fine, _ = small_grids
    space, result, f = offline_state
    bases = direct_bases(fine, small_neighborhoods, small_pou, small_field, result, f)
    enriched = OnlineProcessor.enrich(space, fine, small_neighborhoods, small_pou, bases)
    assert enriched.n_columns == space.n_columns + len(small_neighborhoods)
    assert (enriched.offline_block != space.operator).nnz == 0
    np.testing.assert_array_equal(enriched.column_owner[space.n_columns:], np.arange(9))
    assert enriched.online_vertices == list(range(9))
    assert np.all(enriched.operator.toarray()[fine.boundary_nodes] == 0.0)

    from_list = OnlineProcessor.enrich(space, fine, small_neighborhoods, small_pou, list(bases.values()))
    assert (from_list.operator != enriched.operator).nnz == 0


def test_online_step_improves_energy_error(small_grids, small_neighborhoods, small_pou, small_field, offline_state):
    fine, _ = small_grids
    space, result, f = offline_state
    p_lin = result.previous_iterate
    matrix, rhs = FineScaleSolver.linear_system(fine, small_field, p_lin, f, None, None)
    reduced, reduced_rhs = FineScaleSolver.apply_dirichlet(matrix, rhs, fine.boundary_node_flags)
    reference = FineScaleSolver.solve_spd(reduced, reduced_rhs)

    offline = OfflineProcessor.coarse_solve(space.operator, matrix, rhs).fine
    bases = direct_bases(fine, small_neighborhoods, small_pou, small_field, result, f)
    enriched = OnlineProcessor.enrich(space, fine, small_neighborhoods, small_pou, bases)
    online = OnlineProcessor.online_picard_step(enriched, fine, small_field, f, None, p_lin).fine

    def energy(p):
        d = p - reference
        return float(np.sqrt(d @ (matrix @ d)))

    assert energy(online) <= energy(offline) + 1e-12


def test_zero_online_bases_reproduce_offline(small_grids, small_neighborhoods, small_pou, small_field, offline_state):
    fine, _ = small_grids
    space, result, f = offline_state
    zeros = {nb.vertex_index: np.zeros(nb.n_local) for nb in small_neighborhoods}
    enriched = OnlineProcessor.enrich(space, fine, small_neighborhoods, small_pou, zeros)
    p_lin = result.previous_iterate
    matrix, rhs = FineScaleSolver.linear_system(fine, small_field, p_lin, f, None, None)
    offline = OfflineProcessor.coarse_solve(space.operator, matrix, rhs).fine
    online = OnlineProcessor.online_picard_step(enriched, fine, small_field, f, None, p_lin).fine
    np.testing.assert_allclose(online, offline, atol=1e-14)


def test_collapsed_online_column_is_flagged(small_grids, small_neighborhoods, small_field, offline_state):
    fine, _ = small_grids
    space, _, _ = offline_state
    nb = small_neighborhoods[4]
    first_column = space.operator[:, np.flatnonzero(space.column_owner == 4)[0]].toarray().ravel()
    enriched = OnlineProcessor.append_online_columns(
        space, fine, small_neighborhoods, {4: first_column[nb.fine_node_indices]})
    assert len(enriched.warnings) == 1
    assert enriched.n_columns == space.n_columns + 1

    matrix, rhs = FineScaleSolver.linear_system(fine, small_field, np.zeros(fine.n_nodes), np.ones(fine.n_nodes),
                                                None, None)
    with pytest.raises(RankDeficiencyError) as error:
        OfflineProcessor.coarse_solve(enriched.operator, matrix, rhs, column_owner=enriched.column_owner)
    assert error.value.context["vertex"] == 4


def test_default_enrichment_schedule():
    assert OnlineProcessor.schedule_enrichment(20) == (1, 5, 10, 15, 20)
    assert OnlineProcessor.schedule_enrichment(12) == (1, 5, 10)
    assert OnlineProcessor.schedule_enrichment(3, [3, 1, 1]) == (1, 3)


@pytest.mark.parametrize("n_steps, steps", [(0, None), (5, [0]), (5, [6])])
def test_invalid_enrichment_schedule(n_steps, steps):
    with pytest.raises(ConfigurationError):
        OnlineProcessor.schedule_enrichment(n_steps, steps)
