import numpy as np
import pytest

from config import PicardConfig, RunConfig
from processors.fine_solver import FineScaleSolver
from processors.metrics import MetricsProcessor
from worker.pipeline import MultiscaleContext, MultiscalePipeline, make_source


@pytest.fixture(scope="module")
def context():
    return MultiscaleContext.build(RunConfig(fine_n=8, coarse_n=2, nb_list=(2,)))


def context_picard(**changes):
    return PicardConfig(max_iters=4, **changes)


def oracle(context, bases):
    """Предсказатель, возвращающий прямо вычисленные Φ_j"""
    return lambda j, patch: context.phi_patch(bases[j].phi, j)


def test_make_source(context):
    fine = context.fine
    np.testing.assert_array_equal(make_source("unit", fine)(0.3), 1.0)
    values = make_source("sincos", fine)(0.0)
    np.testing.assert_allclose(values, np.sin(np.pi * fine.nodes[:, 0]) * np.cos(np.pi * fine.nodes[:, 1]))
    assert not np.any(make_source("zero", fine)(1.0))
    with pytest.raises(ValueError):
        make_source("gauss", fine)


def test_context_patch_helpers(context):
    kappa = context.sample_field(5)
    assert context.patch_size == 81
    patch = context.kappa_patch(kappa, 0)
    assert patch.shape == (81,)
    assert np.count_nonzero(patch) == context.neighborhoods[0].n_local


def test_steady_outcome(context):
    pipeline = MultiscalePipeline(context, 2, context_picard())
    kappa = context.sample_field(11)
    f = make_source("unit", context.fine)(0.0)
    outcome = pipeline.run_steady(kappa, f, with_fine=True)

    assert set(outcome.online_bases) == set(range(9))
    assert outcome.p_predicted is None
    assert 1 <= outcome.picard_iterations <= 4
    assert len(outcome.timing["direct_basis_s"]) == 9
    assert len(outcome.timing["online_solve_s"]) == 1

    offline_l2, _ = MetricsProcessor.rel_L2_H1_solution(outcome.p_offline, outcome.p_fine, context.mass,
                                                        context.unit_stiffness)
    online_l2, _ = MetricsProcessor.rel_L2_H1_solution(outcome.p_online, outcome.p_fine, context.mass,
                                                       context.unit_stiffness)
    assert online_l2 < offline_l2


def test_oracle_predictor_reproduces_online_solution(context):
    pipeline = MultiscalePipeline(context, 2, context_picard())
    kappa = context.sample_field(12)
    f = make_source("unit", context.fine)(0.0)
    direct = pipeline.run_steady(kappa, f)
    outcome = pipeline.run_steady(kappa, f, predictor=oracle(context, direct.online_bases))
    np.testing.assert_allclose(outcome.p_predicted, outcome.p_online, atol=1e-12)
    assert len(outcome.timing["predicted_basis_s"]) == 9
    assert len(outcome.timing["predicted_solve_s"]) == 1


def test_steady_without_online_step(context):
    pipeline = MultiscalePipeline(context, 2, context_picard())
    outcome = pipeline.run_steady(context.sample_field(3), np.ones(context.fine.n_nodes), vertices=[4],
                                  online=False)
    assert list(outcome.online_bases) == [4]
    assert outcome.p_online is None


def test_time_outcome_lengths(context):
    cfg = context_picard(n_steps=3)
    pipeline = MultiscalePipeline(context, 2, cfg)
    source = make_source("sincos", context.fine)
    outcome = pipeline.run_time(context.sample_field(21), source, (1, 3), with_fine=True)
    assert len(outcome.offline) == len(outcome.online) == len(outcome.fine) == 3
    assert outcome.predicted == []
    assert sorted(outcome.events) == [1, 3]
    assert outcome.events[3][0].state_tag[0] == 3


def test_time_run_with_predictors(context):
    cfg = context_picard(n_steps=2)
    pipeline = MultiscalePipeline(context, 2, cfg)
    kappa = context.sample_field(22)
    source = make_source("sincos", context.fine)
    direct = pipeline.run_time(kappa, source, (1,))
    predictors = {1: oracle(context, direct.events[1])}
    outcome = pipeline.run_time(kappa, source, (1,), predictors=predictors)
    assert len(outcome.predicted) == 2
    for predicted, online in zip(outcome.predicted, outcome.online):
        np.testing.assert_allclose(predicted, online, atol=1e-12)


def test_time_run_stops_at_requested_step(context):
    pipeline = MultiscalePipeline(context, 2, context_picard(n_steps=3))
    outcome = pipeline.run_time(context.sample_field(23), make_source("sincos", context.fine), (1, 3),
                                stop_step=3, vertices=[2])
    assert len(outcome.offline) == 3
    assert outcome.online == []
    assert list(outcome.events) == [3]
    assert list(outcome.events[3]) == [2]


def test_time_run_records_solve_timing(context):
    pipeline = MultiscalePipeline(context, 2, context_picard(n_steps=2))
    kappa = context.sample_field(24)
    source = make_source("sincos", context.fine)
    direct = pipeline.run_time(kappa, source, (1,))
    assert len(direct.timing["online_solve_s"]) == 1
    assert "predicted_solve_s" not in direct.timing

    outcome = pipeline.run_time(kappa, source, (1,), predictors={1: oracle(context, direct.events[1])})
    assert len(outcome.timing["online_solve_s"]) == 1
    assert len(outcome.timing["predicted_solve_s"]) == 1
    assert len(outcome.timing["direct_basis_s"]) == 9
    assert len(outcome.timing["predicted_basis_s"]) == 9


def test_time_run_fine_trajectory_matches_time_march(context):
    cfg = context_picard(n_steps=3)
    pipeline = MultiscalePipeline(context, 2, cfg)
    kappa = context.sample_field(25)
    source = make_source("sincos", context.fine)
    outcome = pipeline.run_time(kappa, source, (1,), with_fine=True)
    trace = FineScaleSolver.time_march(context.fine, kappa, source, cfg)
    for got, want in zip(outcome.fine, trace.states):
        np.testing.assert_array_equal(got, want)


def perturbed_oracle(context, bases, scale=0.05, seed=0):
    """Прямые Φ_j с добавленным шумом: пространство отличается от прямого"""
    rng = np.random.default_rng(seed)
    noisy = {}
    for j, basis in bases.items():
        noise = rng.standard_normal(basis.phi.shape) * scale * np.abs(basis.phi).max()
        noisy[j] = context.phi_patch(basis.phi + noise, j)
    return lambda j, patch: noisy[j]


@pytest.fixture(scope="module")
def desk_time_cfg():
    return RunConfig.desk().time_picard


@pytest.mark.slow
def test_desk_time_zero_source_gives_zero_errors(desk_context, desk_time_cfg):
    ctx = desk_context
    schedule = (1, 5, 10, 15, 20)
    pipeline = MultiscalePipeline(ctx, 4, desk_time_cfg)
    kappa = ctx.sample_field(31)
    source = make_source("zero", ctx.fine)
    direct = pipeline.run_time(kappa, source, schedule)
    predictors = {step: oracle(ctx, direct.events[step]) for step in schedule}
    outcome = pipeline.run_time(kappa, source, schedule, predictors=predictors)
    assert len(outcome.predicted) == 20
    assert MetricsProcessor.bochner_errors(outcome.predicted, outcome.online, ctx.mass, ctx.unit_stiffness,
                                           desk_time_cfg.tau) == (0.0, 0.0)
    assert MetricsProcessor.rel_L2_H1_solution(outcome.predicted[-1], outcome.online[-1], ctx.mass,
                                               ctx.unit_stiffness) == (0.0, 0.0)


@pytest.mark.slow
def test_desk_bochner_errors_track_last_step(desk_context, desk_time_cfg):
    ctx = desk_context
    schedule = (1, 5, 10, 15, 20)
    tau = desk_time_cfg.tau
    assert (desk_time_cfg.n_steps, tau) == (20, 25e-7)
    pipeline = MultiscalePipeline(ctx, 4, desk_time_cfg)
    kappa = ctx.sample_field(32)
    source = make_source("sincos", ctx.fine)
    direct = pipeline.run_time(kappa, source, schedule)
    predictors = {step: perturbed_oracle(ctx, direct.events[step], seed=step) for step in schedule}
    outcome = pipeline.run_time(kappa, source, schedule, predictors=predictors)

    last_l2, last_h1 = MetricsProcessor.rel_L2_H1_solution(
        outcome.predicted[-1], outcome.online[-1], ctx.mass, ctx.unit_stiffness)
    bochner_l2, bochner_h1 = MetricsProcessor.bochner_errors(
        outcome.predicted, outcome.online, ctx.mass, ctx.unit_stiffness, tau)
    for bochner, last in ((bochner_l2, last_l2), (bochner_h1, last_h1)):
        assert last > 0.0
        assert last / 2.0 <= bochner <= 2.0 * last
