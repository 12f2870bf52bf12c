import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from config import CovarianceParams, PicardConfig, RunConfig, TrainConfig  # noqa: E402
from processors.grids import GridProcessor  # noqa: E402
from processors.offline import OfflineProcessor  # noqa: E402
from processors.random_fields import RandomFieldProcessor  # noqa: E402
from worker.pipeline import MultiscaleContext  # noqa: E402


@pytest.fixture(scope="session")
def small_grids():
    """Мелкая 8x8, грубая 2x2 (9 окрестностей)"""
    return GridProcessor.build_grids(8, 2)


@pytest.fixture(scope="session")
def small_neighborhoods(small_grids):
    fine, coarse = small_grids
    return GridProcessor.neighborhoods(coarse, fine)


@pytest.fixture(scope="session")
def small_pou(small_grids):
    fine, coarse = small_grids
    return OfflineProcessor.partition_of_unity(fine, coarse)


@pytest.fixture(scope="session")
def small_kle(small_grids):
    fine, _ = small_grids
    return RandomFieldProcessor.build_kle(fine, CovarianceParams(), 0.95)


@pytest.fixture
def small_field(small_kle):
    return RandomFieldProcessor.sample_field(small_kle, 12345)


@pytest.fixture
def steady_cfg():
    return PicardConfig(delta0=1e-6, max_iters=30)


@pytest.fixture
def tiny_run_config(tmp_path):
    """Минимальная конфигурация прогона для тестов воркера"""
    return RunConfig(
        fine_n=8,
        coarse_n=2,
        nb_list=(2,),
        n_train=4,
        n_test=2,
        n_solution_tests=2,
        picard=PicardConfig(max_iters=4),
        time_picard=PicardConfig(n_steps=3, max_iters=3),
        enrichment_steps=(1, 3),
        train=TrainConfig(hidden_widths=(16,), epochs=3, batch_size=4, validation_fraction=0.25),
        seed=7,
        output_dir=str(tmp_path / "runs"),
        threads=1,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def desk_context():
    """Настольный масштаб: мелкая 32x32, грубая 4x4 (25 окрестностей)"""
    return MultiscaleContext.build(RunConfig(fine_n=32, coarse_n=4))
