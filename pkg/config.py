# config.py
import json
import os
from pathlib import Path
from typing import Literal, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

load_dotenv()

# Настройки окружения
OUTPUT_DIR = os.getenv("MSR_OUTPUT_DIR", "./runs")
LOG_LEVEL = os.getenv("MSR_LOG_LEVEL", "INFO")
THREADS = int(os.getenv("MSR_THREADS", "1"))
MAX_RUN_TIME = int(os.getenv("MSR_MAX_RUN_TIME", "86400"))  # сутки максимум на прогон

# Сетки (масштаб статьи)
REFERENCE_FINE_N = 128
REFERENCE_COARSE_N = 8

# Случайные поля проницаемости
SIGMA2 = 2.0
ETA = (0.05, 0.2)
ENERGY_FRACTION = 0.95
KAPPA_RANGE = (10.0, 2000.0)

# Итерации Пикара и шаги по времени
DELTA0 = 1e-6
MAX_PICARD_ITERS = 4
TAU = 25e-7
N_STEPS = 20
ENRICHMENT_STEPS = (1, 5, 10, 15, 20)

# Мультимасштабные пространства
NB_LIST = (2, 4, 6, 8, 12, 16)

# Нейросеть
HIDDEN_WIDTHS = (1600, 1472, 1345)
LEARNING_RATE = 1e-4
BATCH_SIZE = 32
EPOCHS = 100
VALIDATION_FRACTION = 0.2
SWEEP_EPOCHS = (50, 100, 150)
SWEEP_BATCHES = (16, 32, 64)


class StrictModel(BaseModel):
    """Базовая модель: неизвестные ключи запрещены"""
    model_config = ConfigDict(extra="forbid", frozen=True)


class CovarianceParams(StrictModel):
    """Параметры экспоненциальной ковариации логарифма проницаемости"""
    sigma2: float = Field(SIGMA2, gt=0, description="дисперсия")
    eta1: float = Field(ETA[0], gt=0, description="длина корреляции по x1")
    eta2: float = Field(ETA[1], gt=0, description="длина корреляции по x2")


class KleConfig(StrictModel):
    covariance: CovarianceParams = CovarianceParams()
    energy_fraction: float = Field(ENERGY_FRACTION, gt=0, le=1)
    kappa_range: Tuple[float, float] = KAPPA_RANGE

    @field_validator("kappa_range")
    @classmethod
    def _check_range(cls, value):
        low, high = value
        if not (high > low > 0):
            raise ValueError(f"Диапазон проницаемости должен удовлетворять max > min > 0: {value}")
        return value


class PicardConfig(StrictModel):
    """Настройки линеаризации Пикара и неявной схемы Эйлера (n_steps=0 - стационарный режим)"""
    delta0: float = Field(DELTA0, gt=0)
    max_iters: int = Field(MAX_PICARD_ITERS, gt=0)
    tau: float = Field(TAU, gt=0)
    n_steps: int = Field(0, ge=0)
    initial_guess_mode: Literal["zero", "previous_step"] = "zero"

    @property
    def steady(self) -> bool:
        return self.n_steps == 0


class TrainConfig(StrictModel):
    learning_rate: float = Field(LEARNING_RATE, gt=0)
    batch_size: int = Field(BATCH_SIZE, gt=0)
    epochs: int = Field(EPOCHS, gt=0)
    validation_fraction: float = Field(VALIDATION_FRACTION, ge=0, lt=1)
    hidden_widths: Tuple[int, ...] = HIDDEN_WIDTHS
    seed: int = Field(0, ge=0)

    @field_validator("hidden_widths")
    @classmethod
    def _check_widths(cls, value):
        if any(width <= 0 for width in value):
            raise ValueError(f"Ширины слоев должны быть положительными: {value}")
        return value


class RunConfig(StrictModel):
    """Полная конфигурация прогона (JSON-файл с теми же ключами)"""
    fine_n: int = Field(32, gt=0, description="число ячеек мелкой сетки по стороне")
    coarse_n: int = Field(4, gt=0, description="число грубых блоков по стороне")
    kle: KleConfig = KleConfig()
    nb_list: Tuple[int, ...] = NB_LIST
    n_train: int = Field(200, gt=0, description="N_s: обучающих выборок на окрестность")
    n_test: int = Field(50, gt=0, description="M: тестовых выборок на окрестность")
    picard: PicardConfig = PicardConfig()
    time_picard: PicardConfig = PicardConfig(n_steps=N_STEPS)
    enrichment_steps: Optional[Tuple[int, ...]] = None
    steady_source: Literal["unit", "zero"] = "unit"
    time_source: Literal["sincos", "zero"] = "sincos"
    n_solution_tests: Optional[int] = Field(None, gt=0, description="сколько тестовых полей решать целиком")
    train: TrainConfig = TrainConfig()
    seed: int = Field(2024, ge=0, lt=2 ** 64)
    output_dir: str = OUTPUT_DIR
    save_fields: bool = Field(False, description="хранить κ записей наборов в fields/<seed>.msrf")
    threads: int = Field(THREADS, gt=0)

    @field_validator("nb_list")
    @classmethod
    def _check_nb(cls, value):
        if not value or any(nb <= 0 for nb in value):
            raise ValueError(f"Список Nb должен быть непустым и положительным: {value}")
        return tuple(value)

    @model_validator(mode="after")
    def _check_grids(self):
        if self.fine_n % self.coarse_n != 0:
            raise ValueError(f"coarse_n={self.coarse_n} не делит fine_n={self.fine_n}")
        per_block = self.fine_n // self.coarse_n
        # у угловой окрестности (per_block+1)^2 узлов, граница - 4*per_block
        smallest_snapshot_count = 4 * per_block
        if max(self.nb_list) > smallest_snapshot_count:
            raise ValueError(
                f"Nb={max(self.nb_list)} превышает число снимков {smallest_snapshot_count} "
                f"в наименьшей окрестности"
            )
        return self

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, ensure_ascii=False)

    @classmethod
    def desk(cls, **overrides) -> "RunConfig":
        """Настольный масштаб: сетки 32/4, ширины [256, 224, 192]"""
        base = dict(
            fine_n=32, coarse_n=4, nb_list=(2, 4, 6, 8, 12, 16), n_train=200, n_test=50, n_solution_tests=50,
            train=TrainConfig(hidden_widths=(256, 224, 192)),
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def reference(cls, **overrides) -> "RunConfig":
        base = dict(
            fine_n=REFERENCE_FINE_N, coarse_n=REFERENCE_COARSE_N, n_train=5000, n_test=1000,
            train=TrainConfig(hidden_widths=HIDDEN_WIDTHS),
        )
        base.update(overrides)
        return cls(**base)

    def with_overrides(self, **changes) -> "RunConfig":
        """Копия с перевалидацией (для флагов командной строки)"""
        data = self.model_dump()
        data.update({key: value for key, value in changes.items() if value is not None})
        return RunConfig.model_validate(data)
