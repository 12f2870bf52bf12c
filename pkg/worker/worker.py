"""
Experiment Worker - прогоны мультимасштабного решателя уравнения Ричардса
Генерирует обучающие пары (патч κ, онлайн-функция), обучает сети, решает
стационарную и нестационарную задачи прямыми и предсказанными онлайн-функциями,
сохраняет таблицы ошибок и замеры времени в каталог артефактов
"""

import signal
import sys
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd

from client.binary_formats import DatasetFile
from client.storage_client import ArtifactStorage
from config import MAX_RUN_TIME, SWEEP_BATCHES, SWEEP_EPOCHS, RunConfig
from logger.logger import setup_logger
from processors.errors import ConfigurationError, FormatError, MsRichardsError, NumericalError, RunInterrupted
from processors.metrics import MetricsProcessor
from processors.online import OnlineProcessor
from processors.random_fields import PermeabilityField, RandomFieldProcessor
from processors.surrogate import SurrogateProcessor
from worker.pipeline import MultiscaleContext, MultiscalePipeline, make_source

FAILURE_LIMIT = 0.01
HISTORY_COLUMNS = ["epoch", "train_loss", "validation_loss"]
TIMING_COLUMNS = ["quantity", "count", "mean", "min", "max"]


class ExperimentWorker:
    """Основной класс воркера для вычислительных экспериментов"""

    def __init__(self, cfg=None, storage=None, install_signal_handlers=True):
        """Инициализация конфигурации, хранилища и обработчиков сигналов"""
        self.logger = setup_logger()
        self.cfg = cfg or RunConfig.desk()
        self.logger.info("🚀 Запуск Experiment Worker")
        self.logger.info(f"🔧 Сетки: {self.cfg.fine_n}x{self.cfg.fine_n} / {self.cfg.coarse_n}x{self.cfg.coarse_n}")
        self.logger.info(f"🔢 Nb: {list(self.cfg.nb_list)}, N_s={self.cfg.n_train}, M={self.cfg.n_test}")

        self.storage = storage or ArtifactStorage(self.cfg.output_dir)
        self.logger.info(f"📁 Каталог артефактов: {self.storage.root}")

        self._context = None
        self._models = {}
        self.timing = defaultdict(list)

        # Флаг для graceful shutdown
        self.running = True
        self.started_at = time.time()
        if install_signal_handlers:
            signal.signal(signal.SIGTERM, self.handle_shutdown)
            signal.signal(signal.SIGINT, self.handle_shutdown)

    def handle_shutdown(self, signum, frame):
        """Обработка сигналов завершения для graceful shutdown"""
        self.logger.info("🛑 Получен сигнал завершения. Прогон будет остановлен...")
        self.running = False

    def check_running(self):
        if not self.running:
            raise RunInterrupted("Прогон остановлен сигналом")
        if time.time() - self.started_at > MAX_RUN_TIME:
            raise RunInterrupted(f"Превышено время прогона {MAX_RUN_TIME} сек")

    @property
    def context(self):
        if self._context is None:
            started = time.time()
            self._context = MultiscaleContext.build(self.cfg)
            self.logger.info(
                f"✅ Сетки, χ_j и KLE готовы за {time.time() - started:.2f} сек "
                f"(N_v={len(self._context.neighborhoods)}, N_Υ={self._context.kle.n_terms}, "
                f"m={self._context.patch_size})"
            )
        return self._context

    # ------------------------------------------------------------------
    # Выборки и имена артефактов
    # ------------------------------------------------------------------

    def sample_seeds(self, j, split):
        """Пары (ν, зерно) окрестности j: обучение ν < N_s, тест N_s <= ν < N_s + M"""
        if split == "train":
            start, count = 0, self.cfg.n_train
        elif split == "test":
            start, count = self.cfg.n_train, self.cfg.n_test
        else:
            raise ConfigurationError(f"Неизвестная часть набора: {split}")
        return [(nu, RandomFieldProcessor.record_seed(self.cfg.seed, j, nu)) for nu in range(start, start + count)]

    def prepare(self):
        """Построение общих структур и проверка непересечения обучающих и тестовых зерен"""
        n_vertices = len(self.context.neighborhoods)
        train = {seed for j in range(n_vertices) for _, seed in self.sample_seeds(j, "train")}
        test = {seed for j in range(n_vertices) for _, seed in self.sample_seeds(j, "test")}
        assert train.isdisjoint(test), "обучающие и тестовые зерна пересекаются"
        return self.context

    def solution_seeds(self):
        """Зерна тестовых полей для решения целиком; выборка с индексом 0 выделяется в отчетах"""
        limit = self.cfg.n_solution_tests or self.cfg.n_test
        n_vertices = len(self.context.neighborhoods)
        seeds = [RandomFieldProcessor.record_seed(self.cfg.seed, j, self.cfg.n_train + nu)
                 for nu in range(self.cfg.n_test) for j in range(n_vertices)]
        return seeds[:limit]

    def schedule(self):
        return OnlineProcessor.schedule_enrichment(self.cfg.time_picard.n_steps, self.cfg.enrichment_steps)

    @staticmethod
    def experiment_tag(mode, time_step=0):
        if mode == "steady":
            return "steady"
        if mode == "time":
            return f"time_s{time_step:02d}"
        raise ConfigurationError(f"Неизвестный режим: {mode}")

    @staticmethod
    def field_name(seed):
        return f"fields/{seed}.msrf"

    def sample_field(self, seed):
        """κ выборки; при save_fields поле читается из fields/<seed>.msrf или сохраняется туда"""
        ctx = self.context
        name = self.field_name(seed)
        if self.cfg.save_fields and self.storage.exists(name):
            values = self.storage.load_field(name)
            if len(values) != ctx.fine.n_nodes:
                raise FormatError(f"Поле {name}: {len(values)} узлов вместо {ctx.fine.n_nodes}")
            return PermeabilityField(values, ctx.kappa_range, int(seed))
        kappa = ctx.sample_field(seed)
        if self.cfg.save_fields:
            self.storage.save_field(kappa.values, name)
        return kappa

    def export_field(self, seed):
        """Поле выделенной выборки рядом с таблицами решения"""
        return self.storage.save_field(self.context.sample_field(seed).values, self.field_name(seed))

    def dataset_name(self, nb, mode, time_step, split):
        return f"datasets/{self.experiment_tag(mode, time_step)}_nb{nb:02d}_{split}.msrd"

    def model_name(self, nb, mode, time_step):
        return f"models/{self.experiment_tag(mode, time_step)}_nb{nb:02d}.msrm"

    def pipeline(self, nb, mode):
        picard = self.cfg.picard if mode == "steady" else self.cfg.time_picard
        return MultiscalePipeline(self.context, nb, picard)

    def source(self, mode):
        name = self.cfg.steady_source if mode == "steady" else self.cfg.time_source
        return make_source(name, self.context.fine)

    def _map(self, func, items):
        if self.cfg.threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.cfg.threads) as pool:
                return list(pool.map(func, items))
        return [func(item) for item in items]

    def _merge_timing(self, timing):
        for quantity, values in timing.items():
            self.timing[quantity].extend(values)

    # ------------------------------------------------------------------
    # Наборы данных и обучение
    # ------------------------------------------------------------------

    def _make_record(self, pipeline, mode, time_step, j, seed):
        ctx = self.context
        kappa = self.sample_field(seed)
        if mode == "steady":
            outcome = pipeline.run_steady(kappa, self.source(mode)(0.0), vertices=[j], online=False)
            basis = outcome.online_bases[j]
        else:
            outcome = pipeline.run_time(kappa, self.source(mode), self.schedule(), stop_step=time_step, vertices=[j])
            basis = outcome.events[time_step][j]
        return ctx.kappa_patch(kappa, j), ctx.phi_patch(basis.phi, j)

    def gen_dataset(self, nb, mode="steady", time_step=0, split="train"):
        """
        Генерация пар (патч κ, Φ_j) для всех окрестностей

        Args:
            nb (int): число офлайн-функций на окрестность
            mode (str): steady или time
            time_step (int): шаг обогащения для режима time
            split (str): train или test

        Returns:
            DatasetFile: записи в порядке (j, ν); неудачные записи исключены
        """
        ctx = self.prepare()
        if mode == "time" and time_step not in self.schedule():
            raise ConfigurationError(f"Шаг {time_step} не входит в расписание обогащения {self.schedule()}")
        name = self.dataset_name(nb, mode, time_step, split)
        self.logger.info(f"🧪 Генерация набора {name}")

        pipeline = self.pipeline(nb, mode)
        jobs = [(j, nu, seed) for j in range(len(ctx.neighborhoods)) for nu, seed in self.sample_seeds(j, split)]

        def run(job):
            self.check_running()
            j, nu, seed = job
            try:
                return job, self._make_record(pipeline, mode, time_step, j, seed), None
            except MsRichardsError as e:
                return job, None, e

        started = time.time()
        results = self._map(run, jobs)

        failures = [(job, error) for job, record, error in results if error is not None]
        for (j, nu, seed), error in failures:
            self.logger.error(f"❌ Запись j={j}, ν={nu}, seed={seed} не получена: {error}")
        if len(failures) > FAILURE_LIMIT * len(jobs):
            raise NumericalError("Слишком много неудачных записей", failed=len(failures), total=len(jobs))

        done = [(job, record) for job, record, error in results if error is None]
        dataset = DatasetFile(
            m=ctx.patch_size,
            n_vertices=len(ctx.neighborhoods),
            samples_per_neighborhood=self.cfg.n_train if split == "train" else self.cfg.n_test,
            experiment=mode,
            time_step=time_step,
            vertices=np.array([job[0] for job, _ in done], dtype=np.int64),
            seeds=np.array([job[2] for job, _ in done], dtype=np.uint64),
            kappa=np.array([record[0] for _, record in done]).reshape(len(done), ctx.patch_size),
            phi=np.array([record[1] for _, record in done]).reshape(len(done), ctx.patch_size),
        )
        self.storage.save_dataset(dataset, name)
        self.logger.info(f"✅ Набор {name}: {dataset.n_records} записей за {time.time() - started:.2f} сек")
        if failures:
            self.logger.warning(f"⚠️ Исключено записей: {len(failures)}")
        return dataset

    def ensure_dataset(self, nb, mode="steady", time_step=0, split="train"):
        name = self.dataset_name(nb, mode, time_step, split)
        if self.storage.exists(name):
            self.logger.info(f"📦 Используется готовый набор {name}")
            return self.storage.load_dataset(name)
        return self.gen_dataset(nb, mode, time_step, split)

    def train_network(self, nb, mode="steady", time_step=0):
        """Обучение сети на наборе train; сохраняет контрольную точку и историю потерь"""
        dataset = self.ensure_dataset(nb, mode, time_step, "train")
        tag = self.experiment_tag(mode, time_step)
        self.logger.info(f"🧠 Обучение сети {tag}, Nb={nb}: {dataset.n_records} пар, m={dataset.m}")

        layer_sizes = SurrogateProcessor.layer_sizes_for(dataset.m, self.cfg.train.hidden_widths)
        model = SurrogateProcessor.init_model(layer_sizes, self.cfg.train.seed)
        result = SurrogateProcessor.train(model, dataset.kappa, dataset.phi, self.cfg.train)

        self.storage.save_model(result.model, result.bounds, self.model_name(nb, mode, time_step))
        self.storage.write_table(result.history, f"tables/history_{tag}_nb{nb:02d}.csv", columns=HISTORY_COLUMNS)
        self._models[(nb, mode, time_step)] = (result.model, result.bounds)
        self.timing["training_s"].append(result.seconds)

        final = result.history[-1]["train_loss"] if result.history else np.nan
        self.logger.info(f"✅ Сеть обучена за {result.seconds:.2f} сек")
        self.logger.info(f"   Потери: {result.initial_train_loss:.4e} -> {final:.4e}")
        return result

    def ensure_model(self, nb, mode="steady", time_step=0):
        key = (nb, mode, time_step)
        if key not in self._models:
            name = self.model_name(nb, mode, time_step)
            if self.storage.exists(name):
                self.logger.info(f"📦 Используется готовая сеть {name}")
                self._models[key] = self.storage.load_model(name)
            else:
                self.train_network(nb, mode, time_step)
        return self._models[key]

    @staticmethod
    def predictor(model, bounds):
        return lambda j, patch: SurrogateProcessor.predict_basis(model, bounds, patch)

    def eval_basis(self, nb, mode="steady", time_step=0, sweep=False):
        """
        Ошибки предсказанных онлайн-функций на тестовом наборе

        Returns:
            dict: строка таблицы (проценты) и RMSE базиса
        """
        model, bounds = self.ensure_model(nb, mode, time_step)
        test = self.ensure_dataset(nb, mode, time_step, "test")
        predictions = SurrogateProcessor.predict_basis(model, bounds, test.kappa)
        errors = [MetricsProcessor.rel_l2_vector(p, t) for p, t in zip(predictions, test.phi)]
        report = MetricsProcessor.aggregate(errors, highlight_index=0)
        rmse = SurrogateProcessor.rmse(model, bounds, test.kappa, test.phi)
        row = {"nb": nb, "time_step": time_step, **report.as_percent_row(), "rmse": rmse}
        self.logger.info(f"📊 Базис {self.experiment_tag(mode, time_step)}, Nb={nb}: "
                         f"средняя ошибка {row['mean']:.3f}%, RMSE {rmse:.4e}")

        if sweep:
            train = self.ensure_dataset(nb, mode, time_step, "train")
            rows = SurrogateProcessor.hyperparameter_sweep(
                train.kappa, train.phi, test.kappa, test.phi, self.cfg.train, SWEEP_EPOCHS, SWEEP_BATCHES)
            self.storage.write_table(rows, f"tables/sweep_{self.experiment_tag(mode, time_step)}_nb{nb:02d}.csv")
        return row

    def eval_basis_table(self, mode="steady", time_step=0, sweep=False):
        rows = [self.eval_basis(nb, mode, time_step, sweep) for nb in self.cfg.nb_list]
        self.storage.write_table(rows, f"tables/{self.experiment_tag(mode, time_step)}_basis_errors.csv")
        return rows

    # ------------------------------------------------------------------
    # Эксперименты
    # ------------------------------------------------------------------

    def export_solution(self, name, **solutions):
        fine = self.context.fine
        frame = pd.DataFrame({"x": fine.nodes[:, 0], "y": fine.nodes[:, 1]})
        for key, values in solutions.items():
            if values is not None:
                frame[key] = values
        return self.storage.write_table(frame, name)

    def run_steady(self):
        """
        Стационарный эксперимент: для каждого Nb ошибки базиса, ошибки p_ms_pred
        относительно p_ms в L² и H¹, ошибки относительно мелкого решения

        Returns:
            dict: таблицы basis, l2, h1, reference
        """
        ctx = self.prepare()
        f = self.source("steady")(0.0)
        seeds = self.solution_seeds()
        self.logger.info(f"🌊 Стационарный эксперимент: {len(seeds)} полей, Nb {list(self.cfg.nb_list)}")

        tables = {"basis": [], "l2": [], "h1": [], "reference": []}
        for nb in self.cfg.nb_list:
            self.check_running()
            tables["basis"].append(self.eval_basis(nb, "steady"))
            model, bounds = self.ensure_model(nb, "steady")
            pipeline = self.pipeline(nb, "steady")
            predict = self.predictor(model, bounds)

            def solve(item):
                self.check_running()
                index, seed = item
                try:
                    outcome = pipeline.run_steady(ctx.sample_field(seed), f, predictor=predict, with_fine=True)
                except MsRichardsError as e:
                    raise NumericalError(f"Стационарный прогон не выполнен: {e}", nb=nb, sample=index, seed=seed) from e
                return index, outcome

            errors = defaultdict(list)
            for index, outcome in self._map(solve, list(enumerate(seeds))):
                pairs = {
                    "predicted": (outcome.p_predicted, outcome.p_online),
                    "offline_fine": (outcome.p_offline, outcome.p_fine),
                    "online_fine": (outcome.p_online, outcome.p_fine),
                    "predicted_fine": (outcome.p_predicted, outcome.p_fine),
                }
                for key, (a, b) in pairs.items():
                    l2, h1 = MetricsProcessor.rel_L2_H1_solution(a, b, ctx.mass, ctx.unit_stiffness)
                    errors[f"{key}_l2"].append(l2)
                    errors[f"{key}_h1"].append(h1)
                self._merge_timing(outcome.timing)
                if index == 0:
                    self.export_field(seeds[0])
                    self.export_solution(f"tables/steady_solution_nb{nb:02d}.csv", p_ms=outcome.p_online,
                                         p_ms_pred=outcome.p_predicted, p_fine=outcome.p_fine)

            l2 = MetricsProcessor.aggregate(errors["predicted_l2"])
            h1 = MetricsProcessor.aggregate(errors["predicted_h1"])
            tables["l2"].append({"nb": nb, **l2.as_percent_row()})
            tables["h1"].append({"nb": nb, **h1.as_percent_row()})
            reference = {"nb": nb}
            for key in ("offline_fine", "online_fine", "predicted_fine"):
                for norm in ("l2", "h1"):
                    reference[f"{key}_{norm}_mean"] = 100 * float(np.mean(errors[f"{key}_{norm}"]))
            tables["reference"].append(reference)
            self.logger.info(f"✅ Nb={nb}: L² {l2.mean * 100:.3f}%, H¹ {h1.mean * 100:.3f}%")

        for key, rows in tables.items():
            self.storage.write_table(rows, f"tables/steady_{key}_errors.csv")
        self.save_timing("steady")
        return tables

    def run_time_dependent(self):
        """
        Нестационарный эксперимент: сети на каждом шаге обогащения, ошибки на
        последнем шаге, ошибки Бохнера и ряды ошибок по шагам

        Returns:
            dict: таблицы basis, last_l2, last_h1, bochner_l2, bochner_h1, series
        """
        ctx = self.prepare()
        schedule = self.schedule()
        tau = self.cfg.time_picard.tau
        source = self.source("time")
        seeds = self.solution_seeds()
        self.logger.info(f"⏳ Нестационарный эксперимент: S={self.cfg.time_picard.n_steps}, обогащение {schedule}")

        tables = {key: [] for key in ("basis", "last_l2", "last_h1", "bochner_l2", "bochner_h1", "series")}
        for nb in self.cfg.nb_list:
            self.check_running()
            predictors = {}
            for step in schedule:
                tables["basis"].append(self.eval_basis(nb, "time", step))
                predictors[step] = self.predictor(*self.ensure_model(nb, "time", step))
            pipeline = self.pipeline(nb, "time")

            def solve(item):
                self.check_running()
                index, seed = item
                try:
                    outcome = pipeline.run_time(ctx.sample_field(seed), source, schedule, predictors=predictors)
                except MsRichardsError as e:
                    raise NumericalError(f"Нестационарный прогон не выполнен: {e}", nb=nb, sample=index, seed=seed) from e
                return index, outcome

            errors = defaultdict(list)
            per_step = defaultdict(list)
            for index, outcome in self._map(solve, list(enumerate(seeds))):
                l2, h1 = MetricsProcessor.rel_L2_H1_solution(
                    outcome.predicted[-1], outcome.online[-1], ctx.mass, ctx.unit_stiffness)
                errors["last_l2"].append(l2)
                errors["last_h1"].append(h1)
                b_l2, b_h1 = MetricsProcessor.bochner_errors(
                    outcome.predicted, outcome.online, ctx.mass, ctx.unit_stiffness, tau)
                errors["bochner_l2"].append(b_l2)
                errors["bochner_h1"].append(b_h1)
                for step, (a, b) in enumerate(zip(outcome.predicted, outcome.online), start=1):
                    per_step[step].append(MetricsProcessor.rel_L2_H1_solution(a, b, ctx.mass, ctx.unit_stiffness))
                self._merge_timing(outcome.timing)
                if index == 0:
                    self.export_field(seeds[0])
                    self.export_solution(f"tables/time_solution_nb{nb:02d}.csv", p_ms=outcome.online[-1],
                                         p_ms_pred=outcome.predicted[-1], p_off=outcome.offline[-1])

            for key in ("last_l2", "last_h1", "bochner_l2", "bochner_h1"):
                tables[key].append({"nb": nb, **MetricsProcessor.aggregate(errors[key]).as_percent_row()})
            for step in sorted(per_step):
                row = {"nb": nb, "time_step": step, "time": step * tau, "enrichment": step in schedule}
                for position, norm in enumerate(("l2", "h1")):
                    report = MetricsProcessor.aggregate([pair[position] for pair in per_step[step]])
                    row.update({f"{norm}_{column}": value for column, value in report.as_percent_row().items()})
                tables["series"].append(row)
            self.logger.info(f"✅ Nb={nb}: последний шаг L² {tables['last_l2'][-1]['mean']:.3f}%, "
                             f"Бохнер L² {tables['bochner_l2'][-1]['mean']:.3f}%")

        for key, rows in tables.items():
            self.storage.write_table(rows, f"tables/time_{key}.csv")
        self.save_timing("time")
        return tables

    # ------------------------------------------------------------------
    # Замеры времени
    # ------------------------------------------------------------------

    def save_timing(self, experiment):
        """Сырые замеры эксперимента; накопитель после записи очищается"""
        rows = [{"quantity": quantity, "seconds": value}
                for quantity, values in sorted(self.timing.items()) for value in values]
        self.timing.clear()
        return self.storage.write_table(rows, f"tables/timing_raw_{experiment}.csv", columns=["quantity", "seconds"])

    def report_timing(self):
        """Сводка замеров: одна строка на величину (count, mean, min, max)"""
        names = self.storage.list("tables/timing_raw_*.csv")
        frames = [self.storage.read_table(name) for name in names]
        frames = [frame for frame in frames if len(frame)]
        if not frames:
            self.logger.warning("⚠️ Нет замеров времени для отчета")
            summary = pd.DataFrame(columns=TIMING_COLUMNS)
        else:
            frame = pd.concat(frames, ignore_index=True)
            summary = frame.groupby("quantity")["seconds"].agg(["count", "mean", "min", "max"]).reset_index()
        self.storage.write_table(summary, "tables/timing.csv")

        means = dict(zip(summary["quantity"], summary["mean"]))
        if means.get("direct_basis_s") and means.get("predicted_basis_s"):
            self.logger.info(f"⏱️ Функция: прямо {means['direct_basis_s']:.4f} сек, "
                             f"сетью {means['predicted_basis_s']:.4f} сек")
        if means.get("online_solve_s") and means.get("predicted_solve_s"):
            speedup = means["online_solve_s"] / means["predicted_solve_s"]
            self.logger.info(f"⏱️ Ускорение решения: {speedup:.2f}x")
        return summary


if __name__ == "__main__":
    from worker.cli import main

    sys.exit(main())
