"""
Командная строка: python -m worker.cli <команда> [флаги]

Команды: gen-data, train, eval-basis, run-steady, run-time, report
"""

import argparse
import logging
import sys

from pydantic import ValidationError

from config import RunConfig
from processors.errors import MsRichardsError, RunInterrupted
from worker.worker import ExperimentWorker

COMMANDS = ("gen-data", "train", "eval-basis", "run-steady", "run-time", "report")


def parse_nb_list(value):
    """'2,4,8' -> (2, 4, 8)"""
    try:
        return tuple(int(item) for item in value.split(",") if item.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"Ожидался список целых через запятую: {value}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON-файл RunConfig (по умолчанию настольный пресет)")
    common.add_argument("--preset", choices=("desk", "reference"), default="desk")
    common.add_argument("--out", help="каталог артефактов")
    common.add_argument("--seed", type=int, help="базовое зерно u64")
    common.add_argument("--nb", type=parse_nb_list, help="список Nb через запятую")
    common.add_argument("--threads", type=int, help="число потоков для выборок")

    experiment = argparse.ArgumentParser(add_help=False)
    experiment.add_argument("--mode", choices=("steady", "time"), default="steady")
    experiment.add_argument("--step", type=int, default=0, help="шаг обогащения для режима time")

    parser = argparse.ArgumentParser(prog="ms-richards", description="Мультимасштабный решатель уравнения Ричардса")
    commands = parser.add_subparsers(dest="command", required=True)

    gen_data = commands.add_parser("gen-data", parents=[common, experiment], help="генерация наборов пар")
    gen_data.add_argument("--split", choices=("train", "test", "both"), default="both")
    commands.add_parser("train", parents=[common, experiment], help="обучение сетей")
    eval_basis = commands.add_parser("eval-basis", parents=[common, experiment], help="ошибки базиса")
    eval_basis.add_argument("--sweep", action="store_true", help="перебор эпох и размеров пакета")
    commands.add_parser("run-steady", parents=[common], help="стационарный эксперимент")
    commands.add_parser("run-time", parents=[common], help="нестационарный эксперимент")
    commands.add_parser("report", parents=[common], help="сводка замеров времени")
    return parser


def load_config(args):
    if args.config:
        cfg = RunConfig.from_json(args.config)
    else:
        cfg = RunConfig.reference() if args.preset == "reference" else RunConfig.desk()
    return cfg.with_overrides(output_dir=args.out, seed=args.seed, nb_list=args.nb, threads=args.threads)


def run_command(worker, args):
    if args.command == "gen-data":
        splits = ("train", "test") if args.split == "both" else (args.split,)
        for nb in worker.cfg.nb_list:
            for split in splits:
                worker.gen_dataset(nb, args.mode, args.step, split)
    elif args.command == "train":
        for nb in worker.cfg.nb_list:
            worker.train_network(nb, args.mode, args.step)
    elif args.command == "eval-basis":
        worker.eval_basis_table(args.mode, args.step, args.sweep)
    elif args.command == "run-steady":
        worker.run_steady()
    elif args.command == "run-time":
        worker.run_time_dependent()
    elif args.command == "report":
        worker.report_timing()


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
    except (ValidationError, OSError) as e:
        logging.error(f"❌ Неверная конфигурация: {e}")
        return 2

    worker = ExperimentWorker(cfg)
    try:
        run_command(worker, args)
    except RunInterrupted as e:
        worker.logger.warning(f"🛑 {e}")
        return 130
    except MsRichardsError as e:
        worker.logger.error(f"❌ Прогон завершился ошибкой: {e}")
        return 1

    worker.logger.info("🏁 Experiment Worker завершает работу")
    return 0


if __name__ == "__main__":
    sys.exit(main())
