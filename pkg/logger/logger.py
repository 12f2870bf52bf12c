import logging
import sys

from config import LOG_LEVEL

LOGGER_NAME = 'ms_richards'


def setup_logger(level=None):
    """Настройка логгера для приложения"""
    logger = logging.getLogger(LOGGER_NAME)
    logger.setLevel(level or LOG_LEVEL)

    # Повторный вызов не должен дублировать вывод
    if logger.handlers:
        return logger

    formatter = logging.Formatter(
        '[%(asctime)s] %(levelname)s - %(message)s'
    )

    handler = logging.StreamHandler(sys.stdout)
    handler.setFormatter(formatter)
    logger.addHandler(handler)

    return logger


def get_logger(name):
    """Дочерний логгер модуля (ms_richards.<name>)"""
    return logging.getLogger(f'{LOGGER_NAME}.{name}')
