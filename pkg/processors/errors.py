"""Иерархия исключений решателя"""


class MsRichardsError(Exception):
    """Базовое исключение пакета"""


class ConfigurationError(MsRichardsError, ValueError):
    """Недопустимые размеры, расписания, ширины слоев"""


class DimensionError(MsRichardsError, ValueError):
    def __init__(self, message, expected=None, actual=None):
        if expected is not None or actual is not None:
            message = f"{message} (ожидалось {expected}, получено {actual})"
        super().__init__(message)
        self.expected = expected
        self.actual = actual


class NumericalError(MsRichardsError, RuntimeError):
    """Отказ решателя; context хранит итерацию, эпоху, окрестность и т.п."""

    def __init__(self, message, **context):
        if context:
            details = ", ".join(f"{key}={value}" for key, value in context.items())
            message = f"{message} [{details}]"
        super().__init__(message)
        self.context = context


class NumericalInputError(NumericalError, ValueError):
    pass


class RankDeficiencyError(NumericalError):
    pass


class FormatError(MsRichardsError, ValueError):
    """Неверная сигнатура или версия бинарного файла"""


class RunInterrupted(MsRichardsError):
    """Прогон остановлен сигналом или лимитом времени"""
