import os
from pathlib import Path

import pandas as pd

from client import binary_formats
from config import OUTPUT_DIR


class ArtifactStorage:
    """Каталог артефактов прогона: бинарные файлы и CSV-таблицы"""

    def __init__(self, root=None):
        self.root = Path(root or OUTPUT_DIR)
        # Создаем каталог если не существует
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, name):
        path = self.root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def _write_bytes(self, name, payload):
        path = self.path(name)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(payload)
        os.replace(tmp, path)
        return str(path)

    def save_field(self, values, name):
        """Сохранить поле проницаемости (MSRF)"""
        return self._write_bytes(name, binary_formats.encode_field(values))

    def load_field(self, name):
        return binary_formats.decode_field(self.path(name).read_bytes())

    def save_model(self, model, bounds, name):
        """Сохранить контрольную точку сети (MSRM)"""
        return self._write_bytes(name, binary_formats.encode_model(model, bounds))

    def load_model(self, name):
        return binary_formats.decode_model(self.path(name).read_bytes())

    def save_dataset(self, dataset, name):
        """Сохранить набор пар (MSRD)"""
        return self._write_bytes(name, binary_formats.encode_dataset(dataset))

    def load_dataset(self, name):
        return binary_formats.decode_dataset(self.path(name).read_bytes())

    def exists(self, name):
        return (self.root / name).exists()

    def write_table(self, rows, name, columns=None):
        """Записать CSV (UTF-8, строка заголовка, десятичная точка)"""
        frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows), columns=columns)
        path = self.path(name)
        frame.to_csv(path, index=False, encoding="utf-8", float_format="%.10g")
        return str(path)

    def read_table(self, name):
        return pd.read_csv(self.path(name))

    def list(self, pattern):
        """Имена артефактов относительно корня, отсортированные"""
        return sorted(str(path.relative_to(self.root)) for path in self.root.glob(pattern))
