"""
Бинарные форматы артефактов (little-endian):

MSRF - поле проницаемости: заголовок 16 байт (сигнатура, версия u32, число узлов u64), затем float64
MSRM - контрольная точка сети: слои (rows u64, cols u64, активация u8), веса и смещения, границы нормализации
MSRD - набор пар (патч κ, онлайн-функция Φ_j)
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from processors.errors import FormatError
from processors.surrogate import ACTIVATION_TAGS, FeatureBounds, MlpModel, NormalizationBounds

FORMAT_VERSION = 1

FIELD_MAGIC = b"MSRF"
MODEL_MAGIC = b"MSRM"
DATASET_MAGIC = b"MSRD"

_FIELD_HEADER = struct.Struct("<4sIQ")
_MODEL_HEADER = struct.Struct("<4sII")
_LAYER_HEADER = struct.Struct("<QQB")
_DATASET_HEADER = struct.Struct("<4sIQIIBI")

EXPERIMENT_TAGS = {"steady": 0, "time": 1}
_TAG_NAMES = {value: key for key, value in ACTIVATION_TAGS.items()}
_EXPERIMENT_NAMES = {value: key for key, value in EXPERIMENT_TAGS.items()}


@dataclass(eq=False)
class DatasetFile:
    m: int
    n_vertices: int
    samples_per_neighborhood: int
    experiment: str = "steady"
    time_step: int = 0
    vertices: np.ndarray = field(default=None, repr=False)
    seeds: np.ndarray = field(default=None, repr=False)
    kappa: np.ndarray = field(default=None, repr=False)
    phi: np.ndarray = field(default=None, repr=False)

    @property
    def n_records(self):
        return 0 if self.vertices is None else len(self.vertices)


def _check_header(magic, version, expected_magic):
    if magic != expected_magic:
        raise FormatError(f"Неверная сигнатура {magic!r}, ожидалась {expected_magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"Неподдерживаемая версия формата {version}")


def _unpack(header, payload, offset=0):
    if len(payload) < offset + header.size:
        raise FormatError(f"Заголовок обрезан: {len(payload) - offset} байт из {header.size}")
    return header.unpack_from(payload, offset)


def _read_floats(payload, count, offset):
    if len(payload) < offset + 8 * count:
        raise FormatError(f"Данные обрезаны: нужно {8 * count} байт, доступно {len(payload) - offset}")
    return np.frombuffer(payload, dtype="<f8", count=count, offset=offset).astype(np.float64)


def _record_dtype(m):
    return np.dtype([("vertex", "<u4"), ("seed", "<u8"), ("kappa", "<f8", (m,)), ("phi", "<f8", (m,))])


def encode_field(values):
    values = np.ascontiguousarray(values, dtype="<f8")
    return _FIELD_HEADER.pack(FIELD_MAGIC, FORMAT_VERSION, values.size) + values.tobytes()


def decode_field(payload):
    magic, version, count = _unpack(_FIELD_HEADER, payload)
    _check_header(magic, version, FIELD_MAGIC)
    values = _read_floats(payload, count, _FIELD_HEADER.size)
    if len(payload) != _FIELD_HEADER.size + 8 * count:
        raise FormatError(f"Лишние байты в поле: {len(payload) - _FIELD_HEADER.size - 8 * count}")
    return values


def encode_model(model, bounds):
    parts = [_MODEL_HEADER.pack(MODEL_MAGIC, FORMAT_VERSION, model.n_layers)]
    for weight, tag in zip(model.weights, model.activations):
        parts.append(_LAYER_HEADER.pack(weight.shape[0], weight.shape[1], ACTIVATION_TAGS[tag]))
    for weight, bias in zip(model.weights, model.biases):
        parts.append(np.ascontiguousarray(weight, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(bias, dtype="<f8").tobytes())
    for vector in (bounds.inputs.minimum, bounds.inputs.maximum, bounds.outputs.minimum, bounds.outputs.maximum):
        parts.append(np.ascontiguousarray(vector, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_model(payload):
    """
    Чтение контрольной точки

    Returns:
        tuple: (MlpModel, NormalizationBounds)
    """
    magic, version, n_layers = _unpack(_MODEL_HEADER, payload)
    _check_header(magic, version, MODEL_MAGIC)
    if n_layers == 0:
        raise FormatError("Контрольная точка без слоев")
    offset = _MODEL_HEADER.size
    shapes, activations = [], []
    for _ in range(n_layers):
        rows, cols, tag = _unpack(_LAYER_HEADER, payload, offset)
        offset += _LAYER_HEADER.size
        shapes.append((rows, cols))
        if tag not in _TAG_NAMES:
            raise FormatError(f"Неизвестная активация {tag}")
        activations.append(_TAG_NAMES[tag])

    def take(count):
        nonlocal offset
        values = _read_floats(payload, count, offset)
        offset += 8 * count
        return values

    weights, biases = [], []
    for rows, cols in shapes:
        weights.append(take(rows * cols).reshape(rows, cols))
        biases.append(take(rows))
    m_in, m_out = shapes[0][1], shapes[-1][0]
    bounds = NormalizationBounds(FeatureBounds(take(m_in), take(m_in)), FeatureBounds(take(m_out), take(m_out)))
    if offset != len(payload):
        raise FormatError(f"Лишние байты в контрольной точке: {len(payload) - offset}")

    layer_sizes = [shapes[0][1]] + [rows for rows, _ in shapes]
    model = MlpModel(layer_sizes, weights, biases, activations, [])
    return model, bounds


def encode_dataset(dataset):
    header = _DATASET_HEADER.pack(
        DATASET_MAGIC, FORMAT_VERSION, dataset.m, dataset.n_vertices, dataset.samples_per_neighborhood,
        EXPERIMENT_TAGS[dataset.experiment], dataset.time_step,
    )
    records = np.zeros(dataset.n_records, dtype=_record_dtype(dataset.m))
    if dataset.n_records:
        records["vertex"] = dataset.vertices
        records["seed"] = dataset.seeds
        records["kappa"] = dataset.kappa
        records["phi"] = dataset.phi
    return header + records.tobytes()


def decode_dataset(payload):
    magic, version, m, n_vertices, per_neighborhood, experiment, time_step = _unpack(_DATASET_HEADER, payload)
    _check_header(magic, version, DATASET_MAGIC)
    dtype = _record_dtype(m)
    body = len(payload) - _DATASET_HEADER.size
    if body % dtype.itemsize:
        raise FormatError(f"Размер тела {body} не кратен размеру записи {dtype.itemsize}")
    records = np.frombuffer(payload, dtype=dtype, offset=_DATASET_HEADER.size)
    return DatasetFile(
        m=m,
        n_vertices=n_vertices,
        samples_per_neighborhood=per_neighborhood,
        experiment=_EXPERIMENT_NAMES[experiment],
        time_step=time_step,
        vertices=records["vertex"].astype(np.int64),
        seeds=records["seed"].astype(np.uint64),
        kappa=records["kappa"].astype(np.float64),
        phi=records["phi"].astype(np.float64),
    )
