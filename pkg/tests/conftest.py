import numpy as np
import pytest

from messkit import LabelMap, PredictionTensor


def random_softmax(rng: np.random.Generator, m: int, rows: int, cols: int) -> PredictionTensor:
    raw = rng.random((m, rows, cols)) + 1e-3
    return PredictionTensor((raw / raw.sum(axis=0)).astype(np.float32))


def one_hot_tensor(labels: np.ndarray, m: int) -> PredictionTensor:
    rows, cols = labels.shape
    data = np.zeros((m, rows, cols), dtype=np.float32)
    rr, cc = np.indices((rows, cols))
    data[labels, rr, cc] = 1.0
    return PredictionTensor(data)


def random_labels(rng: np.random.Generator, m: int, rows: int, cols: int,
                  ignore_fraction: float = 0.0) -> LabelMap:
    arr = rng.integers(0, m, size=(rows, cols)).astype(np.uint16)
    if ignore_fraction > 0:
        arr[rng.random((rows, cols)) < ignore_fraction] = 65535
    return LabelMap(arr)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240811)
