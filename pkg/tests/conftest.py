import os

import numpy as np
import pytest

from ivhd.datasets import Dataset, mnist_like


def _load_real_mnist(path):
    """Accept a keras-style mnist.npz (x_train/y_train/x_test/y_test)."""
    with np.load(path) as blob:
        x = np.concatenate([blob["x_train"], blob["x_test"]]).reshape(-1, 784)
        y = np.concatenate([blob["y_train"], blob["y_test"]])
    return Dataset(x.astype(np.float32), labels=y.astype(np.int64), name="mnist")


@pytest.fixture(scope="session")
def digits70k():
    """Real MNIST when IVHD_MNIST_NPZ points at it, else the deterministic
    surrogate at the same scale."""
    path = os.environ.get("IVHD_MNIST_NPZ")
    if path and os.path.exists(path):
        return _load_real_mnist(path)
    return mnist_like(70000, seed=0)


@pytest.fixture(scope="session")
def digits7k(digits70k):
    rng = np.random.default_rng(1)
    keep = np.sort(rng.choice(digits70k.M, size=7000, replace=False))
    return Dataset(
        digits70k.data[keep], labels=digits70k.labels[keep], name="digits-7k"
    )
