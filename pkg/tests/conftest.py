import numpy as np
import pytest

from pocscreen.balance import LabeledSample


def synthetic_hb_data(n: int = 320, seed: int = 5) -> tuple[np.ndarray, np.ndarray]:
    """Nonlinear benchmark: hb is a smooth function of 5 features plus noise,
    spread across every remark and severity class."""
    rng = np.random.default_rng(seed)
    X = rng.random((n, 5))
    hb = (
        11.6
        + 3.4 * np.sin(2 * np.pi * X[:, 0])
        + 1.6 * (X[:, 1] - 0.5)
        + 1.2 * X[:, 2] * X[:, 3]
        - 0.9 * (X[:, 4] - 0.5) ** 2
        + rng.normal(0, 0.25, size=n)
    )
    hb = np.clip(hb, 4.0, 20.0)
    return X, hb


def synthetic_samples(n: int = 320, seed: int = 5) -> list[LabeledSample]:
    X, hb = synthetic_hb_data(n, seed)
    return [LabeledSample(X[i], float(hb[i])) for i in range(n)]


@pytest.fixture(scope="session")
def hb_samples() -> list[LabeledSample]:
    return synthetic_samples()
