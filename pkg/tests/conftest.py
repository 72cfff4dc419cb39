import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from poisonbench.data_ingest import Dataset

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def make_dataset(features, labels, class_names=None, indices=None):
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if class_names is None:
        class_names = tuple(f"c{i}" for i in range(int(labels.max()) + 1 if len(labels) else 1))
    if indices is None:
        indices = np.arange(len(labels))
    return Dataset(features=features, labels=labels, indices=np.asarray(indices), class_names=tuple(class_names))


def two_blobs(n_per_class=50, sep=20.0, dim=2, seed=0):
    """Two unit-variance Gaussian blobs whose centres are ``sep`` sigma apart."""
    rng = np.random.default_rng(seed)
    centre = np.zeros(dim)
    centre[0] = sep
    X = np.vstack([rng.normal(0, 1, (n_per_class, dim)), centre + rng.normal(0, 1, (n_per_class, dim))])
    y = np.repeat([0, 1], n_per_class)
    return make_dataset(X, y, ("a", "b"))


@pytest.fixture
def blobs():
    return two_blobs()


# one line per acceptance criterion, echoed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
