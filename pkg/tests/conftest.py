import numpy as np
import pytest

from shapesize import Dataset, Subject


def make_dataset(rows, tau):
    """Build a Dataset from (id, z, c, events) tuples."""
    subs = [
        Subject(id=str(i), z=np.asarray(z, dtype=float), c=float(c),
                events=np.asarray(ev, dtype=float))
        for i, z, c, ev in rows
    ]
    return Dataset(subjects=subs, tau=float(tau))


@pytest.fixture
def two_subject_fixture():
    # identical covariates, one event each; hand-computable sums
    return make_dataset(
        [
            ("a", [0.3, -0.2], 1.0, [0.3]),
            ("b", [0.3, -0.2], 1.0, [0.6]),
        ],
        tau=1.0,
    )


@pytest.fixture
def seven_event_fixture():
    # n=5, 7 events, mixed censoring; exercises every objective term
    return make_dataset(
        [
            ("1", [0.4, 1.1], 0.9, [0.15, 0.62]),
            ("2", [-0.8, 0.3], 1.0, [0.41]),
            ("3", [1.5, -0.6], 0.55, [0.05, 0.50]),
            ("4", [0.1, 0.2], 1.0, [0.77]),
            ("5", [-1.2, -0.9], 0.7, [0.33]),
        ],
        tau=1.0,
    )
