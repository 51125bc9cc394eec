"""Shared fixtures: small trained runs reused across test modules, plus
the acceptance-criteria summary printed at the end of the run."""

import numpy as np
import pytest

from epk import data, model, train

ACCEPTANCE_RESULTS = []
ACCEPTANCE_NOTES = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        ACCEPTANCE_RESULTS.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, outcome in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{outcome.upper():6s} {name}")
    for note in ACCEPTANCE_NOTES:
        terminalreporter.write_line(f"       {note}")


@pytest.fixture(scope="session")
def small_blobs():
    return data.gen_blobs(
        data.BlobSpec(
            means=((1.0, 4.0), (4.0, 1.0), (5.0, 5.0)),
            std=1.0,
            per_class_count=15,
            dim=5,
            seed=3,
        )
    )


@pytest.fixture(scope="session")
def small_traj(small_blobs):
    spec = model.ModelSpec((5, 8, 3))
    return train.train_full_batch(spec, small_blobs, 0.2, 30, seed=7)


@pytest.fixture(scope="session")
def affine_dataset():
    """Two-class data for the affine (identity-head, no-hidden) diagnostics."""
    rng = np.random.default_rng(50)
    X = rng.normal(size=(8, 3))
    Y = np.eye(2)[rng.integers(0, 2, size=8)]
    return data.LabeledDataset(X, Y)


@pytest.fixture(scope="session")
def affine_traj(affine_dataset):
    """Model affine in its weights: the test-side Jacobian is constant
    along every interpolation segment, so quadrature is exact at any T."""
    spec = model.ModelSpec((3, 2), output_head="identity")
    return train.train_full_batch(spec, affine_dataset, 0.05, 6, seed=9)
