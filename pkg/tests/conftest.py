import copy

import numpy as np
import pytest

from prepal.dataset import DatasetManifest, EmbeddingMatrix, generate_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def small_bench():
    """Multi-modal 4-class instance small enough for per-test runs."""
    return generate_synthetic(
        seed=41, n=3000, d=16, num_classes=4,
        separation=3.5, secondary_fraction=0.08,
        holdout_fraction=0.2, name="small-bench",
    )


def make_matrix(rows):
    return EmbeddingMatrix(np.asarray(rows, dtype=np.float32))


def make_manifest(name, labels, num_classes, **kw):
    return DatasetManifest(
        name=name, n=len(labels), num_classes=num_classes,
        labels=list(labels), **kw,
    )


def strip_run_times(doc):
    """Zero the wall-clock fields of a run record dict so two runs of the
    same session can be compared for everything that must be identical."""
    doc = copy.deepcopy(doc)
    doc["initial_fit_seconds"] = 0.0
    doc["timings"] = {}
    for it in doc["iterations"]:
        it["acquisition_seconds"] = 0.0
        it["retrain_seconds"] = 0.0
    return doc
