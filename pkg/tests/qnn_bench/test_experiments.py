import os

import numpy as np
import pytest
import yaml

from qnn_bench.harness import RunConfig, run_experiment

SEEDS = (1, 2, 3)
GOLDEN_PATH = os.path.join(os.path.dirname(__file__), "..", "resources", "golden_accuracy.yml")

_accuracies = {}


def mean_accuracy(data_dir: str, model: str, dim: int, epochs: int, batch_size: int) -> float:
    """Final test accuracy averaged over SEEDS, computed once per configuration."""
    key = (model, dim, epochs, batch_size)
    if key not in _accuracies:
        _accuracies[key] = float(
            np.mean(
                [
                    run_experiment(
                        RunConfig(model=model, dim=dim, epochs=epochs, batch_size=batch_size, seed=seed), data_dir
                    ).final_accuracy
                    for seed in SEEDS
                ]
            )
        )
    return _accuracies[key]


def load_golden():
    with open(GOLDEN_PATH) as f:
        return yaml.safe_load(f)


@pytest.mark.slow
class TestInputSize:

    def test_dim4_beats_smaller_inputs(self, real_mnist_dir):
        dim4 = mean_accuracy(real_mnist_dir, "qnn", 4, 3, 16)
        assert dim4 >= mean_accuracy(real_mnist_dir, "qnn", 3, 3, 16) + 0.02
        assert dim4 >= mean_accuracy(real_mnist_dir, "qnn", 2, 3, 16) + 0.02


@pytest.mark.slow
class TestBatchSize:

    def test_smaller_batch_is_better(self, real_mnist_dir):
        assert mean_accuracy(real_mnist_dir, "qnn", 4, 3, 16) > mean_accuracy(real_mnist_dir, "qnn", 4, 3, 32)

    def test_dim4_batch16_is_the_best_qnn_cell(self, real_mnist_dir):
        best = mean_accuracy(real_mnist_dir, "qnn", 4, 3, 16)
        others = [
            mean_accuracy(real_mnist_dir, "qnn", dim, 3, batch_size)
            for dim in (2, 3, 4)
            for batch_size in (16, 32)
            if (dim, batch_size) != (4, 16)
        ]
        assert best >= max(others)


@pytest.mark.slow
class TestFairBaseline:

    @pytest.mark.parametrize("dim", [2, 3, 4])
    def test_fair_matches_or_beats_qnn(self, real_mnist_dir, dim):
        assert mean_accuracy(real_mnist_dir, "fair", dim, 10, 16) >= mean_accuracy(real_mnist_dir, "qnn", dim, 10, 16)


@pytest.mark.slow
class TestGoldenAccuracy:

    @pytest.mark.parametrize(
        "name, model, epochs",
        [("qnn_dim4_epochs3_batch16", "qnn", 3), ("fair_dim4_epochs10_batch16", "fair", 10)],
    )
    def test_dim4_accuracy(self, real_mnist_dir, name, model, epochs):
        golden = load_golden()[name]
        accuracy = mean_accuracy(real_mnist_dir, model, 4, epochs, 16)
        assert accuracy > golden["floor"]
        if golden["pinned"] is not None:
            assert accuracy == pytest.approx(golden["pinned"], abs=golden["tolerance"])


class TestGoldenFile:

    def test_entries_are_well_formed(self):
        for entry in load_golden().values():
            assert entry["floor"] == 0.70
            assert entry["pinned"] is None or entry["pinned"] > entry["floor"]
            assert entry["tolerance"] > 0
