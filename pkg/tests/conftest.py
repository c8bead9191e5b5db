import itertools
import os
from typing import Optional

import numpy as np
import pytest

from qnn_bench.core.config import config
from qnn_bench.data import BinarizedImage, DatasetSplit, Provenance, SplitProvenance
from tests.qnn_bench.idx_files import digit_image, write_idx_images, write_idx_labels


def pixel_zero_split(dim: int = 2, size: Optional[int] = None, seed: int = 0) -> DatasetSplit:
    """Every dim x dim grid once, labelled +1 exactly when pixel 0 is set.

    With `size`, a seeded draw of that many distinct grids instead.
    """
    grids = list(itertools.product((0, 1), repeat=dim * dim))
    if size is not None:
        picked = np.random.default_rng(seed).choice(len(grids), size=size, replace=False)
        grids = [grids[i] for i in sorted(picked)]
    images = [
        BinarizedImage(
            bits=np.array(bits, dtype=np.uint8).reshape(dim, dim),
            label=1 if bits[0] else -1,
        )
        for bits in grids
    ]
    counts = Provenance(raw=len(images), filtered=len(images), groups=len(images), deduped=len(images))
    return DatasetSplit(
        dim=dim,
        labels=config.DEFAULT_LABELS,
        threshold=config.DEFAULT_THRESHOLD,
        train=images,
        test=images,
        provenance=SplitProvenance(train=counts, test=counts),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def synthetic_split():
    return pixel_zero_split()


@pytest.fixture
def hundred_sample_split():
    return pixel_zero_split(dim=3, size=100)


@pytest.fixture
def mnist_dir(tmp_path):
    """A tiny IDX dataset: 8 threes, 8 sixes and 4 ones to train on, 2 of each to test.

    The training images file is gzipped, the others are plain.
    """
    train_labels = [3] * 8 + [6] * 8 + [1] * 4
    test_labels = [3, 6, 1, 3, 6, 1]
    train_images = np.stack([digit_image(label, i) for i, label in enumerate(train_labels)])
    test_images = np.stack([digit_image(label, i) for i, label in enumerate(test_labels)])
    directory = str(tmp_path / "mnist")
    os.makedirs(directory)
    write_idx_images(os.path.join(directory, config.TRAIN_IMAGES_FILENAME), train_images, compress=True)
    write_idx_labels(os.path.join(directory, config.TRAIN_LABELS_FILENAME), train_labels)
    write_idx_images(os.path.join(directory, config.TEST_IMAGES_FILENAME), test_images)
    write_idx_labels(os.path.join(directory, config.TEST_LABELS_FILENAME), test_labels)
    return directory


@pytest.fixture
def real_mnist_dir():
    directory = os.environ.get("QNN_BENCH_MNIST_DIR")
    if not directory:
        pytest.skip("set QNN_BENCH_MNIST_DIR to run checks against the real MNIST files")
    return directory
