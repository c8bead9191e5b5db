
from dataclasses import dataclass
from typing import Tuple


@dataclass
class Config:
    LOG_LEVEL: str = 'INFO'
    OUTPUT_DIR: str = './qnn_bench_out'

    # data pipeline
    DEFAULT_LABELS: Tuple[int, int] = (3, 6)
    DEFAULT_THRESHOLD: float = 0.5
    SUPPORTED_DIMS: Tuple[int, ...] = (2, 3, 4)
    LARGE_DIM: int = 5
    MNIST_IMAGE_SIDE: int = 28
    TRAIN_IMAGES_FILENAME: str = 'train-images-idx3-ubyte'
    TRAIN_LABELS_FILENAME: str = 'train-labels-idx1-ubyte'
    TEST_IMAGES_FILENAME: str = 't10k-images-idx3-ubyte'
    TEST_LABELS_FILENAME: str = 't10k-labels-idx1-ubyte'

    # simulation tolerances
    NORM_TOLERANCE: float = 1e-6
    IMAG_RESIDUE_TOLERANCE: float = 1e-10

    # training
    DEFAULT_LEARNING_RATE: float = 0.02
    DEFAULT_EPOCHS: int = 3
    DEFAULT_BATCH_SIZE: int = 16
    DEFAULT_SEED: int = 1
    FD_EPSILON: float = 1e-5
    VANISHING_GRADIENT_THRESHOLD: float = 1e-12
    FAIR_INIT_SCALE: float = 0.5
    FAIR_HIDDEN_WIDTH: int = 2

    # outputs
    RUNS_CSV_FILENAME: str = 'runs.csv'
    CONFIGS_FILENAME: str = 'configs.jsonl'
    FAILURES_FILENAME: str = 'failures.jsonl'
    ACCURACY_BY_DIM_FILENAME: str = 'accuracy_by_dim.csv'
    ACCURACY_BY_BATCH_FILENAME: str = 'accuracy_by_batch.csv'
    QNN_VS_FAIR_FILENAME: str = 'qnn_vs_fair.csv'
    SPLIT_CACHE_SUFFIX: str = '.npz'
    PROVENANCE_SUFFIX: str = '.provenance.yml'


config = Config()
