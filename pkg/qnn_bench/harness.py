import itertools
import logging
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from functools import lru_cache
from typing import Any, Dict, Iterable, List, Optional, Protocol, Tuple

import jsonschema
import numpy as np
from pydantic import BaseModel, PositiveInt, confloat, root_validator, validator

from . import baseline
from .circuit import ParamVector, build_qnn, model_expectation
from .core.config import config
from .core.utils import load_grid_schema, load_yaml_file, log_validation_error
from .data import (
    DatasetSplit,
    RawImage,
    SplitProvenance,
    encode_samples,
    expand_multiplicity,
    load_mnist,
    preprocess,
)
from .metrics import EpochMetrics, accuracy
from .models import (
    DegenerateLabelsError,
    GradEngine,
    GradEngineSpecError,
    InvalidArgumentError,
    ModelKind,
    OptimizerKind,
    PauliKind,
    QnnBenchError,
    RunFailure,
    Stage,
    UnsupportedDimError,
    describe_error,
)
from .qml import batch_loss_and_gradient, init_params, sgd_step_paper, sgd_step_plain



def parse_grad_engine(text: str) -> Tuple[GradEngine, Optional[int]]:
    """'analytic', 'fd' or 'hadamard:SHOTS'."""
    name, _, shots = str(text).partition(":")
    try:
        engine = GradEngine(name)
    except ValueError:
        raise GradEngineSpecError(wrong_value=text)
    if engine == GradEngine.hadamard_test:
        if not shots.isdigit() or int(shots) < 1:
            raise GradEngineSpecError(wrong_value=text)
        return engine, int(shots)
    if shots:
        raise GradEngineSpecError(wrong_value=text)
    return engine, None


class RunConfig(BaseModel):
    model: ModelKind = ModelKind.qnn
    allow_large: bool = False
    dim: int = 4
    epochs: PositiveInt = config.DEFAULT_EPOCHS
    batch_size: PositiveInt = config.DEFAULT_BATCH_SIZE
    learning_rate: confloat(gt=0) = config.DEFAULT_LEARNING_RATE
    optimizer: OptimizerKind = OptimizerKind.plain
    grad_engine: GradEngine = GradEngine.analytic
    shots: Optional[PositiveInt] = None
    fd_epsilon: confloat(gt=0) = config.FD_EPSILON
    labels: Tuple[int, int] = config.DEFAULT_LABELS
    seed: int = config.DEFAULT_SEED
    dedup: bool = True
    threshold: confloat(gt=0, lt=1) = config.DEFAULT_THRESHOLD
    observable: PauliKind = PauliKind.Z

    class Config:
        allow_mutation = False

    @root_validator(pre=True)
    def split_grad_engine_spec(cls, values):
        spec = values.get("grad_engine")
        if isinstance(spec, str) and ":" in spec:
            values = dict(values)
            values["grad_engine"], values["shots"] = parse_grad_engine(spec)
        return values

    @validator("dim")
    def supported_dim(cls, v: int, values):
        large_ok = values.get("allow_large") and v == config.LARGE_DIM
        if v not in config.SUPPORTED_DIMS and not large_ok:
            raise UnsupportedDimError(wrong_value=v)
        return v

    @validator("labels")
    def distinct_digits(cls, v: Tuple[int, int]):
        if v[0] == v[1] or not all(0 <= digit <= 9 for digit in v):
            raise DegenerateLabelsError(wrong_value=v)
        return v

    @validator("observable")
    def readout_observable(cls, v: PauliKind):
        if v == PauliKind.X:
            raise ValueError("the readout observable is Y or Z")
        return v

    @root_validator(skip_on_failure=True)
    def engine_settings(cls, values):
        if values["grad_engine"] == GradEngine.hadamard_test and values["shots"] is None:
            raise GradEngineSpecError(wrong_value=GradEngine.hadamard_test.value)
        if values["model"] == ModelKind.fair and values["dim"] == config.LARGE_DIM:
            raise UnsupportedDimError(wrong_value=values["dim"])
        return values

    @property
    def grad_spec(self) -> str:
        if self.grad_engine == GradEngine.hadamard_test:
            return f"{self.grad_engine.value}:{self.shots}"
        return self.grad_engine.value

    def sort_key(self) -> Tuple[str, int, int, int]:
        return (self.model.value, self.dim, self.batch_size, self.epochs)


class RunRecord(BaseModel):
    config: RunConfig
    per_epoch: List[EpochMetrics]
    wall_time: float
    provenance: Optional[SplitProvenance] = None

    @validator("per_epoch")
    def one_entry_per_epoch(cls, v: List[EpochMetrics], values):
        run_config = values.get("config")
        if run_config is not None and len(v) != run_config.epochs:
            raise ValueError(f"{len(v)} epoch entries for a {run_config.epochs}-epoch run")
        return v

    @property
    def final_accuracy(self) -> float:
        return self.per_epoch[-1].test_accuracy


@lru_cache(maxsize=2)
def _raw_images(data_path: str) -> Tuple[Tuple[RawImage, ...], Tuple[RawImage, ...]]:
    train, test = load_mnist(data_path)
    return tuple(train), tuple(test)


@lru_cache(maxsize=None)
def _cached_split(
    data_path: str,
    labels: Tuple[int, int],
    dim: int,
    threshold: float,
    dedup: bool,
    allow_large: bool,
) -> DatasetSplit:
    train, test = _raw_images(data_path)
    return preprocess(train, test, labels, dim, threshold, dedup, allow_large)


def train_qnn(split: DatasetSplit, run_config: RunConfig) -> Tuple[ParamVector, List[EpochMetrics]]:
    """Mini-batch training of the single-block QNN; batch size 1 is per-sample SGD."""
    if not split.train or not split.test:
        raise InvalidArgumentError("cannot train on a split with an empty train or test set")
    circuit, readout = build_qnn(split.dim, allow_large=run_config.allow_large)
    train = encode_samples(expand_multiplicity(split.train))
    test = encode_samples(split.test)
    test_labels = [sample.label for sample in test]
    params = init_params(circuit.n_params, run_config.seed)
    rng = np.random.default_rng(run_config.seed)
    seed_sequence = np.random.SeedSequence(run_config.seed)
    history = []
    for epoch in range(1, run_config.epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(len(train))
        losses = []
        skipped = 0
        for start in range(0, len(train), run_config.batch_size):
            batch = [train[i] for i in order[start:start + run_config.batch_size]]
            loss, grad = batch_loss_and_gradient(
                circuit,
                params,
                batch,
                engine=run_config.grad_engine,
                readout=readout,
                observable=run_config.observable,
                shots=run_config.shots,
                seed_sequence=seed_sequence,
                eps=run_config.fd_epsilon,
            )
            if run_config.optimizer == OptimizerKind.paper:
                step = sgd_step_paper(params, grad, loss, run_config.learning_rate)
                params = step.params
                skipped += step.skipped
            else:
                params = sgd_step_plain(params, grad, run_config.learning_rate)
            losses.append(loss)
            logging.debug("batch at %d: loss %.5f", start, loss)
        outputs = [
            model_expectation(circuit, params, sample.input_state, readout, run_config.observable)
            for sample in test
        ]
        metrics = EpochMetrics(
            epoch=epoch,
            train_loss=float(np.mean(losses)),
            test_accuracy=accuracy(outputs, test_labels),
            wall_time=time.perf_counter() - started,
        )
        logging.info(
            "qnn epoch %d/%d: train loss %.4f, test accuracy %.4f (%.1fs, %d skipped steps)",
            epoch, run_config.epochs, metrics.train_loss, metrics.test_accuracy,
            metrics.wall_time, skipped,
        )
        history.append(metrics)
    return params, history


def _train(split: DatasetSplit, run_config: RunConfig) -> List[EpochMetrics]:
    if run_config.model == ModelKind.qnn:
        _, history = train_qnn(split, run_config)
        return history
    net = baseline.build_fair(split.dim, seed=run_config.seed)
    _, history = baseline.train_fair(
        net, split, run_config.epochs, run_config.batch_size, run_config.learning_rate, run_config.seed
    )
    return history


def run_experiment(run_config: RunConfig, data_path: str) -> RunRecord:
    started = time.perf_counter()
    logging.info("Running %s", run_config.json())
    try:
        split = _cached_split(
            str(data_path),
            run_config.labels,
            run_config.dim,
            run_config.threshold,
            run_config.dedup,
            run_config.allow_large,
        )
    except QnnBenchError as e:
        raise RunFailure(Stage.data.value, e) from e
    try:
        history = _train(split, run_config)
    except (QnnBenchError, ValueError, FloatingPointError) as e:
        raise RunFailure(Stage.train.value, e) from e
    return RunRecord(
        config=run_config,
        per_epoch=history,
        wall_time=time.perf_counter() - started,
        provenance=split.provenance,
    )


def default_grid(seeds: Iterable[int] = (config.DEFAULT_SEED,)) -> List[RunConfig]:
    """{qnn, fair} x dim {2, 3, 4} x batch {16, 32} x epochs {3, 10}, once per seed."""
    return [
        RunConfig(model=model, dim=dim, batch_size=batch_size, epochs=epochs, seed=seed)
        for model, dim, batch_size, epochs, seed in itertools.product(
            (ModelKind.qnn, ModelKind.fair), (2, 3, 4), (16, 32), (3, 10), tuple(seeds)
        )
    ]


def grid_from_document(document: Dict[str, Any]) -> List[RunConfig]:
    validator_ = jsonschema.Draft7Validator(load_grid_schema())
    errors = list(validator_.iter_errors(document))
    for error in errors:
        log_validation_error(error)
    if errors:
        raise InvalidArgumentError("grid file does not match the grid schema")
    base = document.get("base", {})
    axes = document.get("axes", {})
    grid = []
    if axes:
        names = list(axes)
        for combo in itertools.product(*(axes[name] for name in names)):
            grid.append(RunConfig(**{**base, **dict(zip(names, combo))}))
    for run in document.get("runs", []):
        grid.append(RunConfig(**{**base, **run}))
    if not grid:
        grid.append(RunConfig(**base))
    return grid


def load_grid(path: str) -> List[RunConfig]:
    return grid_from_document(load_yaml_file(path))


class RecordSink(Protocol):
    """Where a sweep sends its results, `report.RecordWriter` in practice."""

    out_dir: str

    def write_record(self, index: int, record: RunRecord) -> int:
        ...

    def write_failure(self, index: int, run_config: RunConfig, error: Optional[str]) -> int:
        ...


def _run_safely(index: int, run_config: RunConfig, data_path: str):
    try:
        return index, run_experiment(run_config, data_path), None
    except QnnBenchError as e:
        return index, None, describe_error(e)


def sweep(
    grid: List[RunConfig], data_path: str, writer: RecordSink, workers: int = 1
) -> List[RunRecord]:
    """Run every config, handing each finished record to `writer` as soon as it completes.

    Failed runs go to the writer's failure log and the sweep continues.
    """
    if not grid:
        raise InvalidArgumentError("cannot sweep an empty grid")
    logging.info("Sweeping %d configurations into %s", len(grid), writer.out_dir)
    finished: Dict[int, RunRecord] = {}

    def collect(index: int, record: Optional[RunRecord], error: Optional[str]) -> None:
        if record is None:
            logging.warning("Run %d failed: %s", index, error)
            writer.write_failure(index, grid[index], error)
            return
        writer.write_record(index, record)
        finished[index] = record
        logging.info(
            "Run %d/%d done: %s dim=%d batch=%d epochs=%d accuracy %.4f",
            len(finished), len(grid), *record.config.sort_key(), record.final_accuracy,
        )

    if workers <= 1:
        for index, run_config in enumerate(grid):
            collect(*_run_safely(index, run_config, data_path))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_run_safely, index, run_config, data_path)
                for index, run_config in enumerate(grid)
            ]
            for future in as_completed(futures):
                collect(*future.result())
    return [finished[index] for index in sorted(finished)]
