"""Metrics persistence: the per-epoch CSV, the config sidecar and the pivot tables.

A run is complete once its line is in `configs.jsonl`; its CSV rows are written
first, so an interrupted sweep leaves rows without a config line, which
`load_records` ignores.
"""
import csv
import json
import logging
import os
from collections import defaultdict
from typing import Callable, Dict, Hashable, List, NamedTuple, Optional, Sequence

from pydantic import ValidationError

from .core.config import config
from .core.utils import ensure_dir, load_json_lines
from .harness import RunConfig, RunRecord
from .metrics import EpochMetrics
from .models import DataNotFoundError, InvalidArgumentError, ModelKind, ReportIOError

RUN_COLUMNS = [
    "run_id",
    "model",
    "dim",
    "epochs",
    "batch_size",
    "learning_rate",
    "optimizer",
    "grad_engine",
    "labels",
    "seed",
    "dedup",
    "threshold",
    "observable",
    "epoch",
    "train_loss",
    "test_accuracy",
    "epoch_wall_time",
    "run_wall_time",
]


class PivotTable(NamedTuple):
    header: List[str]
    rows: List[list]


def record_rows(run_id: int, record: RunRecord) -> List[list]:
    run_config = record.config
    prefix = [
        run_id,
        run_config.model.value,
        run_config.dim,
        run_config.epochs,
        run_config.batch_size,
        repr(run_config.learning_rate),
        run_config.optimizer.value,
        run_config.grad_spec,
        ",".join(str(digit) for digit in run_config.labels),
        run_config.seed,
        str(run_config.dedup).lower(),
        repr(run_config.threshold),
        run_config.observable.value,
    ]
    return [
        prefix + [m.epoch, repr(m.train_loss), repr(m.test_accuracy), repr(m.wall_time), repr(record.wall_time)]
        for m in record.per_epoch
    ]


def _existing_run_ids(*paths: str) -> List[int]:
    run_ids = []
    for path in paths:
        if os.path.exists(path):
            run_ids.extend(entry["run_id"] for entry in load_json_lines(path))
    return run_ids


class RecordWriter:
    """Serialized, flushed-per-record writer for one output directory.

    With `append` the run ids continue after those already present.
    """

    def __init__(self, out_dir: str, append: bool = True):
        self.out_dir = out_dir
        self.append = append
        self.runs_path = os.path.join(out_dir, config.RUNS_CSV_FILENAME)
        self.configs_path = os.path.join(out_dir, config.CONFIGS_FILENAME)
        self.failures_path = os.path.join(out_dir, config.FAILURES_FILENAME)
        self.first_run_id = 0
        self._runs = None
        self._configs = None
        self._failures = None

    def __enter__(self) -> "RecordWriter":
        try:
            ensure_dir(self.out_dir)
            mode = "a" if self.append else "w"
            if self.append:
                existing = _existing_run_ids(self.configs_path, self.failures_path)
                self.first_run_id = max(existing) + 1 if existing else 0
            new_csv = not self.append or not os.path.exists(self.runs_path) or os.path.getsize(self.runs_path) == 0
            self._runs = open(self.runs_path, mode, newline="")
            self._configs = open(self.configs_path, mode)
        except OSError as e:
            self.close()
            raise ReportIOError(f"cannot write results to {self.out_dir}: {e}") from e
        self._csv = csv.writer(self._runs)
        if new_csv:
            self._csv.writerow(RUN_COLUMNS)
            self._runs.flush()
        return self

    def __exit__(self, exc_type, exc_value, traceback) -> None:
        self.close()

    def close(self) -> None:
        for handle in (self._runs, self._configs, self._failures):
            if handle is not None:
                handle.close()
        self._runs = self._configs = self._failures = None

    def write_record(self, index: int, record: RunRecord) -> int:
        run_id = self.first_run_id + index
        try:
            self._csv.writerows(record_rows(run_id, record))
            self._runs.flush()
            entry = {
                "run_id": run_id,
                "config": json.loads(record.config.json()),
                "wall_time": record.wall_time,
                "provenance": record.provenance.dict() if record.provenance is not None else None,
            }
            self._configs.write(json.dumps(entry) + "\n")
            self._configs.flush()
        except OSError as e:
            raise ReportIOError(f"cannot write run {run_id} to {self.out_dir}: {e}") from e
        return run_id

    def write_failure(self, index: int, run_config: RunConfig, error: Optional[str]) -> int:
        run_id = self.first_run_id + index
        try:
            if self._failures is None:
                self._failures = open(self.failures_path, "a")
            entry = {"run_id": run_id, "config": json.loads(run_config.json()), "error": error}
            self._failures.write(json.dumps(entry) + "\n")
            self._failures.flush()
        except OSError as e:
            raise ReportIOError(f"cannot write failure {run_id} to {self.out_dir}: {e}") from e
        return run_id


def load_records(in_dir: str) -> List[RunRecord]:
    """Rebuild the complete runs of a results directory, ordered by run id."""
    entries = load_json_lines(os.path.join(in_dir, config.CONFIGS_FILENAME))
    runs_path = os.path.join(in_dir, config.RUNS_CSV_FILENAME)
    epochs: Dict[int, List[EpochMetrics]] = defaultdict(list)
    try:
        with open(runs_path, newline="") as f:
            for row in csv.DictReader(f):
                epochs[int(row["run_id"])].append(
                    EpochMetrics(
                        epoch=int(row["epoch"]),
                        train_loss=float(row["train_loss"]),
                        test_accuracy=float(row["test_accuracy"]),
                        wall_time=float(row["epoch_wall_time"]),
                    )
                )
    except FileNotFoundError as e:
        logging.error(f"Could not find file at {runs_path}.")
        raise DataNotFoundError(f"no runs file at {runs_path}") from e

    records = []
    for entry in sorted(entries, key=lambda e: e["run_id"]):
        per_epoch = sorted(epochs.get(entry["run_id"], []), key=lambda m: m.epoch)
        try:
            records.append(
                RunRecord(
                    config=RunConfig(**entry["config"]),
                    per_epoch=per_epoch,
                    wall_time=entry["wall_time"],
                    provenance=entry.get("provenance"),
                )
            )
        except ValidationError as e:
            logging.warning("Skipping incomplete run %s: %s", entry["run_id"], e)
    logging.info("Loaded %d runs from %s", len(records), in_dir)
    return records


def _mean_final_accuracy(
    records: Sequence[RunRecord], key: Callable[[RunConfig], Hashable]
) -> Dict[Hashable, float]:
    groups: Dict[Hashable, List[float]] = defaultdict(list)
    for record in records:
        groups[key(record.config)].append(record.final_accuracy)
    return {k: sum(values) / len(values) for k, values in groups.items()}


def _pivot(
    records: Sequence[RunRecord],
    row_names: List[str],
    row_key: Callable[[RunConfig], tuple],
    column_name: str,
    column_key: Callable[[RunConfig], int],
) -> PivotTable:
    cells = _mean_final_accuracy(records, lambda c: (row_key(c), column_key(c)))
    row_keys = sorted({r for r, _ in cells})
    column_keys = sorted({c for _, c in cells})
    header = row_names + [f"{column_name}_{c}" for c in column_keys]
    rows = [list(r) + [cells.get((r, c)) for c in column_keys] for r in row_keys]
    return PivotTable(header, rows)


def accuracy_by_dim(records: Sequence[RunRecord]) -> PivotTable:
    """Seed-averaged final accuracy per input size, one row per (model, batch, epochs)."""
    return _pivot(
        records,
        ["model", "batch_size", "epochs"],
        lambda c: (c.model.value, c.batch_size, c.epochs),
        "dim",
        lambda c: c.dim,
    )


def accuracy_by_batch(records: Sequence[RunRecord]) -> PivotTable:
    return _pivot(
        records,
        ["model", "dim", "epochs"],
        lambda c: (c.model.value, c.dim, c.epochs),
        "batch",
        lambda c: c.batch_size,
    )


def qnn_vs_fair(records: Sequence[RunRecord]) -> PivotTable:
    """Seed-averaged QNN and fair accuracy per (dim, batch, epochs); delta is fair minus QNN."""
    cells = _mean_final_accuracy(records, lambda c: (c.dim, c.batch_size, c.epochs, c.model))
    rows = []
    for dim, batch_size, epochs in sorted({key[:3] for key in cells}):
        qnn = cells.get((dim, batch_size, epochs, ModelKind.qnn))
        fair = cells.get((dim, batch_size, epochs, ModelKind.fair))
        delta = fair - qnn if qnn is not None and fair is not None else None
        rows.append([dim, batch_size, epochs, qnn, fair, delta])
    return PivotTable(["dim", "batch_size", "epochs", "qnn", "fair", "delta"], rows)


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_pivot(table: PivotTable, path: str) -> str:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(table.header)
        writer.writerows([[_format_cell(value) for value in row] for row in table.rows])
    return path


def write_pivots(records: Sequence[RunRecord], out_dir: str) -> Dict[str, str]:
    if not records:
        raise InvalidArgumentError("cannot pivot an empty list of records")
    pivots = {
        config.ACCURACY_BY_DIM_FILENAME: accuracy_by_dim(records),
        config.ACCURACY_BY_BATCH_FILENAME: accuracy_by_batch(records),
        config.QNN_VS_FAIR_FILENAME: qnn_vs_fair(records),
    }
    try:
        ensure_dir(out_dir)
        written = {
            filename: write_pivot(table, os.path.join(out_dir, filename))
            for filename, table in pivots.items()
        }
    except OSError as e:
        raise ReportIOError(f"cannot write pivot tables to {out_dir}: {e}") from e
    for path in written.values():
        logging.info(f"Generated {path}")
    return written


def emit_report(records: Sequence[RunRecord], out_dir: str) -> Dict[str, str]:
    """Write the runs CSV, the config sidecar and the three pivot tables; returns name -> path."""
    if not records:
        raise InvalidArgumentError("cannot report on an empty list of records")
    with RecordWriter(out_dir, append=False) as writer:
        for index, record in enumerate(records):
            writer.write_record(index, record)
    logging.info(f"Generated {writer.runs_path} with {len(records)} runs")
    written = {
        config.RUNS_CSV_FILENAME: writer.runs_path,
        config.CONFIGS_FILENAME: writer.configs_path,
    }
    written.update(write_pivots(records, out_dir))
    return written
