import argparse
import logging
import sys
from typing import List, Optional, Sequence, Tuple

try:
    from importlib.metadata import PackageNotFoundError, version
except ImportError:
    from importlib_metadata import PackageNotFoundError, version

from pydantic import ValidationError

from .core.config import config
from .core.utils import configure_logging
from .harness import RunConfig, default_grid, load_grid, run_experiment, sweep
from .models import (
    CorruptDataError,
    DataNotFoundError,
    GradEngine,
    InvalidArgumentError,
    ModelKind,
    OptimizerKind,
    QnnBenchError,
    RunFailure,
    Stage,
    describe_error,
)
from .report import RecordWriter, emit_report, load_records, write_pivots

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUN_FAILURE = 3

DATA_ERRORS = (DataNotFoundError, CorruptDataError)


class UsageErrorParser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f'{self.prog}: error: {message}\n')


def package_version() -> str:
    try:
        return version('qnn-bench')
    except PackageNotFoundError:
        return 'unknown'


def parse_labels(text: str) -> Tuple[int, int]:
    try:
        first, second = (int(part) for part in text.split(','))
    except ValueError:
        raise argparse.ArgumentTypeError(f'expected two digits like 3,6, got {text!r}')
    return first, second


def parse_seeds(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(',')]
    except ValueError:
        raise argparse.ArgumentTypeError(f'expected comma-separated integer seeds, got {text!r}')


def exit_code_for(error: Exception) -> int:
    if isinstance(error, (ValidationError, InvalidArgumentError)):
        return EXIT_USAGE
    if isinstance(error, DATA_ERRORS):
        return EXIT_DATA
    if isinstance(error, RunFailure) and (error.stage == Stage.data.value or isinstance(error.cause, DATA_ERRORS)):
        return EXIT_DATA
    return EXIT_RUN_FAILURE


def run_single(args) -> int:
    run_config = RunConfig(
        model=args.model,
        allow_large=args.allow_large,
        dim=args.dim,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        optimizer=args.optimizer,
        grad_engine=args.grad,
        labels=args.labels,
        seed=args.seed,
        dedup=not args.no_dedup,
        threshold=args.threshold,
        observable=args.observable,
    )
    record = run_experiment(run_config, args.data)
    with RecordWriter(args.out) as writer:
        run_id = writer.write_record(0, record)
    logging.info(
        f'Run {run_id} finished with test accuracy {record.final_accuracy:.4f} '
        f'in {record.wall_time:.1f}s, results in {args.out}'
    )
    return EXIT_OK


def run_sweep(args) -> int:
    if args.grid == 'default':
        grid = default_grid(args.seeds or (config.DEFAULT_SEED,))
    else:
        grid = load_grid(args.grid)
        if args.seeds:
            grid = [run_config.copy(update={'seed': seed}) for run_config in grid for seed in args.seeds]
    with RecordWriter(args.out) as writer:
        records = sweep(grid, args.data, writer, workers=args.workers)
    failed = len(grid) - len(records)
    if failed:
        logging.warning(f'{failed} of {len(grid)} runs failed, see {config.FAILURES_FILENAME} in {args.out}')
    if not records:
        logging.error('Every run of the sweep failed')
        return EXIT_RUN_FAILURE
    write_pivots(load_records(args.out), args.out)
    logging.info('Success')
    return EXIT_OK


def run_report(args) -> int:
    records = load_records(args.in_dir)
    if not records:
        raise DataNotFoundError(f'no complete runs in {args.in_dir}')
    emit_report(records, args.out)
    logging.info('Success')
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = UsageErrorParser(add_help=False)
    common.add_argument(
        '--log-level',
        help='Set level of logs. Default is INFO',
        choices=['DEBUG', 'INFO', 'WARN', 'ERROR'],
        type=str,
        default=config.LOG_LEVEL,
    )

    argparser = UsageErrorParser(prog='qnn-bench')
    argparser.add_argument(
        '--version',
        action='version',
        version=f'qnn-bench {package_version()}',
    )
    commands = argparser.add_subparsers(dest='command', required=True)

    run_parser = commands.add_parser('run', parents=[common], help='Train and evaluate one configuration')
    run_parser.add_argument('--model', choices=[m.value for m in ModelKind], default=ModelKind.qnn.value)
    run_parser.add_argument('--dim', help='Downsampled image side, 2, 3 or 4', type=int, default=4)
    run_parser.add_argument(
        '--allow-large',
        help='Permit the 5x5 QNN (26 qubits, very slow)',
        action='store_true',
    )
    run_parser.add_argument('--epochs', type=int, default=config.DEFAULT_EPOCHS)
    run_parser.add_argument('--batch-size', type=int, default=config.DEFAULT_BATCH_SIZE)
    run_parser.add_argument('--lr', help='Learning rate', type=float, default=config.DEFAULT_LEARNING_RATE)
    run_parser.add_argument(
        '--optimizer', choices=[o.value for o in OptimizerKind], default=OptimizerKind.plain.value
    )
    run_parser.add_argument(
        '--grad',
        help='Gradient engine: analytic, fd or hadamard:SHOTS. Default is analytic',
        type=str,
        default=GradEngine.analytic.value,
    )
    run_parser.add_argument(
        '--labels',
        help='The two digits to separate, first maps to +1. Default is 3,6',
        type=parse_labels,
        default=config.DEFAULT_LABELS,
    )
    run_parser.add_argument('--threshold', type=float, default=config.DEFAULT_THRESHOLD)
    run_parser.add_argument(
        '--no-dedup',
        help='Keep contradictory training samples',
        action='store_true',
    )
    run_parser.add_argument('--seed', type=int, default=config.DEFAULT_SEED)
    run_parser.add_argument(
        '--observable',
        help='Readout observable, Z or Y. Default is Z',
        choices=['Z', 'Y'],
        default='Z',
    )
    run_parser.add_argument('--data', help='Directory holding the MNIST IDX files', type=str, required=True)
    run_parser.add_argument('--out', help='Results directory', type=str, default=config.OUTPUT_DIR)
    run_parser.set_defaults(handler=run_single)

    sweep_parser = commands.add_parser('sweep', parents=[common], help='Run a grid of configurations')
    sweep_parser.add_argument(
        '--grid',
        help='"default" for the built-in grid or a path to a YAML grid file',
        type=str,
        default='default',
    )
    sweep_parser.add_argument('--data', help='Directory holding the MNIST IDX files', type=str, required=True)
    sweep_parser.add_argument('--out', help='Results directory', type=str, default=config.OUTPUT_DIR)
    sweep_parser.add_argument('--seeds', help='Comma-separated seeds, e.g. 1,2,3', type=parse_seeds)
    sweep_parser.add_argument('--workers', help='Parallel run processes', type=int, default=1)
    sweep_parser.set_defaults(handler=run_sweep)

    report_parser = commands.add_parser('report', parents=[common], help='Rebuild tables from results')
    report_parser.add_argument('--in', dest='in_dir', help='Results directory to read', type=str, required=True)
    report_parser.add_argument('--out', help='Directory for the report files', type=str, required=True)
    report_parser.set_defaults(handler=run_report)
    return argparser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.handler(args)
    except (QnnBenchError, ValidationError) as e:
        logging.error(describe_error(e))
        return exit_code_for(e)


def run():
    sys.exit(main())
