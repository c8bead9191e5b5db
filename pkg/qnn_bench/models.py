from enum import Enum

from pydantic import PydanticValueError


# qnn-bench exceptions
class QnnBenchError(Exception):
    """Base class for every error raised by qnn-bench."""


class InvalidArgumentError(QnnBenchError, ValueError):
    pass


class InvalidStateError(QnnBenchError):
    pass


class DataNotFoundError(QnnBenchError, FileNotFoundError):
    pass


class CorruptDataError(QnnBenchError):
    def __init__(self, message: str, path: str, offset: int):
        super().__init__(f"{message} ({path} at byte offset {offset})")
        self.path = path
        self.offset = offset


class ReportIOError(QnnBenchError, OSError):
    pass


class RunFailure(QnnBenchError):
    """A run aborted inside one pipeline stage."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"run failed in stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause


# pydantic validation errors
class UnsupportedDimError(PydanticValueError):
    code = "unsupported_dim"
    msg_template = "{wrong_value} is not a supported input dimension"


class UnsupportedLabelError(PydanticValueError):
    code = "unsupported_label"
    msg_template = "{wrong_value} is not a binary label, expected +1 or -1"


class DegenerateLabelsError(PydanticValueError):
    code = "degenerate_labels"
    msg_template = "labels {wrong_value} must be two distinct digits between 0 and 9"


class GradEngineSpecError(PydanticValueError):
    code = "grad_engine_spec"
    msg_template = "{wrong_value} is not a gradient engine, expected analytic, fd or hadamard:SHOTS"


class GateArityError(PydanticValueError):
    code = "gate_arity"
    msg_template = "{kind} gate needs {expected} distinct target(s), got {wrong_value}"


class AmplitudeLengthError(PydanticValueError):
    code = "amplitude_length"
    msg_template = "expected {expected} amplitudes, got {wrong_value}"


# qnn-bench enums
class PauliKind(str, Enum):
    X = "X"
    Y = "Y"
    Z = "Z"


class GateKind(str, Enum):
    X = "X"
    H = "H"
    Z = "Z"
    PHASE = "PHASE"
    EXP_PAULI_PAIR = "EXP_PAULI_PAIR"


class ModelKind(str, Enum):
    qnn = "qnn"
    fair = "fair"


class OptimizerKind(str, Enum):
    plain = "plain"
    paper = "paper"


class GradEngine(str, Enum):
    analytic = "analytic"
    hadamard_test = "hadamard"
    finite_diff = "fd"


class StepFlag(str, Enum):
    vanishing_gradient = "vanishing-gradient"


class Stage(str, Enum):
    data = "data"
    train = "train"


def describe_error(error: Exception) -> str:
    if isinstance(error, RunFailure):
        return f"{error.stage}: {error.cause.__class__.__name__}: {error.cause}"
    return f"{error.__class__.__name__}: {error}"
