from typing import Sequence

import numpy as np
from pydantic import BaseModel, confloat, conint

from .models import InvalidArgumentError


class EpochMetrics(BaseModel):
    epoch: conint(ge=1)
    train_loss: float
    test_accuracy: confloat(ge=0.0, le=1.0)
    wall_time: confloat(ge=0.0) = 0.0


def accuracy(outputs: Sequence[float], labels: Sequence[int]) -> float:
    """Fraction of outputs whose sign equals the ±1 label; an output of exactly 0 is wrong."""
    outputs = np.asarray(outputs, dtype=np.float64)
    labels = np.asarray(labels)
    if outputs.size == 0:
        raise InvalidArgumentError("accuracy of an empty prediction set is undefined")
    if outputs.shape != labels.shape:
        raise InvalidArgumentError(f"{outputs.size} outputs but {labels.size} labels")
    return float(np.mean(np.sign(outputs) == labels))
