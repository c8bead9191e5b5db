"""Loss, gradient engines, update rules and superposition batches.

Every gradient engine returns d(loss)/dθ_k for loss = 1 - l·<O_readout>.
With U_k = exp(iθ_k Σ_k) and M_k the matrix element
<ψ|U† O U_L..U_{k+1} Σ_k U_k..U_1|ψ>, d<O>/dθ_k = -2·Im(M_k), hence
d(loss)/dθ_k = 2·l·Im(M_k).
"""
import logging
import math
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, root_validator, validator

from .circuit import (
    Circuit,
    ParamVector,
    apply_gate,
    check_shapes,
    default_readout,
    evaluate,
    model_expectation,
)
from .core.config import config
from .models import (
    GradEngine,
    InvalidArgumentError,
    PauliKind,
    StepFlag,
    UnsupportedLabelError,
)
from .statevec import (
    StateVector,
    apply_h,
    apply_pauli,
    apply_pauli_pair,
    expectation_pauli,
    inner_product,
    probability,
)

# d(loss)/dθ, one entry per circuit parameter
GradVector = np.ndarray

Seed = Union[int, np.random.SeedSequence]

_SQRT1_2 = 1 / math.sqrt(2)
_BASIS_TOLERANCE = 1e-12


class LabeledCircuitInput(BaseModel):
    input_state: StateVector
    label: int

    @validator("input_state")
    def is_basis_state(cls, v: StateVector):
        magnitudes = np.abs(v.amps)
        support = np.flatnonzero(magnitudes > _BASIS_TOLERANCE)
        if support.size != 1 or abs(magnitudes[support[0]] - 1.0) > _BASIS_TOLERANCE:
            raise ValueError("input state must be a computational basis state")
        return v

    @validator("label")
    def is_binary_label(cls, v: int):
        if v not in (1, -1):
            raise UnsupportedLabelError(wrong_value=v)
        return v

    @property
    def basis_index(self) -> int:
        return int(np.argmax(np.abs(self.input_state.amps)))


class SuperpositionBatch(BaseModel):
    plus_state: StateVector
    minus_state: StateVector

    @root_validator(skip_on_failure=True)
    def normalized_with_disjoint_support(cls, values):
        plus, minus = values["plus_state"], values["minus_state"]
        if plus.n_qubits != minus.n_qubits:
            raise ValueError("plus and minus states act on different qubit counts")
        for name in ("plus_state", "minus_state"):
            if abs(values[name].norm() - 1.0) > config.NORM_TOLERANCE:
                raise ValueError(f"{name} is not normalized")
        overlap = (np.abs(plus.amps) > _BASIS_TOLERANCE) & (np.abs(minus.amps) > _BASIS_TOLERANCE)
        if overlap.any():
            raise ValueError("plus and minus states share basis states")
        return values


class OptimizerStep(BaseModel):
    params: ParamVector
    flag: Optional[StepFlag] = None

    @property
    def skipped(self) -> bool:
        return self.flag is not None


def _resolve_readout(circuit: Circuit, readout: Optional[int]) -> int:
    return default_readout(circuit) if readout is None else readout


def init_params(n_params: int, seed: Seed) -> ParamVector:
    rng = np.random.default_rng(seed)
    return ParamVector(thetas=rng.uniform(0.0, 2 * math.pi, size=n_params))


def loss_single(
    circuit: Circuit,
    params: ParamVector,
    sample: LabeledCircuitInput,
    readout: Optional[int] = None,
    observable: PauliKind = PauliKind.Z,
) -> float:
    expectation = model_expectation(circuit, params, sample.input_state, readout, observable)
    return 1.0 - sample.label * expectation


def _adjoint_sweep(
    circuit: Circuit,
    params: ParamVector,
    sample: LabeledCircuitInput,
    readout: int,
    observable: PauliKind,
) -> Tuple[float, GradVector]:
    forward = evaluate(circuit, params, sample.input_state)
    expectation = expectation_pauli(forward, readout, observable)
    backward = apply_pauli(forward.clone(), readout, observable)
    grad = np.zeros(circuit.n_params)
    for gate in reversed(circuit.gates):
        if gate.is_parametrized:
            generated = apply_pauli_pair(forward.clone(), *gate.targets, gate.pauli)
            grad[gate.param_slot] += 2.0 * sample.label * inner_product(backward, generated).imag
        apply_gate(forward, gate, params.thetas, inverse=True)
        apply_gate(backward, gate, params.thetas, inverse=True)
    return 1.0 - sample.label * expectation, grad


def grad_analytic(
    circuit: Circuit,
    params: ParamVector,
    sample: LabeledCircuitInput,
    readout: Optional[int] = None,
    observable: PauliKind = PauliKind.Z,
) -> GradVector:
    """Exact gradient from one forward and one backward statevector pass."""
    _, grad = _adjoint_sweep(circuit, params, sample, _resolve_readout(circuit, readout), observable)
    return grad


def grad_finite_diff(
    circuit: Circuit,
    params: ParamVector,
    sample: LabeledCircuitInput,
    eps: float = config.FD_EPSILON,
    readout: Optional[int] = None,
    observable: PauliKind = PauliKind.Z,
) -> GradVector:
    if eps <= 0:
        raise InvalidArgumentError(f"finite-difference step must be positive, got {eps}")
    grad = np.zeros(circuit.n_params)
    for k in range(circuit.n_params):
        shifted = params.thetas.copy()
        shifted[k] += eps
        upper = loss_single(circuit, ParamVector(thetas=shifted), sample, readout, observable)
        shifted[k] -= 2 * eps
        lower = loss_single(circuit, ParamVector(thetas=shifted), sample, readout, observable)
        grad[k] = (upper - lower) / (2 * eps)
    return grad


def hadamard_test_p0(psi: StateVector, u_psi: StateVector) -> float:
    """Exact probability of reading 0 on the ancilla.

    The ancilla (qubit 0 of the enlarged register) starts in (|0>+|1>)/√2,
    i·U acts on the register when the ancilla is 1, then H hits the ancilla.
    P(0) = 1/2 - 1/2·Im<ψ|U|ψ>.
    """
    if psi.n_qubits != u_psi.n_qubits:
        raise InvalidArgumentError("branch states act on different qubit counts")
    amps = np.concatenate([psi.amps, 1j * u_psi.amps]) * _SQRT1_2
    register = StateVector(n_qubits=psi.n_qubits + 1, amps=amps)
    apply_h(register, 0)
    return probability(register, 0, 0)


def _generator_inserted_state(
    circuit: Circuit,
    thetas: np.ndarray,
    psi: StateVector,
    gate_index: int,
    readout: int,
    observable: PauliKind,
) -> StateVector:
    # U† O U_L..U_{j+1} Σ_j U_j..U_1 |ψ>
    state = psi.clone()
    for index, gate in enumerate(circuit.gates):
        apply_gate(state, gate, thetas)
        if index == gate_index:
            apply_pauli_pair(state, *gate.targets, gate.pauli)
    apply_pauli(state, readout, observable)
    for gate in reversed(circuit.gates):
        apply_gate(state, gate, thetas, inverse=True)
    return state


def grad_hadamard_test(
    circuit: Circuit,
    params: ParamVector,
    sample: LabeledCircuitInput,
    k: int,
    shots: int,
    rng_seed: Seed,
    readout: Optional[int] = None,
    observable: PauliKind = PauliKind.Z,
) -> float:
    """Estimate d(loss)/dθ_k from `shots` ancilla readouts per gate using slot k."""
    if shots < 1:
        raise InvalidArgumentError(f"shots must be at least 1, got {shots}")
    if not 0 <= k < circuit.n_params:
        raise InvalidArgumentError(f"parameter index {k} out of range for {circuit.n_params}")
    check_shapes(circuit, params, sample.input_state)
    readout = _resolve_readout(circuit, readout)
    rng = np.random.default_rng(rng_seed)
    estimate = 0.0
    for index, gate in enumerate(circuit.gates):
        if gate.param_slot != k:
            continue
        u_psi = _generator_inserted_state(
            circuit, params.thetas, sample.input_state, index, readout, observable
        )
        p0 = min(max(hadamard_test_p0(sample.input_state, u_psi), 0.0), 1.0)
        p0_hat = rng.binomial(shots, p0) / shots
        estimate += 2.0 * sample.label * (1.0 - 2.0 * p0_hat)
    return estimate


def batch_loss_and_gradient(
    circuit: Circuit,
    params: ParamVector,
    samples: Sequence[LabeledCircuitInput],
    engine: GradEngine = GradEngine.analytic,
    readout: Optional[int] = None,
    observable: PauliKind = PauliKind.Z,
    shots: Optional[int] = None,
    seed_sequence: Optional[np.random.SeedSequence] = None,
    eps: float = config.FD_EPSILON,
) -> Tuple[float, GradVector]:
    """Mean loss and mean gradient over a mini-batch, summed in sample order."""
    if not samples:
        raise InvalidArgumentError("cannot take the gradient of an empty batch")
    readout = _resolve_readout(circuit, readout)
    engine = GradEngine(engine)
    if engine == GradEngine.hadamard_test:
        if shots is None or seed_sequence is None:
            raise InvalidArgumentError("hadamard gradients need shots and a seed sequence")
        seeds = seed_sequence.spawn(len(samples) * circuit.n_params)
    total_loss = 0.0
    total_grad = np.zeros(circuit.n_params)
    for i, sample in enumerate(samples):
        if engine == GradEngine.analytic:
            loss, grad = _adjoint_sweep(circuit, params, sample, readout, observable)
        else:
            loss = loss_single(circuit, params, sample, readout, observable)
            if engine == GradEngine.finite_diff:
                grad = grad_finite_diff(circuit, params, sample, eps, readout, observable)
            else:
                grad = np.array([
                    grad_hadamard_test(
                        circuit, params, sample, k, shots,
                        seeds[i * circuit.n_params + k], readout, observable,
                    )
                    for k in range(circuit.n_params)
                ])
        total_loss += loss
        total_grad += grad
    return total_loss / len(samples), total_grad / len(samples)


def sgd_step_paper(
    params: ParamVector, grad: GradVector, loss: float, r: float
) -> OptimizerStep:
    """θ ← θ - r·(loss/|g|²)·g, skipped when |g|² is below the vanishing threshold."""
    if r <= 0:
        raise InvalidArgumentError(f"learning rate must be positive, got {r}")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.thetas.shape:
        raise InvalidArgumentError(f"gradient shape {grad.shape} != {params.thetas.shape}")
    norm_sq = float(np.dot(grad, grad))
    if norm_sq < config.VANISHING_GRADIENT_THRESHOLD:
        logging.warning("Skipping update: |g|^2 = %.3g is below threshold", norm_sq)
        return OptimizerStep(params=params, flag=StepFlag.vanishing_gradient)
    return OptimizerStep(params=ParamVector(thetas=params.thetas - r * (loss / norm_sq) * grad))


def sgd_step_plain(params: ParamVector, grad: GradVector, r: float) -> ParamVector:
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.thetas.shape:
        raise InvalidArgumentError(f"gradient shape {grad.shape} != {params.thetas.shape}")
    return ParamVector(thetas=params.thetas - r * grad)


def _class_state(samples: List[LabeledCircuitInput], label: int) -> StateVector:
    if not samples:
        raise InvalidArgumentError(f"superposition batch has no samples labelled {label:+d}")
    indices = [sample.basis_index for sample in samples]
    if len(set(indices)) != len(indices):
        raise InvalidArgumentError(f"duplicate basis states among samples labelled {label:+d}")
    n_qubits = samples[0].input_state.n_qubits
    amps = np.zeros(1 << n_qubits, dtype=np.complex128)
    amps[indices] = 1.0 / math.sqrt(len(indices))
    return StateVector(n_qubits=n_qubits, amps=amps)


def build_superposition_batch(samples: Sequence[LabeledCircuitInput]) -> SuperpositionBatch:
    if len({sample.input_state.n_qubits for sample in samples}) > 1:
        raise InvalidArgumentError("samples act on different qubit counts")
    plus = [sample for sample in samples if sample.label == 1]
    minus = [sample for sample in samples if sample.label == -1]
    return SuperpositionBatch(plus_state=_class_state(plus, 1), minus_state=_class_state(minus, -1))


def loss_batch(
    circuit: Circuit,
    params: ParamVector,
    batch: SuperpositionBatch,
    readout: Optional[int] = None,
    observable: PauliKind = PauliKind.Z,
) -> float:
    plus = model_expectation(circuit, params, batch.plus_state, readout, observable)
    minus = model_expectation(circuit, params, batch.minus_state, readout, observable)
    return 1.0 - 0.5 * (plus - minus)


def superposition_gap(
    circuit: Circuit,
    params: ParamVector,
    samples: Sequence[LabeledCircuitInput],
    readout: Optional[int] = None,
    observable: PauliKind = PauliKind.Z,
) -> float:
    """Superposition batch loss minus the same loss built from per-sample mean expectations.

    Zero whenever the circuit never mixes distinct data basis states (cross
    terms vanish), and under the Z readout when one class is the bit
    complement of the other (the two cross terms cancel). Nonzero in general.
    """
    batch = build_superposition_batch(samples)
    means = {}
    for label in (1, -1):
        expectations = [
            model_expectation(circuit, params, s.input_state, readout, observable)
            for s in samples if s.label == label
        ]
        means[label] = sum(expectations) / len(expectations)
    per_sample = 1.0 - 0.5 * (means[1] - means[-1])
    gap = loss_batch(circuit, params, batch, readout, observable) - per_sample
    logging.debug("Superposition batch gap over %d samples: %.3g", len(samples), gap)
    return gap
